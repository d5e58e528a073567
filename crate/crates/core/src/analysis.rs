//! Sharp-bound evaluation and verification of the minimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discretization::{additive_part, check_marginals, marginal_sums, MarginalTable, Mesh};
use crate::error::{Error, Result};
use crate::solver::{check_exponent, psi, PotentialSet};

/// Candidate joints must reproduce the marginals to this sup-norm.
pub const CANDIDATE_MARGINAL_TOLERANCE: f64 = 1e-8;
/// Smallest admissible duality gap.
pub const DUALITY_GAP_TOLERANCE: f64 = 1e-9;
/// Largest admissible orthogonality pairing.
pub const PAIRING_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_AMPLITUDE: f64 = 1e-3;

/// Conjugate exponent `p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// Minimal density `h*(cell) = ψ(Φ̄(cell))` on the full grid.
pub fn minimal_density(potentials: &PotentialSet, mesh: &Mesh) -> Result<Vec<f64>> {
    let p = potentials.p();
    Ok(potentials
        .phi_bar(mesh)?
        .into_iter()
        .map(|s| psi(s, p, 0.0))
        .collect())
}

/// Discrete `∫|g|^p`, i.e. `m^-n Σ |g|^p`.
pub fn norm_pow(table: &[f64], p: f64, mesh: &Mesh) -> f64 {
    table.iter().map(|v| v.abs().powf(p)).sum::<f64>() * mesh.cell_weight()
}

pub(crate) fn bound_value(
    potentials: &PotentialSet,
    mesh: &Mesh,
    cell_weights: Option<&[f64]>,
) -> Result<f64> {
    let q = conjugate(potentials.p());
    let phi_bar = potentials.phi_bar(mesh)?;
    let sum: f64 = match cell_weights {
        None => phi_bar.iter().map(|s| s.abs().powf(q)).sum(),
        Some(w) => phi_bar.iter().zip(w).map(|(s, w)| s.abs().powf(q) * w).sum(),
    };
    Ok(sum * mesh.cell_weight())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub p: f64,
    pub q: f64,
    /// `∫|Φ̄|^q`.
    pub bound: f64,
    /// `∫|h*|^p`.
    pub h_norm_p: f64,
    /// `(∫|Φ̄|^q)^(1/q)`.
    pub phi_bar_norm_q: f64,
    /// Largest cellwise relative gap between `|h*|^p` and `|Φ̄|^q`.
    pub attainment_gap: f64,
}

pub fn sharp_bound(potentials: &PotentialSet, mesh: &Mesh) -> Result<BoundReport> {
    let p = potentials.p();
    check_exponent(p)?;
    let q = conjugate(p);
    let phi_bar = potentials.phi_bar(mesh)?;
    let mut attainment_gap = 0.0f64;
    let mut bound = 0.0;
    let mut h_norm = 0.0;
    for &s in &phi_bar {
        let lhs = psi(s, p, 0.0).abs().powf(p);
        let rhs = s.abs().powf(q);
        if rhs > 0.0 {
            attainment_gap = attainment_gap.max((lhs - rhs).abs() / rhs);
        }
        bound += rhs;
        h_norm += lhs;
    }
    bound *= mesh.cell_weight();
    h_norm *= mesh.cell_weight();
    Ok(BoundReport {
        p,
        q,
        bound,
        h_norm_p: h_norm,
        phi_bar_norm_q: bound.powf(1.0 / q),
        attainment_gap,
    })
}

/// Comparison of the sharp bound with a feasible candidate joint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRecord {
    pub p: f64,
    pub bound: f64,
    /// `∫|g|^p` of the candidate.
    pub candidate_norm_pow: f64,
    /// `candidate_norm_pow - bound`.
    pub gap: f64,
    /// `‖Φ̄‖_q`, reported only.
    pub phi_bar_norm_q: f64,
    /// `‖g‖_p`, reported only.
    pub candidate_norm_p: f64,
    pub holds: bool,
}

pub fn duality_check(
    potentials: &PotentialSet,
    marginals: &[MarginalTable],
    candidate: &[f64],
    mesh: &Mesh,
) -> Result<DualityRecord> {
    check_marginals(marginals, mesh)?;
    mesh.check_table(candidate)?;
    for (axis, g) in marginals.iter().enumerate() {
        let got = marginal_sums(candidate, axis, mesh);
        let deviation = got
            .iter()
            .zip(g.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if deviation > CANDIDATE_MARGINAL_TOLERANCE {
            return Err(Error::CandidateMarginals { axis, deviation });
        }
    }
    let p = potentials.p();
    let report = sharp_bound(potentials, mesh)?;
    let candidate_norm_pow = norm_pow(candidate, p, mesh);
    let gap = candidate_norm_pow - report.bound;
    Ok(DualityRecord {
        p,
        bound: report.bound,
        candidate_norm_pow,
        gap,
        phi_bar_norm_q: report.phi_bar_norm_q,
        candidate_norm_p: candidate_norm_pow.powf(1.0 / p),
        holds: gap >= -DUALITY_GAP_TOLERANCE,
    })
}

/// Product joint `Π_i g_i(ξ_i) / c^(n-1)`, which has marginals `g_i` when
/// the common mass `c` is nonzero.
pub fn product_joint(marginals: &[MarginalTable], mesh: &Mesh) -> Result<Vec<f64>> {
    let c = check_marginals(marginals, mesh)?;
    if c == 0.0 {
        return Err(Error::InvalidMarginal("product joint needs nonzero mass".into()));
    }
    let scale = c.powi(1 - mesh.dim() as i32);
    let mut out = vec![0.0; mesh.len()];
    mesh.for_each_cell(|flat, idx| {
        out[flat] = marginals
            .iter()
            .zip(idx)
            .map(|(g, &k)| g.values()[k])
            .product::<f64>()
            * scale;
    });
    Ok(out)
}

/// Full-grid table whose every axis marginal vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    values: Vec<f64>,
}

impl Perturbation {
    /// Projects `phi` onto the vanishing-marginals space:
    /// `φ - Σ_i lift(φ_i) + (n-1) mean(φ)`.
    pub fn project(phi: &[f64], mesh: &Mesh) -> Result<Self> {
        let additive = additive_part(phi, mesh)?;
        let values = phi.iter().zip(&additive).map(|(a, b)| a - b).collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest absolute marginal entry over all axes.
    pub fn marginal_inf(&self, mesh: &Mesh) -> f64 {
        (0..mesh.dim())
            .flat_map(|i| marginal_sums(&self.values, i, mesh))
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Random element of the vanishing-marginals space with sup-norm `amplitude`.
pub fn random_perturbation(mesh: &Mesh, seed: u64, amplitude: f64) -> Result<Perturbation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut pert = Perturbation::project(&raw, mesh)?;
    let sup = pert.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if sup > 0.0 {
        let scale = amplitude / sup;
        pert.values.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(pert)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub trials: usize,
    pub amplitude: f64,
    /// Smallest `∫|h+φ|^p - ∫|h|^p` over all trials and both signs.
    pub min_drop: f64,
    /// Largest `|∫ sign(h)|h|^(p-1) φ|`.
    pub max_pairing: f64,
}

impl ProbeReport {
    pub fn passes(&self, drop_tolerance: f64) -> bool {
        self.min_drop >= -drop_tolerance && self.max_pairing <= PAIRING_TOLERANCE
    }
}

/// Perturbs `h` along `trials` seeded vanishing-marginal directions.
/// Trial `k` uses seed `seed + k`.
pub fn probe_table(
    h: &[f64],
    p: f64,
    mesh: &Mesh,
    trials: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ProbeReport> {
    check_exponent(p)?;
    mesh.check_table(h)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("probe needs at least one trial".into()));
    }
    let dual: Vec<f64> = h.iter().map(|v| v.signum() * v.abs().powf(p - 1.0)).collect();
    let mut min_drop = f64::INFINITY;
    let mut max_pairing = 0.0f64;
    for k in 0..trials {
        let pert = random_perturbation(mesh, seed.wrapping_add(k as u64), amplitude)?;
        let phi = pert.values();
        let pairing: f64 = dual.iter().zip(phi).map(|(d, f)| d * f).sum::<f64>() * mesh.cell_weight();
        max_pairing = max_pairing.max(pairing.abs());
        for sign in [1.0, -1.0] {
            let drop: f64 = h
                .iter()
                .zip(phi)
                .map(|(a, f)| (a + sign * f).abs().powf(p) - a.abs().powf(p))
                .sum::<f64>()
                * mesh.cell_weight();
            min_drop = min_drop.min(drop);
        }
    }
    Ok(ProbeReport {
        trials,
        amplitude,
        min_drop,
        max_pairing,
    })
}

/// Runs [`probe_table`] around the minimal density of `potentials`.
pub fn minimality_probe(
    potentials: &PotentialSet,
    mesh: &Mesh,
    trials: usize,
    amplitude: f64,
    seed: u64,
) -> Result<ProbeReport> {
    let h = minimal_density(potentials, mesh)?;
    probe_table(&h, potentials.p(), mesh, trials, amplitude, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{l2_bound, l2_potentials};
    use crate::discretization::{common_mass, sample_marginal, MarginalSpec};
    use approx::assert_relative_eq;

    fn gaussian_pair(m: usize) -> (Mesh, Vec<MarginalTable>) {
        let mesh = Mesh::new(2, m).unwrap();
        let g = vec![sample_marginal(&MarginalSpec::gaussian(0.5, 0.1), &mesh).unwrap(); 2];
        (mesh, g)
    }

    #[test]
    fn uniform_minimal_density_is_one() {
        let mesh = Mesh::new(3, 4).unwrap();
        let pot = PotentialSet::new(3.0, vec![vec![3.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let h = minimal_density(&pot, &mesh).unwrap();
        assert!(h.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let b = sharp_bound(&pot, &mesh).unwrap();
        assert_relative_eq!(b.bound, 1.0, epsilon = 1e-14);
        assert_eq!(b.q, 1.5);
    }

    #[test]
    fn l2_minimal_density_is_additive_table() {
        let (mesh, g) = gaussian_pair(12);
        let sol = l2_potentials(&g).unwrap();
        let h = minimal_density(&sol.potentials, &mesh).unwrap();
        mesh.for_each_cell(|flat, idx| {
            let expected = g[0].values()[idx[0]] + g[1].values()[idx[1]] - 1.0;
            assert!((h[flat] - expected).abs() < 1e-14);
        });
        let b = sharp_bound(&sol.potentials, &mesh).unwrap();
        assert!((b.bound - sol.bound).abs() < 1e-10);
        assert!((norm_pow(&h, 2.0, &mesh) - l2_bound(&g, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        let mesh = Mesh::new(2, 2).unwrap();
        let pot = PotentialSet::new(3.0, vec![vec![0.0, 2.0], vec![-1.0, 1.0]]).unwrap();
        let h = minimal_density(&pot, &mesh).unwrap();
        let phi_bar: [f64; 4] = [-0.5, 0.5, 0.5, 1.5];
        for (got, s) in h.iter().zip(phi_bar) {
            let brute = if s < 0.0 { -(-s).sqrt() } else { s.sqrt() };
            assert_relative_eq!(*got, brute, epsilon = 1e-15);
        }
    }

    #[test]
    fn attainment_identity_holds_cellwise() {
        let mesh = Mesh::new(2, 5).unwrap();
        for p in [1.3, 2.0, 2.7, 4.5] {
            let phis = vec![
                vec![-1.0, 0.3, 0.0, 2.5, 0.7],
                vec![0.2, -0.4, 1.1, 0.0, -2.0],
            ];
            let pot = PotentialSet::new(p, phis).unwrap();
            let b = sharp_bound(&pot, &mesh).unwrap();
            assert!(b.attainment_gap < 1e-13);
            assert!((b.h_norm_p - b.bound).abs() <= 1e-12 * b.bound);
        }
    }

    #[test]
    fn duality_with_self_and_product() {
        let (mesh, g) = gaussian_pair(10);
        let sol = l2_potentials(&g).unwrap();
        let h = minimal_density(&sol.potentials, &mesh).unwrap();
        let rec = duality_check(&sol.potentials, &g, &h, &mesh).unwrap();
        assert!(rec.gap.abs() < 1e-12);
        let prod = product_joint(&g, &mesh).unwrap();
        let rec = duality_check(&sol.potentials, &g, &prod, &mesh).unwrap();
        let a: Vec<f64> = g
            .iter()
            .map(|t| t.values().iter().map(|v| v * v).sum::<f64>() / 10.0)
            .collect();
        let expected = a[0] * a[1] - a[0] - a[1] + 1.0;
        assert_relative_eq!(rec.gap, expected, epsilon = 1e-12);
        assert!(rec.holds);
        assert!(rec.gap > 0.0);
    }

    #[test]
    fn duality_rejects_infeasible_candidate() {
        let (mesh, g) = gaussian_pair(6);
        let sol = l2_potentials(&g).unwrap();
        let ones = vec![1.0; mesh.len()];
        assert!(matches!(
            duality_check(&sol.potentials, &g, &ones, &mesh),
            Err(Error::CandidateMarginals { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let mesh = Mesh::new(2, 2).unwrap();
        let pert = Perturbation::project(&[1.0, 0.0, 0.0, 0.0], &mesh).unwrap();
        assert_eq!(pert.values(), &[0.25, -0.25, -0.25, 0.25]);
        let mesh = Mesh::new(3, 3).unwrap();
        let pert = Perturbation::project(&vec![4.2; mesh.len()], &mesh).unwrap();
        assert!(pert.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn random_perturbation_has_vanishing_marginals() {
        for (n, m) in [(2, 7), (3, 4), (4, 3)] {
            let mesh = Mesh::new(n, m).unwrap();
            for seed in 0..5 {
                let pert = random_perturbation(&mesh, seed, 0.5).unwrap();
                assert!(pert.marginal_inf(&mesh) <= 1e-12);
                let sup = pert.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert_relative_eq!(sup, 0.5, epsilon = 1e-15);
            }
        }
        let mesh = Mesh::new(2, 5).unwrap();
        assert_eq!(
            random_perturbation(&mesh, 9, 1.0).unwrap(),
            random_perturbation(&mesh, 9, 1.0).unwrap()
        );
    }

    #[test]
    fn probe_closed_form_is_minimal() {
        let (mesh, g) = gaussian_pair(10);
        let sol = l2_potentials(&g).unwrap();
        let probe = minimality_probe(&sol.potentials, &mesh, 100, 1e-3, 7).unwrap();
        assert!(probe.min_drop >= -1e-12);
        assert!(probe.max_pairing <= 1e-12);
    }

    #[test]
    fn probe_detects_non_minimal_feasible_table() {
        let (mesh, g) = gaussian_pair(10);
        let prod = product_joint(&g, &mesh).unwrap();
        assert!((common_mass(&g).unwrap() - 1.0).abs() < 1e-15);
        let probe = probe_table(&prod, 3.0, &mesh, 20, 1e-3, 1).unwrap();
        assert!(probe.min_drop < -1e-7, "{probe:?}");
        assert!(!probe.passes(1e-9));
    }
}
