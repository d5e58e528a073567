//! Discrete first-order system for the minimal `L^p` density and its
//! Levenberg-Marquardt solver with continuation in `p`.
//!
//! Unknowns are the potentials `Φ_i` sampled at the `m` cell centers of each
//! axis, stacked axis by axis. The residual stacks `n * m` marginal rows
//!
//! ```text
//! r[i*m + t] = m^-(n-1) * Σ_{cells with idx_i = t} ψ(Φ̄(cell)) w(cell) - g_i(t)
//! ```
//!
//! followed by `n - 1` gauge rows `(1/m) Σ_k Φ_i(x_k) ρ_i(x_k)` for `i >= 1`,
//! where `Φ̄ = (1/n) Σ_i Φ_i`, `ψ(s) = sign(s)|s|^(1/(p-1))`, and the cell
//! weight `w` and gauge weights `ρ_i` are identically one unless a reference
//! measure is supplied (see [`crate::finance`]).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis;
use crate::closed_form::l2_potentials;
use crate::discretization::{check_marginals, MarginalTable, Mesh};
use crate::error::{Error, Result};

/// Potentials `Φ_1..Φ_n` at the axis cell centers, with their exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSet {
    p: f64,
    phis: Vec<Vec<f64>>,
}

impl PotentialSet {
    pub fn new(p: f64, phis: Vec<Vec<f64>>) -> Result<Self> {
        check_exponent(p)?;
        if phis.len() < 2 {
            return Err(Error::DimensionTooSmall(phis.len()));
        }
        let m = phis[0].len();
        for phi in &phis {
            if phi.len() != m {
                return Err(Error::LengthMismatch {
                    what: "potential",
                    expected: m,
                    got: phi.len(),
                });
            }
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("potentials must be finite".into()));
            }
        }
        Ok(Self { p, phis })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.phis.len()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.phis[0].len()
    }

    pub fn phis(&self) -> &[Vec<f64>] {
        &self.phis
    }

    pub fn phi(&self, axis: usize) -> &[f64] {
        &self.phis[axis]
    }

    /// Same potentials relabelled with another exponent.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(p, self.phis.clone())
    }

    /// Adds `shift` to every entry of `Φ_axis`.
    pub fn shifted(&self, axis: usize, shift: f64) -> Self {
        let mut out = self.clone();
        out.phis[axis].iter_mut().for_each(|v| *v += shift);
        out
    }

    /// Full-grid table of `Φ̄ = (1/n) Σ_i Φ_i(ξ_i)`.
    pub fn phi_bar(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.check_mesh(mesh)?;
        let inv_n = 1.0 / self.dim() as f64;
        let mut out = vec![0.0; mesh.len()];
        mesh.for_each_cell(|flat, idx| {
            out[flat] = self.phis.iter().zip(idx).map(|(phi, &k)| phi[k]).sum::<f64>() * inv_n;
        });
        Ok(out)
    }

    /// Largest `|(1/m) Σ_k Φ_i(x_k)|` over `i >= 1`.
    pub fn gauge_inf(&self) -> f64 {
        let m = self.cells_per_axis() as f64;
        self.phis[1..]
            .iter()
            .map(|phi| (phi.iter().sum::<f64>() / m).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.dim() != mesh.dim() {
            return Err(Error::LengthMismatch {
                what: "potential count",
                expected: mesh.dim(),
                got: self.dim(),
            });
        }
        if self.cells_per_axis() != mesh.cells_per_axis() {
            return Err(Error::LengthMismatch {
                what: "potential",
                expected: mesh.cells_per_axis(),
                got: self.cells_per_axis(),
            });
        }
        Ok(())
    }

    fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim() * self.cells_per_axis(),
            self.phis.iter().flatten().copied(),
        )
    }

    fn from_flat(p: f64, x: &DVector<f64>, n: usize, m: usize) -> Self {
        let phis = (0..n).map(|i| x.rows(i * m, m).iter().copied().collect()).collect();
        Self { p, phis }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Smoothing of `|s|` near zero used for the main solve.
    pub epsilon: f64,
    /// Sup-norm threshold on marginal and gauge residuals.
    pub tol_residual: f64,
    /// Iteration cap per Levenberg-Marquardt run.
    pub max_iter: usize,
    pub damping_init: f64,
    pub damping_grow: f64,
    pub damping_shrink: f64,
    /// Largest continuation step in `p`.
    pub delta_p: f64,
    /// Decreasing smoothing values used to polish the solution; a trailing
    /// zero solves the unsmoothed system.
    pub polish: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            tol_residual: 1e-9,
            max_iter: 200,
            damping_init: 1e-3,
            damping_grow: 10.0,
            damping_shrink: 0.1,
            delta_p: 0.1,
            polish: vec![1e-10, 1e-12, 0.0],
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.tol_residual > 0.0 && self.tol_residual.is_finite()) {
            return bad("tol_residual must be positive");
        }
        if !(self.delta_p > 0.0 && self.delta_p.is_finite()) {
            return bad("delta_p must be positive");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be nonnegative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.damping_init > 0.0 && self.damping_grow > 1.0 && self.damping_shrink > 0.0 && self.damping_shrink < 1.0) {
            return bad("damping needs init > 0, grow > 1, 0 < shrink < 1");
        }
        let mut prev = self.epsilon;
        for &eps in &self.polish {
            if !(eps >= 0.0 && eps < prev) {
                return bad("polish schedule must strictly decrease from epsilon and stay nonnegative");
            }
            prev = eps;
        }
        Ok(())
    }
}

/// One step of a continuation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub p: f64,
    pub residual_inf: f64,
}

/// Outcome of a solve at one exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub potentials: PotentialSet,
    /// Sup-norm of the unsmoothed marginal residuals.
    pub residual_inf: f64,
    /// Sup-norm of the gauge residuals.
    pub gauge_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sharp lower bound `∫|Φ̄|^q` for the converged potentials.
    pub bound: f64,
    /// Smallest smoothing value the polish reached.
    pub epsilon: f64,
    pub continuation_path: Vec<PathPoint>,
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// Minimizer nonlinearity `sign(s)|s|^(1/(p-1))`, smoothed for `eps > 0` as
/// `s (s² + eps²)^((a-1)/2)` with `a = 1/(p-1)`.
pub fn psi(s: f64, p: f64, eps: f64) -> f64 {
    let a = 1.0 / (p - 1.0);
    if eps == 0.0 {
        if s == 0.0 {
            0.0
        } else {
            s.signum() * s.abs().powf(a)
        }
    } else {
        s * (s * s + eps * eps).powf(0.5 * (a - 1.0))
    }
}

/// Derivative of [`psi`] in `s`.
pub fn psi_prime(s: f64, p: f64, eps: f64) -> Result<f64> {
    let a = 1.0 / (p - 1.0);
    if eps == 0.0 {
        if s != 0.0 {
            Ok(a * s.abs().powf(a - 1.0))
        } else if p < 2.0 {
            Ok(0.0)
        } else if p == 2.0 {
            Ok(1.0)
        } else {
            Err(Error::SingularDerivative { p })
        }
    } else {
        let r2 = s * s + eps * eps;
        Ok(r2.powf(0.5 * (a - 3.0)) * (a * s * s + eps * eps))
    }
}

/// Discretized system, optionally under a reference measure.
pub(crate) struct System<'a> {
    pub mesh: &'a Mesh,
    pub marginals: &'a [MarginalTable],
    pub cell_weights: Option<&'a [f64]>,
    pub gauge_weights: Option<&'a [Vec<f64>]>,
}

impl<'a> System<'a> {
    pub fn new(mesh: &'a Mesh, marginals: &'a [MarginalTable]) -> Result<Self> {
        check_marginals(marginals, mesh)?;
        Ok(Self {
            mesh,
            marginals,
            cell_weights: None,
            gauge_weights: None,
        })
    }

    fn rows(&self) -> usize {
        let n = self.mesh.dim();
        n * self.mesh.cells_per_axis() + n - 1
    }

    fn cols(&self) -> usize {
        self.mesh.dim() * self.mesh.cells_per_axis()
    }

    /// Residual vector and, if requested, its Jacobian.
    pub fn evaluate(
        &self,
        pot: &PotentialSet,
        eps: f64,
        with_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        pot.check_mesh(self.mesh)?;
        let n = self.mesh.dim();
        let m = self.mesh.cells_per_axis();
        let p = pot.p();
        let inv_n = 1.0 / n as f64;
        let mut r = DVector::zeros(self.rows());
        let mut jac = with_jacobian.then(|| DMatrix::zeros(self.rows(), self.cols()));
        let mut failure = None;
        self.mesh.for_each_cell(|flat, idx| {
            let s = pot.phis.iter().zip(idx).map(|(phi, &k)| phi[k]).sum::<f64>() * inv_n;
            let w = self.cell_weights.map_or(1.0, |cw| cw[flat]);
            let v = psi(s, p, eps) * w;
            for (i, &t) in idx.iter().enumerate() {
                r[i * m + t] += v;
            }
            if let Some(jac) = jac.as_mut() {
                let d = match psi_prime(s, p, eps) {
                    Ok(d) => d * w * inv_n,
                    Err(e) => {
                        failure.get_or_insert(e);
                        return;
                    }
                };
                for (i, &t) in idx.iter().enumerate() {
                    for (j, &k) in idx.iter().enumerate() {
                        jac[(i * m + t, j * m + k)] += d;
                    }
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let scale = m as f64 / self.mesh.len() as f64;
        for (i, g) in self.marginals.iter().enumerate() {
            for t in 0..m {
                r[i * m + t] = r[i * m + t] * scale - g.values()[t];
            }
        }
        let inv_m = 1.0 / m as f64;
        for i in 1..n {
            let row = n * m + i - 1;
            let rho = self.gauge_weights.map(|gw| gw[i].as_slice());
            r[row] = (0..m)
                .map(|k| pot.phis[i][k] * rho.map_or(1.0, |w| w[k]))
                .sum::<f64>()
                * inv_m;
            if let Some(jac) = jac.as_mut() {
                for k in 0..m {
                    jac[(row, i * m + k)] = rho.map_or(1.0, |w| w[k]) * inv_m;
                }
            }
        }
        if let Some(jac) = jac.as_mut() {
            jac.rows_mut(0, n * m).scale_mut(scale);
        }
        Ok((r, jac))
    }

    /// Sup-norms of the marginal block and the gauge block.
    pub fn residual_norms(&self, pot: &PotentialSet, eps: f64) -> Result<(f64, f64)> {
        let (r, _) = self.evaluate(pot, eps, false)?;
        Ok(split_norms(&r, self.mesh))
    }

    fn levenberg_marquardt(
        &self,
        seed: &PotentialSet,
        eps: f64,
        config: &SolverConfig,
    ) -> Result<(PotentialSet, usize)> {
        let n = self.mesh.dim();
        let m = self.mesh.cells_per_axis();
        let p = seed.p();
        let target = config.tol_residual * 1e-3;
        let mut current = seed.clone();
        let (mut r, jac) = self.evaluate(&current, eps, true)?;
        let mut jac = jac.expect("jacobian requested");
        let mut cost = r.norm_squared();
        let mut lambda = config.damping_init;
        let mut iterations = 0;
        while iterations < config.max_iter && r.amax() > target {
            iterations += 1;
            let jt = jac.transpose();
            let normal = &jt * &jac;
            let grad = &jt * &r;
            let diag_floor = normal.diagonal().max() * 1e-12;
            let mut accepted = false;
            while lambda < 1e16 {
                let mut damped = normal.clone();
                for k in 0..damped.nrows() {
                    damped[(k, k)] += lambda * normal[(k, k)].max(diag_floor);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= config.damping_grow;
                    continue;
                };
                let step = chol.solve(&(-&grad));
                let x_new = current.flatten() + step;
                let trial = PotentialSet::from_flat(p, &x_new, n, m);
                let (r_new, _) = self.evaluate(&trial, eps, false)?;
                let cost_new = r_new.norm_squared();
                if cost_new.is_finite() && cost_new < cost {
                    current = trial;
                    let (r_acc, jac_acc) = self.evaluate(&current, eps, true)?;
                    r = r_acc;
                    jac = jac_acc.expect("jacobian requested");
                    cost = cost_new;
                    lambda = (lambda * config.damping_shrink).max(1e-15);
                    accepted = true;
                    break;
                }
                lambda *= config.damping_grow;
            }
            if !accepted {
                break;
            }
        }
        Ok((current, iterations))
    }

    /// Solves at the seed's exponent, then polishes with decreasing smoothing.
    pub fn solve(&self, seed: &PotentialSet, config: &SolverConfig) -> Result<SolveReport> {
        config.validate()?;
        seed.check_mesh(self.mesh)?;
        let (mut current, mut iterations) = self.levenberg_marquardt(seed, config.epsilon, config)?;
        let mut reached = config.epsilon;
        for &eps in &config.polish {
            match self.levenberg_marquardt(&current, eps, config) {
                Ok((polished, its)) => {
                    current = polished;
                    iterations += its;
                    reached = eps;
                }
                Err(Error::SingularDerivative { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        self.report(current, iterations, reached, config)
    }

    fn report(
        &self,
        potentials: PotentialSet,
        iterations: usize,
        epsilon: f64,
        config: &SolverConfig,
    ) -> Result<SolveReport> {
        let (residual_inf, gauge_inf) = self.residual_norms(&potentials, 0.0)?;
        let converged = residual_inf <= config.tol_residual && gauge_inf <= config.tol_residual;
        let bound = analysis::bound_value(&potentials, self.mesh, self.cell_weights)?;
        Ok(SolveReport {
            potentials,
            residual_inf,
            gauge_inf,
            iterations,
            converged,
            bound,
            epsilon,
            continuation_path: Vec::new(),
        })
    }

    /// Continuation from `start` (a solution at `p = 2`) out to every target.
    pub fn sweep(
        &self,
        start: SolveReport,
        targets: &[f64],
        config: &SolverConfig,
    ) -> Result<Vec<SolveReport>> {
        config.validate()?;
        for &t in targets {
            check_exponent(t)?;
        }
        let mut below: Vec<f64> = targets.iter().copied().filter(|&t| t < 2.0).collect();
        let mut above: Vec<f64> = targets.iter().copied().filter(|&t| t > 2.0).collect();
        below.sort_by(|a, b| b.total_cmp(a));
        above.sort_by(|a, b| a.total_cmp(b));
        below.dedup();
        above.dedup();

        let mut solved: Vec<(f64, SolveReport)> = vec![(2.0, start.clone())];
        for branch in [below, above] {
            let mut current = start.clone();
            let mut path = Vec::new();
            for target in branch {
                let from = current.potentials.p();
                let steps = (((target - from).abs() / config.delta_p) - 1e-9).ceil().max(1.0) as usize;
                for k in 1..=steps {
                    let p = if k == steps {
                        target
                    } else {
                        from + (target - from) * k as f64 / steps as f64
                    };
                    let seed = current.potentials.with_p(p)?;
                    current = self.solve(&seed, config)?;
                    path.push(PathPoint {
                        p,
                        residual_inf: current.residual_inf,
                    });
                }
                let mut report = current.clone();
                report.continuation_path = path.clone();
                solved.push((target, report));
            }
        }
        Ok(targets
            .iter()
            .map(|t| {
                solved
                    .iter()
                    .find(|(p, _)| p.to_bits() == t.to_bits())
                    .map(|(_, r)| r.clone())
                    .expect("every target was solved")
            })
            .collect())
    }
}

fn split_norms(r: &DVector<f64>, mesh: &Mesh) -> (f64, f64) {
    let nm = mesh.dim() * mesh.cells_per_axis();
    let marg = r.rows(0, nm).amax();
    let gauge = if r.len() > nm { r.rows(nm, r.len() - nm).amax() } else { 0.0 };
    (marg, gauge)
}

/// Stacked residual: `n * m` marginal rows followed by `n - 1` gauge rows.
pub fn residual(
    potentials: &PotentialSet,
    marginals: &[MarginalTable],
    mesh: &Mesh,
    eps: f64,
) -> Result<Vec<f64>> {
    let (r, _) = System::new(mesh, marginals)?.evaluate(potentials, eps, false)?;
    Ok(r.iter().copied().collect())
}

/// Analytic Jacobian of [`residual`] with respect to the stacked potentials.
pub fn jacobian(
    potentials: &PotentialSet,
    marginals: &[MarginalTable],
    mesh: &Mesh,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let (_, jac) = System::new(mesh, marginals)?.evaluate(potentials, eps, true)?;
    Ok(jac.expect("jacobian requested"))
}

/// Sup-norms `(marginal block, gauge block)` of the unsmoothed residual.
pub fn residual_norms(
    potentials: &PotentialSet,
    marginals: &[MarginalTable],
    mesh: &Mesh,
) -> Result<(f64, f64)> {
    System::new(mesh, marginals)?.residual_norms(potentials, 0.0)
}

/// Solves the discrete system at exponent `p` starting from `seed`.
pub fn solve_at_p(
    marginals: &[MarginalTable],
    mesh: &Mesh,
    p: f64,
    seed: &PotentialSet,
    config: &SolverConfig,
) -> Result<SolveReport> {
    check_exponent(p)?;
    System::new(mesh, marginals)?.solve(&seed.with_p(p)?, config)
}

/// Solves at every target exponent by continuation from the `p = 2` closed
/// form, stepping at most `delta_p` and reseeding from the previous step.
/// Reports come back in the order of `p_targets`.
pub fn continuation_sweep(
    marginals: &[MarginalTable],
    mesh: &Mesh,
    p_targets: &[f64],
    config: &SolverConfig,
) -> Result<Vec<SolveReport>> {
    let system = System::new(mesh, marginals)?;
    let seed = l2_potentials(marginals)?.potentials;
    let start = system.solve(&seed, config)?;
    system.sweep(start, p_targets, config)
}
