//! Reference-measure variant of the first-order system and the static
//! replication of additive payoff components by bonds, forwards, puts and
//! calls.

use serde::Serialize;

use crate::closed_form::l2_potentials;
use crate::discretization::{check_marginals, marginal_sums, MarginalTable, Mesh, MASS_TOLERANCE};
use crate::error::{Error, Result};
use crate::solver::{check_exponent, SolveReport, SolverConfig, System};

/// Reference density on the hypercube.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// `w(ξ) = Π_i w_i(ξ_i)`; each factor positive with unit mass.
    Product(Vec<MarginalTable>),
    /// Full-grid table in flat order; `n <= 3` only.
    Tensor(Vec<f64>),
}

/// Cell weights and per-axis gauge weights derived from a [`WeightSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedWeights {
    pub cells: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

impl WeightSpec {
    pub fn resolve(&self, mesh: &Mesh) -> Result<ResolvedWeights> {
        let cells = match self {
            WeightSpec::Product(factors) => {
                if factors.len() != mesh.dim() {
                    return Err(Error::InvalidWeights(format!(
                        "expected {} factors, got {}",
                        mesh.dim(),
                        factors.len()
                    )));
                }
                for (axis, f) in factors.iter().enumerate() {
                    if f.len() != mesh.cells_per_axis() {
                        return Err(Error::InvalidWeights(format!(
                            "factor {axis} has {} values, mesh has {} cells per axis",
                            f.len(),
                            mesh.cells_per_axis()
                        )));
                    }
                    if (f.mass() - 1.0).abs() > MASS_TOLERANCE {
                        return Err(Error::InvalidWeights(format!(
                            "factor {axis} has mass {}, expected 1",
                            f.mass()
                        )));
                    }
                }
                let mut cells = vec![0.0; mesh.len()];
                mesh.for_each_cell(|flat, idx| {
                    cells[flat] = factors.iter().zip(idx).map(|(f, &k)| f.values()[k]).product();
                });
                cells
            }
            WeightSpec::Tensor(values) => {
                if mesh.dim() > 3 {
                    return Err(Error::InvalidWeights("tensor weights need n <= 3".into()));
                }
                mesh.check_table(values)?;
                values.clone()
            }
        };
        if let Some(bad) = cells.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidWeights(format!("weights must be positive, found {bad}")));
        }
        let axes = (0..mesh.dim()).map(|i| marginal_sums(&cells, i, mesh)).collect();
        Ok(ResolvedWeights { cells, axes })
    }
}

/// Solves the system under the reference measure `weights` at exponent `p`,
/// by continuation from `p = 2` seeded with the unweighted closed form.
pub fn solve_weighted(
    marginals: &[MarginalTable],
    mesh: &Mesh,
    weights: &WeightSpec,
    p: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    check_exponent(p)?;
    check_marginals(marginals, mesh)?;
    let resolved = weights.resolve(mesh)?;
    let system = System {
        mesh,
        marginals,
        cell_weights: Some(&resolved.cells),
        gauge_weights: Some(&resolved.axes),
    };
    let seed = l2_potentials(marginals)?.potentials;
    let start = system.solve(&seed, config)?;
    Ok(system
        .sweep(start, &[p], config)?
        .pop()
        .expect("one report per target"))
}

/// One option position in a static replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionLeg {
    pub strike: f64,
    /// Second derivative of the payoff at `strike`.
    pub curvature: f64,
    /// Trapezoid weight of the strike in the option integral.
    pub quad_weight: f64,
}

impl OptionLeg {
    /// Number of options held: curvature times quadrature weight.
    pub fn units(&self) -> f64 {
        self.curvature * self.quad_weight
    }
}

/// Payoff split into a bond, a forward, puts below `k0` and calls above.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffDecomposition {
    pub strikes: Vec<f64>,
    pub k0: f64,
    pub k0_index: usize,
    pub bond_units: f64,
    pub forward_units: f64,
    pub puts: Vec<OptionLeg>,
    pub calls: Vec<OptionLeg>,
}

const MIN_STRIKES: usize = 5;

/// Midpoint node of a strike grid.
pub fn default_reference_strike(strikes: &[f64]) -> Option<f64> {
    strikes.get(strikes.len() / 2).copied()
}

/// Decomposes a payoff tabulated on a uniform strike grid. `k0` must be an
/// interior node of the grid.
pub fn carr_madan_decompose(strikes: &[f64], payoff: &[f64], k0: f64) -> Result<PayoffDecomposition> {
    let len = strikes.len();
    if len < MIN_STRIKES {
        return Err(Error::InvalidPayoff(format!(
            "need at least {MIN_STRIKES} strikes, got {len}"
        )));
    }
    if payoff.len() != len {
        return Err(Error::LengthMismatch {
            what: "payoff table",
            expected: len,
            got: payoff.len(),
        });
    }
    if strikes.iter().chain(payoff).any(|v| !v.is_finite()) {
        return Err(Error::InvalidPayoff("non-finite entry".into()));
    }
    let h = (strikes[len - 1] - strikes[0]) / (len - 1) as f64;
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidPayoff("strikes must increase".into()));
    }
    for (k, s) in strikes.iter().enumerate() {
        if (s - (strikes[0] + k as f64 * h)).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::InvalidPayoff(format!("strike grid is not uniform at index {k}")));
        }
    }
    if !(k0 > strikes[0] && k0 < strikes[len - 1]) {
        return Err(Error::InvalidPayoff(format!(
            "reference strike {k0} is not strictly inside [{}, {}]",
            strikes[0],
            strikes[len - 1]
        )));
    }
    let k0_index = ((k0 - strikes[0]) / h).round() as usize;
    if (strikes[k0_index] - k0).abs() > 1e-9 * h {
        return Err(Error::InvalidPayoff(format!(
            "reference strike {k0} is not a grid node (nearest {})",
            strikes[k0_index]
        )));
    }
    let curvature = |k: usize| (payoff[k + 1] - 2.0 * payoff[k] + payoff[k - 1]) / (h * h);
    let leg = |k: usize| OptionLeg {
        strike: strikes[k],
        curvature: curvature(k),
        quad_weight: if k == k0_index { 0.5 * h } else { h },
    };
    Ok(PayoffDecomposition {
        strikes: strikes.to_vec(),
        k0: strikes[k0_index],
        k0_index,
        bond_units: payoff[k0_index],
        forward_units: (payoff[k0_index + 1] - payoff[k0_index - 1]) / (2.0 * h),
        puts: (1..=k0_index).map(leg).collect(),
        calls: (k0_index..len - 1).map(leg).collect(),
    })
}

/// Value of the replicating portfolio at each price in `ks`.
pub fn reconstruct(decomposition: &PayoffDecomposition, ks: &[f64]) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            let puts: f64 = decomposition
                .puts
                .iter()
                .map(|leg| leg.units() * (leg.strike - k).max(0.0))
                .sum();
            let calls: f64 = decomposition
                .calls
                .iter()
                .map(|leg| leg.units() * (k - leg.strike).max(0.0))
                .sum();
            decomposition.bond_units + decomposition.forward_units * (k - decomposition.k0) + puts + calls
        })
        .collect()
}

/// Sup-norm reconstruction error over the interior strikes.
pub fn reconstruction_error(decomposition: &PayoffDecomposition, payoff: &[f64]) -> f64 {
    let len = decomposition.strikes.len();
    let interior = &decomposition.strikes[1..len - 1];
    reconstruct(decomposition, interior)
        .iter()
        .zip(&payoff[1..len - 1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
