//! Explicit solution of the `p = 2` case.
//!
//! The first-order system is linear for `p = 2`: `Φ_1 = n g_1` and
//! `Φ_i = n (g_i - c)` for `i >= 1`, where `c` is the common mass. The
//! minimal density is `Σ_i g_i - (n-1) c` and its squared norm is the
//! lower bound `Σ_i ∫g_i² - (n-1) c²`.

use serde::Serialize;

use crate::discretization::{common_mass, MarginalTable};
use crate::error::Result;
use crate::solver::PotentialSet;

/// Closed-form `p = 2` potentials and the matching lower bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Solution {
    pub potentials: PotentialSet,
    pub common_mass: f64,
    pub bound: f64,
}

pub fn l2_potentials(marginals: &[MarginalTable]) -> Result<L2Solution> {
    let c = common_mass(marginals)?;
    let n = marginals.len() as f64;
    let phis = marginals
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let shift = if i == 0 { 0.0 } else { c };
            g.values().iter().map(|v| n * (v - shift)).collect()
        })
        .collect();
    Ok(L2Solution {
        potentials: PotentialSet::new(2.0, phis)?,
        common_mass: c,
        bound: l2_bound(marginals, c)?,
    })
}

/// `Σ_i (1/m) Σ_k g_i(x_k)² - (n-1) c²`.
pub fn l2_bound(marginals: &[MarginalTable], common: f64) -> Result<f64> {
    common_mass(marginals)?;
    let n = marginals.len() as f64;
    let squares: f64 = marginals
        .iter()
        .map(|g| g.values().iter().map(|v| v * v).sum::<f64>() / g.len() as f64)
        .sum();
    Ok(squares - (n - 1.0) * common * common)
}
