//! Brute-force primal solver used to certify the dual solver on small grids.
//!
//! Minimizes `m^-n Σ |h|^p` over full-grid tables with prescribed discrete
//! marginals by projected gradient descent. The feasible set is an affine
//! translate of the vanishing-marginals space, so projection is the closed
//! form `h - additive_part(h) + a0` with `a0 = Σ_i lift(g_i) - (n-1) c`.

use serde::Serialize;

use crate::analysis::{minimal_density, sharp_bound};
use crate::discretization::{additive_part, additive_table, check_marginals, marginal_sums, MarginalTable, Mesh};
use crate::error::{Error, Result};
use crate::solver::{check_exponent, continuation_sweep, SolverConfig};

/// Largest grid the oracle accepts.
pub const MAX_ORACLE_CELLS: usize = 1000;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 2_000_000;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct PrimalProblem<'a> {
    pub mesh: &'a Mesh,
    pub marginals: &'a [MarginalTable],
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalSolution {
    pub table: Vec<f64>,
    /// `m^-n Σ |h|^p` at the returned table.
    pub objective: f64,
    pub iterations: usize,
    /// Sup-norm of the projected gradient at exit.
    pub projected_gradient_inf: f64,
    /// Worst marginal violation seen after any projection.
    pub max_feasibility_error: f64,
}

struct Smoothed {
    p: f64,
    eps: f64,
}

impl Smoothed {
    fn value(&self, h: &[f64]) -> f64 {
        let e2 = self.eps * self.eps;
        h.iter().map(|v| (v * v + e2).powf(0.5 * self.p)).sum::<f64>() / h.len() as f64
    }

    /// Gradient with respect to the cell-weighted inner product.
    fn gradient(&self, h: &[f64]) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        h.iter()
            .map(|&v| {
                if e2 == 0.0 {
                    self.p * v.signum() * v.abs().powf(self.p - 1.0)
                } else {
                    self.p * v * (v * v + e2).powf(0.5 * self.p - 1.0)
                }
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn feasibility_error(h: &[f64], marginals: &[MarginalTable], mesh: &Mesh) -> f64 {
    marginals
        .iter()
        .enumerate()
        .flat_map(|(i, g)| {
            marginal_sums(h, i, mesh)
                .into_iter()
                .zip(g.values())
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn solve_primal(problem: &PrimalProblem<'_>, tol: f64) -> Result<PrimalSolution> {
    let PrimalProblem { mesh, marginals, p } = *problem;
    check_exponent(p)?;
    let c = check_marginals(marginals, mesh)?;
    if mesh.len() > MAX_ORACLE_CELLS {
        return Err(Error::InvalidConfig(format!(
            "oracle grid has {} cells, limit is {MAX_ORACLE_CELLS}",
            mesh.len()
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig("oracle tolerance must be positive".into()));
    }
    let components: Vec<&[f64]> = marginals.iter().map(|g| g.values()).collect();
    let mut anchor = additive_table(&components, mesh)?;
    let shift = (mesh.dim() as f64 - 1.0) * c;
    anchor.iter_mut().for_each(|v| *v -= shift);

    let project = |h: &mut Vec<f64>| -> Result<()> {
        let add = additive_part(h, mesh)?;
        for ((v, a), z) in h.iter_mut().zip(&add).zip(&anchor) {
            *v = *v - a + z;
        }
        Ok(())
    };

    let schedule: &[f64] = if p < 2.0 {
        &[1e-4, 1e-6, 1e-8, 1e-10, 1e-12]
    } else {
        &[0.0]
    };

    let mut h = anchor.clone();
    let mut max_feasibility_error = feasibility_error(&h, marginals, mesh);
    let mut iterations = 0;
    let mut pg_inf = f64::INFINITY;
    for &eps in schedule {
        let obj = Smoothed { p, eps };
        let mut step = 1.0;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        loop {
            let grad = obj.gradient(&h);
            let add = additive_part(&grad, mesh)?;
            let pg: Vec<f64> = grad.iter().zip(&add).map(|(g, a)| g - a).collect();
            pg_inf = pg.iter().fold(0.0, |acc, v| acc.max(v.abs()));
            if pg_inf <= tol {
                break;
            }
            if iterations >= MAX_ITER {
                return Err(Error::NotConverged {
                    iterations,
                    residual: pg_inf,
                });
            }
            iterations += 1;
            if let Some((h_prev, pg_prev)) = &prev {
                let s: Vec<f64> = h.iter().zip(h_prev).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = pg.iter().zip(pg_prev).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    step = dot(&s, &s) / sy;
                }
            }
            let f0 = obj.value(&h);
            let decrease = dot(&pg, &pg) / h.len() as f64;
            let mut trial;
            loop {
                trial = h.iter().zip(&pg).map(|(v, d)| v - step * d).collect::<Vec<_>>();
                project(&mut trial)?;
                let f1 = obj.value(&trial);
                if f1 <= f0 - ARMIJO * step * decrease || step < 1e-300 {
                    break;
                }
                step *= 0.5;
            }
            max_feasibility_error = max_feasibility_error.max(feasibility_error(&trial, marginals, mesh));
            prev = Some((std::mem::replace(&mut h, trial), pg));
        }
    }
    let objective = h.iter().map(|v| v.abs().powf(p)).sum::<f64>() * mesh.cell_weight();
    Ok(PrimalSolution {
        table: h,
        objective,
        iterations,
        projected_gradient_inf: pg_inf,
        max_feasibility_error,
    })
}

/// Agreement between the dual solver and the primal oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub p: f64,
    /// Sup-norm difference between `ψ(Φ̄)` and the oracle minimizer.
    pub density_sup_diff: f64,
    pub primal_objective: f64,
    pub dual_bound: f64,
    pub objective_rel_diff: f64,
    pub dual_converged: bool,
    pub dual_residual_inf: f64,
    pub primal_iterations: usize,
}

pub fn cross_validate(
    marginals: &[MarginalTable],
    p: f64,
    mesh: &Mesh,
    tol: f64,
    config: &SolverConfig,
) -> Result<CrossValidation> {
    let primal = solve_primal(&PrimalProblem { mesh, marginals, p }, tol)?;
    let dual = continuation_sweep(marginals, mesh, &[p], config)?
        .pop()
        .expect("one report per target");
    let h = minimal_density(&dual.potentials, mesh)?;
    let density_sup_diff = h
        .iter()
        .zip(&primal.table)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dual_bound = sharp_bound(&dual.potentials, mesh)?.bound;
    Ok(CrossValidation {
        p,
        density_sup_diff,
        primal_objective: primal.objective,
        dual_bound,
        objective_rel_diff: (primal.objective - dual_bound).abs() / dual_bound.abs().max(f64::MIN_POSITIVE),
        dual_converged: dual.converged,
        dual_residual_inf: dual.residual_inf,
        primal_iterations: primal.iterations,
    })
}
