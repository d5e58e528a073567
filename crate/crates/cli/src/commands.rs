use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;

use margnorm_core::analysis::{minimal_density, minimality_probe, product_joint, DEFAULT_AMPLITUDE};
use margnorm_core::finance::{
    carr_madan_decompose, default_reference_strike, reconstruction_error, solve_weighted,
};
use margnorm_core::primal::{solve_primal, PrimalProblem, DEFAULT_ORACLE_TOL, MAX_ORACLE_CELLS};
use margnorm_core::{
    continuation_sweep, duality_check, residual_norms, sharp_bound, SolveReport,
};

use crate::config::Experiment;
use crate::output::{self, long_rows, num, potentials_csv, potentials_file, write_json, write_text};
use crate::Failure;

/// Keys of the per-run JSON summary.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub bound: f64,
    pub residual_inf: f64,
    pub gauge_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Summary {
    fn new(exp: &Experiment, r: &SolveReport) -> Self {
        Self {
            p: r.potentials.p(),
            n: exp.mesh.dim(),
            m: exp.mesh.cells_per_axis(),
            bound: r.bound,
            residual_inf: r.residual_inf,
            gauge_inf: r.gauge_inf,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Config)
}

fn solve_all(exp: &Experiment) -> Result<Vec<SolveReport>, Failure> {
    let targets = &exp.config.p_targets;
    let reports = match &exp.weights {
        None => continuation_sweep(&exp.marginals, &exp.mesh, targets, &exp.solver),
        Some(w) => targets
            .iter()
            .map(|&p| solve_weighted(&exp.marginals, &exp.mesh, w, p, &exp.solver))
            .collect(),
    };
    reports.map_err(|e| Failure::Config(anyhow!("solver error: {e}")))
}

fn write_potentials(exp: &Experiment, r: &SolveReport) -> Result<String, Failure> {
    let name = potentials_file(r.potentials.p());
    write_text(&exp.out_dir.join(&name), &potentials_csv(&exp.mesh, &r.potentials)).map_err(Failure::Config)?;
    Ok(name)
}

fn convergence_status(reports: &[SolveReport]) -> Result<(), Failure> {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.converged)
        .map(|r| format!("p = {} (residual {:e})", r.potentials.p(), r.residual_inf))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Convergence(failed.join(", ")))
    }
}

pub fn solve(exp: &Experiment) -> Result<(), Failure> {
    if exp.config.p_targets.len() != 1 {
        return Err(Failure::Config(anyhow!(
            "config error: solve needs exactly one p target, got {}",
            exp.config.p_targets.len()
        )));
    }
    prepare_out(&exp.out_dir)?;
    let reports = solve_all(exp)?;
    let report = &reports[0];
    write_potentials(exp, report)?;
    write_json(&exp.out_dir.join("summary.json"), &Summary::new(exp, report)).map_err(Failure::Config)?;
    convergence_status(&reports)
}

#[derive(Serialize)]
struct IndexEntry {
    #[serde(flatten)]
    summary: Summary,
    file: String,
}

#[derive(Serialize)]
struct SweepIndex {
    n: usize,
    m: usize,
    runs: Vec<IndexEntry>,
}

pub fn sweep(exp: &Experiment) -> Result<(), Failure> {
    prepare_out(&exp.out_dir)?;
    let reports = solve_all(exp)?;
    let mut long = String::from("p,axis,xi,phi\n");
    let mut runs = Vec::new();
    for r in &reports {
        let file = write_potentials(exp, r)?;
        long_rows(&mut long, &exp.mesh, &r.potentials);
        runs.push(IndexEntry {
            summary: Summary::new(exp, r),
            file,
        });
    }
    write_text(&exp.out_dir.join("sweep_long.csv"), &long).map_err(Failure::Config)?;
    let index = SweepIndex {
        n: exp.mesh.dim(),
        m: exp.mesh.cells_per_axis(),
        runs,
    };
    write_json(&exp.out_dir.join("index.json"), &index).map_err(Failure::Config)?;
    convergence_status(&reports)
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    tolerance: f64,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, passed: value <= tolerance, value, tolerance }
    }

    fn at_least(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, passed: value >= tolerance, value, tolerance }
    }
}

#[derive(Serialize)]
struct VerifyRun {
    p: f64,
    converged: bool,
    checks: Vec<Check>,
}

#[derive(Serialize)]
struct VerifyReport {
    n: usize,
    m: usize,
    corrupted: bool,
    passed: bool,
    runs: Vec<VerifyRun>,
}

pub const PROBE_TRIALS: usize = 100;

pub fn verify(exp: &Experiment, corrupt: bool) -> Result<(), Failure> {
    if exp.weights.is_some() {
        return Err(Failure::Config(anyhow!("config error: verify does not support weights")));
    }
    prepare_out(&exp.out_dir)?;
    let reports = solve_all(exp)?;
    let (mesh, g) = (&exp.mesh, &exp.marginals);
    let tol = exp.solver.tol_residual;
    let err = |e: margnorm_core::Error| Failure::Config(anyhow!("verification error: {e}"));
    let mut runs = Vec::new();
    for r in &reports {
        let p = r.potentials.p();
        let pot = if corrupt { r.potentials.shifted(0, 0.1) } else { r.potentials.clone() };
        let mut checks = Vec::new();

        let (marg, gauge) = residual_norms(&pot, g, mesh).map_err(err)?;
        checks.push(Check::at_most("marginal_feasibility", marg, tol));
        checks.push(Check::at_most("gauge", gauge, tol));

        let bound = sharp_bound(&pot, mesh).map_err(err)?;
        checks.push(Check::at_most(
            "attainment_identity",
            (bound.h_norm_p - bound.bound).abs() / bound.bound.abs().max(f64::MIN_POSITIVE),
            1e-12,
        ));

        if let Ok(prod) = product_joint(g, mesh) {
            let gap = match duality_check(&pot, g, &prod, mesh) {
                Ok(rec) => rec.gap,
                Err(_) => f64::NEG_INFINITY,
            };
            checks.push(Check::at_least("duality_product_joint", gap, -1e-9));
        }

        let probe = minimality_probe(&pot, mesh, PROBE_TRIALS, DEFAULT_AMPLITUDE, exp.config.seed).map_err(err)?;
        checks.push(Check::at_least("minimality_probe_drop", probe.min_drop, -1e-9));
        checks.push(Check::at_most("orthogonality_pairing", probe.max_pairing, 1e-9));

        if mesh.cells_per_axis() <= 10 && mesh.len() <= MAX_ORACLE_CELLS {
            let oracle_tol = if p == 2.0 { 1e-12 } else { DEFAULT_ORACLE_TOL };
            let primal = solve_primal(&PrimalProblem { mesh, marginals: g, p }, oracle_tol).map_err(err)?;
            let h = minimal_density(&pot, mesh).map_err(err)?;
            let diff = h.iter().zip(&primal.table).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let density_tol = if p == 2.0 { 1e-8 } else { 1e-4 };
            checks.push(Check::at_most("oracle_density", diff, density_tol));
            checks.push(Check::at_most(
                "oracle_objective",
                (primal.objective - bound.bound).abs() / bound.bound.abs().max(f64::MIN_POSITIVE),
                1e-6,
            ));
        }
        runs.push(VerifyRun { p, converged: r.converged, checks });
    }
    let failing: Vec<String> = runs
        .iter()
        .flat_map(|run| {
            run.checks
                .iter()
                .filter(|c| !c.passed)
                .map(move |c| format!("{} at p = {}", c.name, run.p))
        })
        .collect();
    let report = VerifyReport {
        n: mesh.dim(),
        m: mesh.cells_per_axis(),
        corrupted: corrupt,
        passed: failing.is_empty(),
        runs,
    };
    write_json(&exp.out_dir.join("verify_report.json"), &report).map_err(Failure::Config)?;
    if !failing.is_empty() {
        return Err(Failure::Verification(failing));
    }
    convergence_status(&reports)
}

#[derive(Serialize)]
struct ColumnDecomposition {
    column: String,
    bond_units: f64,
    forward_units: f64,
    puts: usize,
    calls: usize,
    reconstruction_error: f64,
}

#[derive(Serialize)]
struct DecompositionSummary {
    k0: f64,
    strikes: usize,
    max_reconstruction_error: f64,
    columns: Vec<ColumnDecomposition>,
}

pub fn decompose(payoff: &Path, k0: Option<f64>, out_dir: &Path) -> Result<(), Failure> {
    let table = output::read_numeric_csv(payoff).map_err(Failure::Config)?;
    let strikes = &table.columns[0];
    let k0 = match k0 {
        Some(k) => k,
        None => default_reference_strike(strikes).ok_or_else(|| Failure::Config(anyhow!("empty payoff table")))?,
    };
    prepare_out(out_dir)?;
    let mut weights = String::from("column,leg,strike,curvature,quad_weight,units\n");
    let mut columns = Vec::new();
    let mut resolved_k0 = k0;
    for (name, values) in table.header.iter().zip(&table.columns).skip(1) {
        let d = carr_madan_decompose(strikes, values, k0)
            .map_err(|e| Failure::Config(anyhow!("{}: column {name}: {e}", payoff.display())))?;
        resolved_k0 = d.k0;
        for (leg, list) in [("put", &d.puts), ("call", &d.calls)] {
            for l in list {
                weights.push_str(&format!(
                    "{name},{leg},{},{},{},{}\n",
                    num(l.strike),
                    num(l.curvature),
                    num(l.quad_weight),
                    num(l.units())
                ));
            }
        }
        columns.push(ColumnDecomposition {
            column: name.clone(),
            bond_units: d.bond_units,
            forward_units: d.forward_units,
            puts: d.puts.len(),
            calls: d.calls.len(),
            reconstruction_error: reconstruction_error(&d, values),
        });
    }
    write_text(&out_dir.join("weights.csv"), &weights).map_err(Failure::Config)?;
    let summary = DecompositionSummary {
        k0: resolved_k0,
        strikes: strikes.len(),
        max_reconstruction_error: columns.iter().map(|c| c.reconstruction_error).fold(0.0, f64::max),
        columns,
    };
    write_json(&out_dir.join("decomposition.json"), &summary).map_err(Failure::Config)?;
    Ok(())
}
