//! Experiment configuration read from a single JSON document.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use margnorm_core::finance::WeightSpec;
use margnorm_core::{sample_marginal, MarginalKind, MarginalSpec, MarginalTable, Mesh, SolverConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub marginals: Vec<MarginalConfig>,
    pub p_targets: Vec<f64>,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub weights: Option<WeightsConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalConfig {
    pub kind: String,
    pub mu: Option<f64>,
    pub sigma2: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub normalize: Option<bool>,
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta_p: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightsConfig {
    Product { factors: Vec<MarginalConfig> },
    Tensor { values: Vec<f64> },
}

fn required(field: Option<f64>, name: &str, at: &str) -> Result<f64> {
    field.ok_or_else(|| anyhow!("{at}.{name} is required for this kind"))
}

impl MarginalConfig {
    pub fn to_spec(&self, at: &str) -> Result<MarginalSpec> {
        let kind = match self.kind.as_str() {
            "uniform" => MarginalKind::Uniform,
            "gaussian" => MarginalKind::Gaussian {
                mu: required(self.mu, "mu", at)?,
                sigma2: required(self.sigma2, "sigma2", at)?,
            },
            "beta" => MarginalKind::Beta {
                alpha: required(self.alpha, "alpha", at)?,
                beta: required(self.beta, "beta", at)?,
            },
            "tabulated" => MarginalKind::Tabulated {
                values: self
                    .values
                    .clone()
                    .ok_or_else(|| anyhow!("{at}.values is required for kind tabulated"))?,
            },
            other => bail!("{at}.kind must be uniform, gaussian, beta or tabulated, got {other:?}"),
        };
        Ok(MarginalSpec::new(kind)
            .normalized(self.normalize.unwrap_or(true))
            .with_target_mass(self.mass.unwrap_or(1.0)))
    }
}

/// Everything a command needs, validated.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mesh: Mesh,
    pub marginals: Vec<MarginalTable>,
    pub weights: Option<WeightSpec>,
    pub solver: SolverConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow!("config schema error: {e}"))
    }

    pub fn into_experiment(self, out_override: Option<PathBuf>) -> Result<Experiment> {
        let mesh = Mesh::new(self.n, self.m).map_err(|e| anyhow!("config error: {e}"))?;
        if self.marginals.len() != self.n {
            bail!("config error: marginals has {} entries, n = {}", self.marginals.len(), self.n);
        }
        let marginals = self
            .marginals
            .iter()
            .enumerate()
            .map(|(i, mc)| {
                let at = format!("marginals[{i}]");
                let spec = mc.to_spec(&at)?;
                sample_marginal(&spec, &mesh).map_err(|e| anyhow!("config error: {at}: {e}"))
            })
            .collect::<Result<Vec<_>>>()?;
        margnorm_core::common_mass(&marginals).map_err(|e| anyhow!("config error: {e}"))?;
        if self.p_targets.is_empty() {
            bail!("config error: p_targets must not be empty");
        }
        if let Some(bad) = self.p_targets.iter().find(|p| !(p.is_finite() && **p > 1.0)) {
            bail!("config error: p_targets entries must exceed 1, got {bad}");
        }
        let mut solver = SolverConfig::default();
        if let Some(tol) = self.solver.tol {
            solver.tol_residual = tol;
        }
        if let Some(max_iter) = self.solver.max_iter {
            solver.max_iter = max_iter;
        }
        if let Some(eps) = self.solver.epsilon {
            solver.epsilon = eps;
            solver.polish.retain(|&e| e < eps);
        }
        if let Some(dp) = self.solver.delta_p {
            solver.delta_p = dp;
        }
        solver.validate().map_err(|e| anyhow!("config error: solver: {e}"))?;
        let weights = match &self.weights {
            None => None,
            Some(WeightsConfig::Product { factors }) => {
                let tables = factors
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let at = format!("weights.factors[{i}]");
                        let spec = f.to_spec(&at)?;
                        sample_marginal(&spec, &mesh).map_err(|e| anyhow!("config error: {at}: {e}"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(WeightSpec::Product(tables))
            }
            Some(WeightsConfig::Tensor { values }) => Some(WeightSpec::Tensor(values.clone())),
        };
        if let Some(w) = &weights {
            w.resolve(&mesh).map_err(|e| anyhow!("config error: weights: {e}"))?;
        }
        let out_dir = out_override
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| anyhow!("config error: out_dir missing and no --out given"))?;
        Ok(Experiment {
            config: self,
            mesh,
            marginals,
            weights,
            solver,
            out_dir,
        })
    }
}
