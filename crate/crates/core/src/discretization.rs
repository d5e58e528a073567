//! Uniform tensor grids on `[0,1]^n` with midpoint quadrature.
//!
//! Full-grid tables are stored flat in lexicographic order with axis 0 the
//! slowest index, so cell `(i_0, .., i_{n-1})` lives at
//! `i_0 * m^(n-1) + .. + i_{n-1}`. Axes are zero-based throughout the API.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Default cap on `n * m^n`; admits `n <= 4` at `m = 30`.
pub const DEFAULT_MEMORY_BUDGET: u128 = 1 << 22;

/// Default number of cells per axis.
pub const DEFAULT_CELLS: usize = 30;

/// Uniform midpoint mesh on the unit hypercube.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    n: usize,
    m: usize,
    centers: Vec<f64>,
    len: usize,
}

impl Mesh {
    /// Builds an `n`-dimensional mesh with `m` cells per axis under the
    /// default memory budget.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        Self::with_budget(n, m, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_budget(n: usize, m: usize, budget: u128) -> Result<Self> {
        if n < 2 {
            return Err(Error::DimensionTooSmall(n));
        }
        if m < 2 {
            return Err(Error::TooFewCells(m));
        }
        let required = (m as u128)
            .checked_pow(n as u32)
            .and_then(|cells| cells.checked_mul(n as u128))
            .unwrap_or(u128::MAX);
        if required > budget {
            return Err(Error::MemoryBudget {
                n,
                m,
                required,
                budget,
            });
        }
        let centers = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
        Ok(Self {
            n,
            m,
            centers,
            len: m.pow(n as u32),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn cells_per_axis(&self) -> usize {
        self.m
    }

    /// Cell centers `(k + 1/2) / m` shared by every axis.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn axis_weight(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Weight `m^(-n)` of one full-grid cell.
    pub fn cell_weight(&self) -> f64 {
        1.0 / self.len as f64
    }

    /// Number of full-grid cells, `m^n`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.n - 1 - axis) as u32)
    }

    /// Per-axis index of `axis` for the flat cell index `flat`.
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.m
    }

    /// Visits every cell in flat order with its multi-index.
    pub fn for_each_cell(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut idx = vec![0usize; self.n];
        for flat in 0..self.len {
            f(flat, &idx);
            for axis in (0..self.n).rev() {
                idx[axis] += 1;
                if idx[axis] < self.m {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// Discrete integral `m^(-n) * sum(h)` of a full-grid table.
    pub fn integrate(&self, h: &[f64]) -> f64 {
        h.iter().sum::<f64>() * self.cell_weight()
    }

    pub(crate) fn check_table(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.len {
            return Err(Error::LengthMismatch {
                what: "full-grid table",
                expected: self.len,
                got: h.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.n {
            return Err(Error::AxisOutOfRange { axis, n: self.n });
        }
        Ok(())
    }
}

/// Shape of a one-dimensional marginal density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalKind {
    Uniform,
    Gaussian { mu: f64, sigma2: f64 },
    Beta { alpha: f64, beta: f64 },
    Tabulated { values: Vec<f64> },
}

/// A marginal density together with its normalization policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSpec {
    pub kind: MarginalKind,
    pub normalize: bool,
    pub target_mass: f64,
}

impl MarginalSpec {
    pub fn new(kind: MarginalKind) -> Self {
        Self {
            kind,
            normalize: true,
            target_mass: 1.0,
        }
    }

    pub fn uniform() -> Self {
        Self::new(MarginalKind::Uniform)
    }

    pub fn gaussian(mu: f64, sigma2: f64) -> Self {
        Self::new(MarginalKind::Gaussian { mu, sigma2 })
    }

    pub fn beta(alpha: f64, beta: f64) -> Self {
        Self::new(MarginalKind::Beta { alpha, beta })
    }

    pub fn tabulated(values: Vec<f64>) -> Self {
        Self::new(MarginalKind::Tabulated { values })
    }

    pub fn normalized(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn with_target_mass(mut self, mass: f64) -> Self {
        self.target_mass = mass;
        self
    }

    fn validate(&self, m: usize) -> Result<()> {
        match &self.kind {
            MarginalKind::Uniform => {}
            MarginalKind::Gaussian { mu, sigma2 } => {
                if !(sigma2.is_finite() && *sigma2 > 0.0) || !mu.is_finite() {
                    return Err(Error::InvalidMarginal(format!(
                        "gaussian needs finite mu and sigma2 > 0, got mu = {mu}, sigma2 = {sigma2}"
                    )));
                }
            }
            MarginalKind::Beta { alpha, beta } => {
                if !(alpha.is_finite() && *alpha > 0.0 && beta.is_finite() && *beta > 0.0) {
                    return Err(Error::InvalidMarginal(format!(
                        "beta needs alpha, beta > 0, got alpha = {alpha}, beta = {beta}"
                    )));
                }
            }
            MarginalKind::Tabulated { values } => {
                if values.len() != m {
                    return Err(Error::LengthMismatch {
                        what: "tabulated marginal",
                        expected: m,
                        got: values.len(),
                    });
                }
            }
        }
        if self.normalize && !self.target_mass.is_finite() {
            return Err(Error::InvalidMarginal("target mass must be finite".into()));
        }
        Ok(())
    }
}

/// One marginal sampled at the cell centers of an axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalTable {
    values: Vec<f64>,
    mass: f64,
}

impl MarginalTable {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewCells(values.len()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMarginal(format!("non-finite value {bad}")));
        }
        let mass = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self { values, mass })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Discrete mass `(1/m) * sum(values)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rescales the table so its discrete mass equals `target`.
    pub fn normalized(&self, target: f64) -> Result<Self> {
        if self.mass == 0.0 {
            return Err(Error::InvalidMarginal(
                "cannot normalize a table with zero mass".into(),
            ));
        }
        let scale = target / self.mass;
        let values: Vec<f64> = self.values.iter().map(|v| v * scale).collect();
        let mut table = Self::from_values(values)?;
        // keep the stored mass on target; rescaling can be off by an ulp
        if (table.mass - target).abs() <= 1e-14 * target.abs().max(1.0) {
            table.mass = target;
        }
        Ok(table)
    }
}

/// Tolerance on the spread of marginal masses.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Checks that `marginals` share one axis length and one discrete mass
/// (within [`MASS_TOLERANCE`]) and returns that mass, taken from axis 0.
pub fn common_mass(marginals: &[MarginalTable]) -> Result<f64> {
    if marginals.len() < 2 {
        return Err(Error::DimensionTooSmall(marginals.len()));
    }
    let m = marginals[0].len();
    let reference = marginals[0].mass();
    for (axis, g) in marginals.iter().enumerate().skip(1) {
        if g.len() != m {
            return Err(Error::LengthMismatch {
                what: "marginal table",
                expected: m,
                got: g.len(),
            });
        }
        if (g.mass() - reference).abs() > MASS_TOLERANCE {
            return Err(Error::MassMismatch {
                axis,
                mass: g.mass(),
                reference,
            });
        }
    }
    Ok(reference)
}

pub(crate) fn check_marginals(marginals: &[MarginalTable], mesh: &Mesh) -> Result<f64> {
    if marginals.len() != mesh.dim() {
        return Err(Error::LengthMismatch {
            what: "marginal count",
            expected: mesh.dim(),
            got: marginals.len(),
        });
    }
    if marginals[0].len() != mesh.cells_per_axis() {
        return Err(Error::LengthMismatch {
            what: "marginal table",
            expected: mesh.cells_per_axis(),
            got: marginals[0].len(),
        });
    }
    common_mass(marginals)
}

/// Samples `spec` at the cell centers of one mesh axis.
pub fn sample_marginal(spec: &MarginalSpec, mesh: &Mesh) -> Result<MarginalTable> {
    let m = mesh.cells_per_axis();
    spec.validate(m)?;
    let values: Vec<f64> = match &spec.kind {
        MarginalKind::Uniform => vec![1.0; m],
        MarginalKind::Gaussian { mu, sigma2 } => {
            let norm = (2.0 * std::f64::consts::PI * sigma2).sqrt();
            mesh.centers()
                .iter()
                .map(|x| (-(x - mu).powi(2) / (2.0 * sigma2)).exp() / norm)
                .collect()
        }
        MarginalKind::Beta { alpha, beta } => {
            let log_norm = ln_beta(*alpha, *beta);
            mesh.centers()
                .iter()
                .map(|x| ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - log_norm).exp())
                .collect()
        }
        MarginalKind::Tabulated { values } => values.clone(),
    };
    let table = MarginalTable::from_values(values)?;
    if spec.normalize {
        table.normalized(spec.target_mass)
    } else {
        Ok(table)
    }
}

/// Marginal of a full-grid table along `axis`: entry `t` is `m^(-(n-1))`
/// times the sum of `h` over all cells whose `axis` index is `t`.
pub fn marginalize(h: &[f64], axis: usize, mesh: &Mesh) -> Result<MarginalTable> {
    mesh.check_table(h)?;
    mesh.check_axis(axis)?;
    MarginalTable::from_values(marginal_sums(h, axis, mesh))
}

pub(crate) fn marginal_sums(h: &[f64], axis: usize, mesh: &Mesh) -> Vec<f64> {
    let m = mesh.cells_per_axis();
    let stride = mesh.stride(axis);
    let mut out = vec![0.0; m];
    for (flat, v) in h.iter().enumerate() {
        out[(flat / stride) % m] += v;
    }
    let scale = (m as f64) / mesh.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Sum of one-variable components lifted to the full grid:
/// `out(cell) = sum_i components[i][idx_i]`.
pub fn additive_table<T: AsRef<[f64]>>(components: &[T], mesh: &Mesh) -> Result<Vec<f64>> {
    if components.len() != mesh.dim() {
        return Err(Error::LengthMismatch {
            what: "additive components",
            expected: mesh.dim(),
            got: components.len(),
        });
    }
    for c in components {
        if c.as_ref().len() != mesh.cells_per_axis() {
            return Err(Error::LengthMismatch {
                what: "additive component",
                expected: mesh.cells_per_axis(),
                got: c.as_ref().len(),
            });
        }
    }
    let mut out = vec![0.0; mesh.len()];
    mesh.for_each_cell(|flat, idx| {
        out[flat] = components
            .iter()
            .zip(idx)
            .map(|(c, &k)| c.as_ref()[k])
            .sum();
    });
    Ok(out)
}

/// Additive part of `h`: `sum_i lift(h_i) - (n-1) * mean(h)`.
///
/// This is the orthogonal projector onto additively separable tables; `h`
/// minus its additive part has all marginals equal to zero.
pub fn additive_part(h: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
    mesh.check_table(h)?;
    let n = mesh.dim();
    let marginals: Vec<Vec<f64>> = (0..n).map(|i| marginal_sums(h, i, mesh)).collect();
    let mean = mesh.integrate(h);
    let mut out = additive_table(&marginals, mesh)?;
    let shift = (n as f64 - 1.0) * mean;
    out.iter_mut().for_each(|v| *v -= shift);
    Ok(out)
}
