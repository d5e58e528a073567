//! CSV and JSON artifacts. Numbers in CSV use 17 significant digits so every
//! value round-trips bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use margnorm_core::{Mesh, PotentialSet};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// File-name label for an exponent, e.g. `1.2` or `3`.
pub fn p_label(p: f64) -> String {
    format!("{p}")
}

pub fn potentials_file(p: f64) -> String {
    format!("potentials_p{}.csv", p_label(p))
}

pub fn potentials_csv(mesh: &Mesh, pot: &PotentialSet) -> String {
    let mut out = String::from("xi");
    for i in 1..=pot.dim() {
        let _ = write!(out, ",phi_{i}");
    }
    out.push('\n');
    for (k, x) in mesh.centers().iter().enumerate() {
        out.push_str(&num(*x));
        for phi in pot.phis() {
            out.push(',');
            out.push_str(&num(phi[k]));
        }
        out.push('\n');
    }
    out
}

/// Long-format rows `p,axis,xi,phi` with 1-based axes.
pub fn long_rows(out: &mut String, mesh: &Mesh, pot: &PotentialSet) {
    for (i, phi) in pot.phis().iter().enumerate() {
        for (x, v) in mesh.centers().iter().zip(phi) {
            let _ = writeln!(out, "{},{},{},{}", num(pot.p()), i + 1, num(*x), num(*v));
        }
    }
}

/// Header and columns of a numeric CSV file.
pub struct NumericTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

pub fn read_numeric_csv(path: &Path) -> Result<NumericTable> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 2 {
        bail!("{}: need a strike column and at least one value column", path.display());
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), row + 1))?;
        if record.len() != header.len() {
            bail!("{}: row {} has {} fields, expected {}", path.display(), row + 1, record.len(), header.len());
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: row {} column {:?} is not a number", path.display(), row + 1, header[col]))?;
            columns[col].push(v);
        }
    }
    Ok(NumericTable { header, columns })
}

/// Reads a potentials CSV back into a [`PotentialSet`].
pub fn read_potentials_csv(path: &Path, p: f64) -> Result<PotentialSet> {
    let table = read_numeric_csv(path)?;
    Ok(PotentialSet::new(p, table.columns[1..].to_vec())?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}
