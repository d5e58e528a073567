//! Fixtures shared by the criterion benches.

use margnorm_core::{sample_marginal, MarginalSpec, MarginalTable, Mesh};

/// Mesh and Gaussian marginals centered at 1/3 and 2/3 for `n` axes.
pub fn gaussian_fixture(n: usize, m: usize) -> (Mesh, Vec<MarginalTable>) {
    let mesh = Mesh::new(n, m).expect("fixture mesh");
    let marginals = (0..n)
        .map(|i| {
            let mu = (i + 1) as f64 / (n + 1) as f64;
            sample_marginal(&MarginalSpec::gaussian(mu, 0.1), &mesh).expect("fixture marginal")
        })
        .collect();
    (mesh, marginals)
}
