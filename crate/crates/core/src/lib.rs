//! Minimal `L^p`-norm functions on the unit hypercube with prescribed
//! one-dimensional marginals.
//!
//! The minimizer has the form `h* = sign(Φ̄)|Φ̄|^(1/(p-1))` with
//! `Φ̄ = (1/n) Σ_i Φ_i(ξ_i)`, where the potentials `Φ_i` solve a constrained
//! system of nonlinear integral equations. This crate discretizes that system
//! on a uniform midpoint grid, solves it by Levenberg-Marquardt with
//! continuation in `p` from the explicit `p = 2` case, and evaluates the
//! sharp lower bound `∫|g|^p >= ∫|Φ̄|^(p/(p-1))`.
//!
//! ```
//! use margnorm_core::{continuation_sweep, sample_marginal, MarginalSpec, Mesh, SolverConfig};
//!
//! let mesh = Mesh::new(2, 12).unwrap();
//! let g = vec![sample_marginal(&MarginalSpec::gaussian(0.5, 0.1), &mesh).unwrap(); 2];
//! let reports = continuation_sweep(&g, &mesh, &[1.5, 3.0], &SolverConfig::default()).unwrap();
//! assert!(reports.iter().all(|r| r.converged));
//! ```

pub mod analysis;
pub mod closed_form;
pub mod discretization;
pub mod error;
pub mod finance;
pub mod primal;
pub mod solver;

pub use analysis::{
    duality_check, minimal_density, minimality_probe, product_joint, random_perturbation,
    sharp_bound, BoundReport, DualityRecord, Perturbation, ProbeReport,
};
pub use closed_form::{l2_bound, l2_potentials, L2Solution};
pub use discretization::{
    common_mass, marginalize, sample_marginal, MarginalKind, MarginalSpec, MarginalTable, Mesh,
};
pub use error::{Error, Result};
pub use finance::{
    carr_madan_decompose, reconstruct, reconstruction_error, solve_weighted, PayoffDecomposition,
    WeightSpec,
};
pub use primal::{cross_validate, solve_primal, CrossValidation, PrimalProblem, PrimalSolution};
pub use solver::{
    continuation_sweep, jacobian, psi, psi_prime, residual, residual_norms, solve_at_p,
    PotentialSet, SolveReport, SolverConfig,
};
