//! First and second moment rate functions over SP type systems, the rough
//! bounds f̂ and ψ, and the regular k-SAT rate Ξ(k, d).

mod dual;
pub mod ensemble;
pub mod first;
pub mod kl;
pub mod newton;
pub mod psi;
pub mod regular;
pub mod second;

use thiserror::Error;

use crate::sp::SpError;

pub use dual::{Dual, Scalar};
pub use ensemble::{asymptotic_terms, ensemble_first_moment, ensemble_fhat, AsymptoticReport, EnsembleOptions, EnsembleRate};
pub use first::{first_moment_rate, solve_first_moment, FirstMomentParams, OccVariant, RateComponents, RateResult};
pub use psi::{epsilon_k, psi_at_origin, scan_middle_ground, separability_psi, MiddleGroundScan, PsiInput, PsiValue};
pub use regular::{regular_threshold, regular_threshold_with, regular_xi, RegularScan};
pub use second::{
    check_concavity, check_stationary, product_overlap, rough_bound_fhat, second_moment_f, ConcavityReport,
    FhatInput, Overlap, OverlapLayout, SecondMoment, SecondMomentComponents, StationarityReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    /// A broken internal invariant (maps to exit code 2 in the CLI).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{what} did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { what: String, iterations: usize, residual: f64 },
    #[error("log-domain violation: {0}")]
    LogDomain(String),
    #[error("overlap outside the solvable region: {0}")]
    OutOfRegion(String),
    #[error("infeasible input: {0}")]
    Infeasible(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Sp(#[from] SpError),
}

pub type Result<T> = std::result::Result<T, MomentError>;
