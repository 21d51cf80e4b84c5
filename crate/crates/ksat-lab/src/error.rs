use thiserror::Error;

use crate::cover::CoverError;
use crate::formula::FormulaError;
use crate::moments::MomentError;
use crate::solver::SolverError;
use crate::sp::SpError;
use crate::thresholds::ThresholdError;
use crate::twosat::TwoSatError;

/// Umbrella error for callers that span several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error(transparent)]
    TwoSat(#[from] TwoSatError),
    #[error(transparent)]
    Sp(#[from] SpError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

impl Error {
    /// True when the error signals a broken internal invariant rather than bad input.
    pub fn is_contract_violation(&self) -> bool {
        match self {
            Error::TwoSat(e) => e.is_contract_violation(),
            Error::Moment(MomentError::Contract(_)) => true,
            _ => false,
        }
    }

    /// Process exit code: 2 for contract violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_contract_violation() {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
