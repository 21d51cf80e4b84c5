//! Closed-form satisfiability threshold bounds (leading terms only).

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThresholdError {
    #[error("k = {0} is below 3")]
    KTooSmall(usize),
}

fn check(k: usize) -> Result<f64, ThresholdError> {
    if k < 3 {
        return Err(ThresholdError::KTooSmall(k));
    }
    Ok((k as f64).exp2() * LN_2)
}

/// 2^k ln 2 − (1 + ln 2)/2.
pub fn bound_main(k: usize) -> Result<f64, ThresholdError> {
    Ok(check(k)? - (1.0 + LN_2) / 2.0)
}

/// 2^k ln 2 − k ln 2 / 2 − (1 + ln 2 / 2), the second-moment lower bound.
pub fn bound_lower_ap(k: usize) -> Result<f64, ThresholdError> {
    Ok(check(k)? - k as f64 * LN_2 / 2.0 - (1.0 + LN_2 / 2.0))
}

/// 2^k ln 2 − 3 ln 2 / 2, the predicted condensation density.
pub fn bound_condensation(k: usize) -> Result<f64, ThresholdError> {
    Ok(check(k)? - 1.5 * LN_2)
}

/// 2^k ln 2, where the expected number of solutions vanishes.
pub fn first_moment_ceiling(k: usize) -> Result<f64, ThresholdError> {
    check(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub k: usize,
    pub main: f64,
    pub kkks_upper: f64,
    pub ap_lower: f64,
    pub condensation: f64,
    pub first_moment_ceiling: f64,
    pub gap: f64,
    pub regular_dstar: Option<u32>,
    /// All entries omit the vanishing correction terms.
    pub leading_terms_only: bool,
}

pub fn report(k: usize, regular_dstar: Option<u32>) -> Result<BoundTable, ThresholdError> {
    let main = bound_main(k)?;
    let ap_lower = bound_lower_ap(k)?;
    Ok(BoundTable {
        k,
        main,
        kkks_upper: main,
        ap_lower,
        condensation: bound_condensation(k)?,
        first_moment_ceiling: first_moment_ceiling(k)?,
        gap: main - ap_lower,
        regular_dstar,
        leading_terms_only: true,
    })
}
