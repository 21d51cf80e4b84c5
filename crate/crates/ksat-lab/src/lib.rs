//! Executable machinery for random k-SAT threshold analysis.
//!
//! Formulas and their generators, degree pruning, covers and shades, the
//! 2-SAT extension step, survey-propagation type systems, first and second
//! moment rate functions, closed-form bounds and a small DPLL solver.
//!
//! Randomness comes from [`rand_chacha::ChaCha8Rng`] seeded through
//! `SeedableRng::seed_from_u64`, so a `u64` seed reproduces output across
//! releases of this crate.

pub mod cover;
pub mod error;
pub mod formula;
pub mod moments;
pub mod par;
pub mod pruning;
pub mod selftest;
pub mod solver;
pub mod sp;
pub mod thresholds;
pub mod twosat;

pub use error::{Error, Result};
pub use par::Exec;
