//! Selection-bias correction for logistic-regression association analysis
//! in non-probability samples.
//!
//! The crate estimates internal-sample selection probabilities with four
//! methods (pseudolikelihood, simplex-regression composite, post-stratification,
//! calibration), plugs them into an inverse-probability-weighted logistic
//! score, and provides sandwich variance estimators that account for the
//! estimated selection model. A Monte Carlo harness generates populations
//! under four selection DAGs and three selection-model setups.

pub mod cli;
pub mod error;
pub mod glm;
pub mod io;
pub mod simulation;
pub mod solver;
pub mod stats;
pub mod variance;
pub mod weights;

pub use error::{Error, Result};
