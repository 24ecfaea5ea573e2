//! Selection-probability estimators for the internal sample and weight
//! post-processing.
//!
//! Every estimator returns a [`WeightSet`] whose `pi_hat` is aligned with
//! the internal-sample rows it was given. Probabilities are clamped to
//! `[PI_FLOOR, 1]` and each clamp is counted in the diagnostics.

mod cl;
mod pl;
mod post;
mod ps;
mod sr;

pub use cl::{calibration_residual, estimate_weights_cl, estimate_weights_cl_totals};
pub use pl::{estimate_weights_pl, pseudolikelihood_residual};
pub use post::{augment_weights_with_outcome, coarsen, winsorize_weights, CoarseningRule};
pub use ps::estimate_weights_ps;
pub use sr::{composite_probability, estimate_weights_sr, Overlap};

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Smallest selection probability any estimator returns.
pub const PI_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMethod {
    Pl,
    Sr,
    Ps,
    Cl,
    Known,
}

impl WeightMethod {
    pub fn name(self) -> &'static str {
        match self {
            WeightMethod::Pl => "pl",
            WeightMethod::Sr => "sr",
            WeightMethod::Ps => "ps",
            WeightMethod::Cl => "cl",
            WeightMethod::Known => "known",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightDiagnostics {
    /// Newton iterations of the selection-model fit (0 for closed forms).
    pub iterations: usize,
    /// Max-abs residual of the defining equation at the solution.
    pub residual_norm: f64,
    /// Units raised to [`PI_FLOOR`].
    pub clamped_low: usize,
    /// Units lowered to 1.
    pub clamped_high: usize,
}

impl WeightDiagnostics {
    pub fn clamp_count(&self) -> usize {
        self.clamped_low + self.clamped_high
    }
}

#[derive(Debug, Clone)]
pub struct WeightSet {
    pub pi_hat: Vec<f64>,
    pub method: WeightMethod,
    /// Selection-model coefficients, present for PL and CL.
    pub alpha_hat: Option<DVector<f64>>,
    pub diagnostics: WeightDiagnostics,
}

impl WeightSet {
    /// Wraps externally known probabilities, clamping as the estimators do.
    pub fn known(pi: &[f64]) -> Result<Self> {
        if let Some(i) = pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::invalid(format!(
                "probability {} at unit {i} is outside (0, 1]",
                pi[i]
            )));
        }
        let mut diagnostics = WeightDiagnostics::default();
        let pi_hat = clamp_probabilities(pi.iter().copied(), &mut diagnostics);
        Ok(Self {
            pi_hat,
            method: WeightMethod::Known,
            alpha_hat: None,
            diagnostics,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.pi_hat.iter().map(|p| 1.0 / p).collect()
    }
}

pub(crate) fn clamp_probabilities(
    values: impl Iterator<Item = f64>,
    diagnostics: &mut WeightDiagnostics,
) -> Vec<f64> {
    values
        .map(|p| {
            if !(p >= PI_FLOOR) {
                diagnostics.clamped_low += 1;
                PI_FLOOR
            } else if p > 1.0 {
                diagnostics.clamped_high += 1;
                1.0
            } else {
                p
            }
        })
        .collect()
}

/// Discretized selection-variable levels of one unit, in the summary's
/// variable order.
pub type CellKey = Vec<String>;

pub fn cell_label(key: &CellKey) -> String {
    format!("({})", key.join(","))
}

/// Population-level information about the selection variables.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationSummary {
    /// Joint probabilities of discretized selection variables.
    JointCells {
        variables: Vec<String>,
        cells: BTreeMap<CellKey, f64>,
        population_size: Option<u64>,
    },
    /// Population means of selection covariates together with N.
    MarginalMeans {
        names: Vec<String>,
        means: Vec<f64>,
        population_size: u64,
    },
}

impl PopulationSummary {
    pub fn joint_cells(
        variables: Vec<String>,
        cells: BTreeMap<CellKey, f64>,
        population_size: Option<u64>,
    ) -> Result<Self> {
        if let Some((k, _)) = cells.iter().find(|(k, _)| k.len() != variables.len()) {
            return Err(Error::invalid(format!(
                "cell {} has {} levels for {} variables",
                cell_label(k),
                k.len(),
                variables.len()
            )));
        }
        if let Some((k, p)) = cells.iter().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!(
                "cell {} has probability {p}",
                cell_label(k)
            )));
        }
        let sum: f64 = cells.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ProbabilitySumOutOfRange { sum });
        }
        Ok(PopulationSummary::JointCells {
            variables,
            cells,
            population_size,
        })
    }

    pub fn marginal_means(names: Vec<String>, means: Vec<f64>, population_size: u64) -> Result<Self> {
        if names.len() != means.len() {
            return Err(Error::invalid("names and means differ in length"));
        }
        if let Some(i) = means.iter().position(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("mean of {:?} is not finite", names[i])));
        }
        if population_size == 0 {
            return Err(Error::invalid("population size must be positive"));
        }
        Ok(PopulationSummary::MarginalMeans {
            names,
            means,
            population_size,
        })
    }

    pub fn population_size(&self) -> Option<u64> {
        match self {
            PopulationSummary::JointCells {
                population_size, ..
            } => *population_size,
            PopulationSummary::MarginalMeans {
                population_size, ..
            } => Some(*population_size),
        }
    }
}
