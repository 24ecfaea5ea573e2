use nalgebra::{DMatrix, DVector};

use super::{clamp_probabilities, PopulationSummary, WeightDiagnostics, WeightMethod, WeightSet};
use crate::error::{Error, Result};
use crate::glm::DesignMatrix;
use crate::solver::{polish, solve_estimating_equation, SolveConfig};
use crate::stats::{expit, logit};

/// Residual limit, as a fraction of N, above which a stalled calibration is
/// reported as infeasible rather than merely unconverged.
const INFEASIBLE_FRACTION: f64 = 1e-4;

/// `sum_int X_i / pi(X_i, alpha) - totals`, unscaled. With logistic `pi`,
/// `1/pi = 1 + exp(-alpha'X)`.
pub fn calibration_residual(
    internal_x: &DesignMatrix,
    totals: &DVector<f64>,
    alpha: &DVector<f64>,
) -> DVector<f64> {
    let w: Vec<f64> = internal_x
        .linear_predictor(alpha)
        .iter()
        .map(|eta| 1.0 + (-eta).exp())
        .collect();
    internal_x.weighted_sum(&w) - totals
}

fn calibration_jacobian(internal_x: &DesignMatrix, alpha: &DVector<f64>) -> DMatrix<f64> {
    let w: Vec<f64> = internal_x
        .linear_predictor(alpha)
        .iter()
        .map(|eta| -(-eta).exp())
        .collect();
    internal_x.weighted_gram(&w)
}

/// Calibration estimate from population means of the selection covariates.
/// Means are matched to the design columns by name; the intercept total is N.
pub fn estimate_weights_cl(
    internal_x: &DesignMatrix,
    summary: &PopulationSummary,
    cfg: &SolveConfig,
) -> Result<WeightSet> {
    let PopulationSummary::MarginalMeans {
        names,
        means,
        population_size,
    } = summary
    else {
        return Err(Error::invalid("calibration needs a marginal-means summary"));
    };
    let n = *population_size as f64;
    let mut totals = DVector::zeros(internal_x.ncols());
    for (j, col) in internal_x.column_names().iter().enumerate() {
        if j == 0 && internal_x.has_intercept() {
            totals[j] = n;
            continue;
        }
        let k = names
            .iter()
            .position(|m| m == col)
            .ok_or_else(|| Error::MissingColumn { column: col.clone() })?;
        totals[j] = n * means[k];
    }
    estimate_weights_cl_totals(internal_x, &totals, n, cfg)
}

/// Calibration estimate from population totals of every design column
/// (the intercept total is N itself).
pub fn estimate_weights_cl_totals(
    internal_x: &DesignMatrix,
    totals: &DVector<f64>,
    population_size: f64,
    cfg: &SolveConfig,
) -> Result<WeightSet> {
    let n_int = internal_x.nrows();
    if totals.len() != internal_x.ncols() {
        return Err(Error::invalid(format!(
            "{} totals for {} design columns",
            totals.len(),
            internal_x.ncols()
        )));
    }
    if !(population_size >= n_int as f64) || n_int < internal_x.ncols() {
        return Err(Error::invalid(format!(
            "population size {population_size} is smaller than the internal sample {n_int}"
        )));
    }
    let mut init = DVector::zeros(internal_x.ncols());
    if internal_x.has_intercept() {
        init[0] = logit((n_int as f64 / population_size).clamp(1e-6, 1.0 - 1e-6));
    }
    let scale = 1.0 / population_size;
    let residual = |a: &DVector<f64>| calibration_residual(internal_x, totals, a) * scale;
    let jacobian = |a: &DVector<f64>| calibration_jacobian(internal_x, a) * scale;
    let limit = INFEASIBLE_FRACTION * population_size;
    let report = solve_estimating_equation(residual, jacobian, init, cfg).map_err(|e| match e {
        Error::MaxIterationsExceeded { report } => {
            let unscaled = report.final_residual_norm * population_size;
            if unscaled > limit {
                Error::InfeasibleTotals {
                    residual: unscaled,
                    limit,
                }
            } else {
                Error::NonConvergence {
                    model: "calibration",
                    report,
                }
            }
        }
        Error::SingularJacobian { .. } => Error::RankDeficientDesign,
        other => other,
    })?;
    let report = polish(residual, jacobian, report);

    let mut diagnostics = WeightDiagnostics {
        iterations: report.iterations,
        residual_norm: report.final_residual_norm * population_size,
        ..Default::default()
    };
    let pi_hat = clamp_probabilities(
        internal_x.linear_predictor(&report.solution).into_iter().map(expit),
        &mut diagnostics,
    );
    Ok(WeightSet {
        pi_hat,
        method: WeightMethod::Cl,
        alpha_hat: Some(report.solution),
        diagnostics,
    })
}
