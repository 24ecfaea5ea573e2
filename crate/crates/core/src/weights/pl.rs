use nalgebra::{DMatrix, DVector};

use super::{clamp_probabilities, WeightDiagnostics, WeightMethod, WeightSet};
use crate::error::{Error, Result};
use crate::glm::DesignMatrix;
use crate::solver::{polish, solve_estimating_equation, SolveConfig};
use crate::stats::{expit, logit};

fn check_inputs(internal_x: &DesignMatrix, external_x: &DesignMatrix, pi_ext: &[f64]) -> Result<()> {
    if internal_x.column_names() != external_x.column_names() {
        return Err(Error::invalid(format!(
            "internal columns {:?} differ from external columns {:?}",
            internal_x.column_names(),
            external_x.column_names()
        )));
    }
    if pi_ext.len() != external_x.nrows() {
        return Err(Error::invalid(format!(
            "{} external rows but {} external probabilities",
            external_x.nrows(),
            pi_ext.len()
        )));
    }
    if let Some(i) = pi_ext.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::invalid(format!(
            "external probability {} at row {i} is outside (0, 1]",
            pi_ext[i]
        )));
    }
    if internal_x.nrows() == 0 || external_x.nrows() < external_x.ncols() {
        return Err(Error::invalid("internal or external sample is too small"));
    }
    Ok(())
}

/// `(1/N) [sum_int X - sum_ext (1/pi_ext) expit(alpha'X) X]` with
/// `N = sum_ext 1/pi_ext`.
pub fn pseudolikelihood_residual(
    internal_x: &DesignMatrix,
    external_x: &DesignMatrix,
    pi_ext: &[f64],
    alpha: &DVector<f64>,
) -> DVector<f64> {
    let n_hat: f64 = pi_ext.iter().map(|p| 1.0 / p).sum();
    let internal = internal_x.weighted_sum(&vec![1.0; internal_x.nrows()]);
    let w: Vec<f64> = external_x
        .linear_predictor(alpha)
        .iter()
        .zip(pi_ext)
        .map(|(eta, p)| expit(*eta) / p)
        .collect();
    (internal - external_x.weighted_sum(&w)) / n_hat
}

fn pseudolikelihood_jacobian(
    external_x: &DesignMatrix,
    pi_ext: &[f64],
    alpha: &DVector<f64>,
) -> DMatrix<f64> {
    let n_hat: f64 = pi_ext.iter().map(|p| 1.0 / p).sum();
    let w: Vec<f64> = external_x
        .linear_predictor(alpha)
        .iter()
        .zip(pi_ext)
        .map(|(eta, p)| {
            let mu = expit(*eta);
            -mu * (1.0 - mu) / p
        })
        .collect();
    external_x.weighted_gram(&w) / n_hat
}

/// Pseudolikelihood estimate of a logistic internal-selection model from an
/// external probability sample with known design probabilities `pi_ext`.
pub fn estimate_weights_pl(
    internal_x: &DesignMatrix,
    external_x: &DesignMatrix,
    pi_ext: &[f64],
    cfg: &SolveConfig,
) -> Result<WeightSet> {
    check_inputs(internal_x, external_x, pi_ext)?;
    let mut init = DVector::zeros(internal_x.ncols());
    if internal_x.has_intercept() {
        let n_hat: f64 = pi_ext.iter().map(|p| 1.0 / p).sum();
        init[0] = logit((internal_x.nrows() as f64 / n_hat).clamp(1e-6, 1.0 - 1e-6));
    }
    let report = solve_estimating_equation(
        |a| pseudolikelihood_residual(internal_x, external_x, pi_ext, a),
        |a| pseudolikelihood_jacobian(external_x, pi_ext, a),
        init,
        cfg,
    )
    .map_err(|e| match e {
        Error::MaxIterationsExceeded { report } => Error::NonConvergence {
            model: "pseudolikelihood",
            report,
        },
        Error::SingularJacobian { .. } => Error::RankDeficientDesign,
        other => other,
    })?;
    let report = polish(
        |a| pseudolikelihood_residual(internal_x, external_x, pi_ext, a),
        |a| pseudolikelihood_jacobian(external_x, pi_ext, a),
        report,
    );

    let mut diagnostics = WeightDiagnostics {
        iterations: report.iterations,
        residual_norm: report.final_residual_norm,
        ..Default::default()
    };
    let pi_hat = clamp_probabilities(
        internal_x.linear_predictor(&report.solution).into_iter().map(expit),
        &mut diagnostics,
    );
    Ok(WeightSet {
        pi_hat,
        method: WeightMethod::Pl,
        alpha_hat: Some(report.solution),
        diagnostics,
    })
}
