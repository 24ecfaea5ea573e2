use nalgebra::{DMatrix, DVector};

use super::{dot, DesignMatrix, FittedModel, ModelKind};
use crate::error::{Error, Result};
use crate::solver::{polish, solve_estimating_equation, SolveConfig};
use crate::stats::expit;

/// Simplex unit deviance
/// `d(y, mu) = (y - mu)^2 / (y (1 - y) mu^2 (1 - mu)^2)`.
pub fn simplex_unit_deviance(y: f64, mu: f64) -> f64 {
    let v = mu * (1.0 - mu);
    (y - mu).powi(2) / (y * (1.0 - y) * v * v)
}

/// Log density of the simplex distribution S(mu, sigma^2) at `y` in (0, 1).
pub fn simplex_log_density(y: f64, mu: f64, sigma2: f64) -> f64 {
    let v = y * (1.0 - y);
    -0.5 * (2.0 * std::f64::consts::PI * sigma2 * v * v * v).ln()
        - simplex_unit_deviance(y, mu) / (2.0 * sigma2)
}

// Per-unit first and second derivatives of d(y, expit(eta)) with respect to
// eta. With u = (y - mu) / (mu (1 - mu)) and a = 1 / (y (1 - y)), d = a u^2,
// du/deta = -1 - u (1 - 2 mu) and d2u/deta2 = -(1 - 2 mu) du/deta + 2 u mu (1 - mu).
fn deviance_derivatives(y: f64, eta: f64) -> (f64, f64) {
    let mu = expit(eta);
    let v = mu * (1.0 - mu);
    let a = 1.0 / (y * (1.0 - y));
    let u = (y - mu) / v;
    let du = -1.0 - u * (1.0 - 2.0 * mu);
    let d2u = -(1.0 - 2.0 * mu) * du + 2.0 * u * v;
    (2.0 * a * u * du, 2.0 * a * (du * du + u * d2u))
}

fn gradient(design: &DesignMatrix, y: &[f64], delta: &DVector<f64>) -> DVector<f64> {
    let n = design.nrows() as f64;
    let w: Vec<f64> = design
        .rows()
        .zip(y)
        .map(|(x, &yi)| deviance_derivatives(yi, dot(x, delta.as_slice())).0)
        .collect();
    design.weighted_sum(&w) / n
}

fn hessian(design: &DesignMatrix, y: &[f64], delta: &DVector<f64>) -> DMatrix<f64> {
    let n = design.nrows() as f64;
    let w: Vec<f64> = design
        .rows()
        .zip(y)
        .map(|(x, &yi)| deviance_derivatives(yi, dot(x, delta.as_slice())).1)
        .collect();
    design.weighted_gram(&w) / n
}

// Quasi-likelihood (fractional logit) start: sum_i (y_i - mu_i) x_i = 0.
fn quasi_logistic_start(
    design: &DesignMatrix,
    y: &[f64],
    cfg: &SolveConfig,
) -> Result<DVector<f64>> {
    let n = design.nrows() as f64;
    let rep = solve_estimating_equation(
        |d| {
            let r: Vec<f64> = design
                .rows()
                .zip(y)
                .map(|(x, &yi)| yi - expit(dot(x, d.as_slice())))
                .collect();
            design.weighted_sum(&r) / n
        },
        |d| {
            let w: Vec<f64> = design
                .rows()
                .map(|x| {
                    let mu = expit(dot(x, d.as_slice()));
                    -mu * (1.0 - mu)
                })
                .collect();
            design.weighted_gram(&w) / n
        },
        DVector::zeros(design.ncols()),
        cfg,
    )?;
    Ok(rep.solution)
}

/// Simplex regression with logit mean link. The mean coefficients minimize
/// the total unit deviance (the dispersion-free part of the likelihood) and
/// the dispersion is profiled as the mean unit deviance at the fit.
pub fn fit_simplex_regression(
    design: &DesignMatrix,
    response: &[f64],
    cfg: &SolveConfig,
) -> Result<FittedModel> {
    if response.len() != design.nrows() {
        return Err(Error::invalid(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            response.len()
        )));
    }
    if design.nrows() < design.ncols() {
        return Err(Error::invalid("fewer rows than coefficients"));
    }
    if let Some(i) = response.iter().position(|&y| !(y > 0.0 && y < 1.0)) {
        return Err(Error::ResponseOnBoundary {
            index: i,
            value: response[i],
        });
    }

    let map_err = |e| match e {
        Error::MaxIterationsExceeded { report } => Error::NonConvergence {
            model: "simplex",
            report,
        },
        Error::SingularJacobian { .. } => Error::RankDeficientDesign,
        other => other,
    };
    let start = quasi_logistic_start(design, response, cfg).map_err(map_err)?;
    let report = solve_estimating_equation(
        |d| gradient(design, response, d),
        |d| hessian(design, response, d),
        start,
        cfg,
    )
    .map_err(map_err)?;
    let report = polish(
        |d| gradient(design, response, d),
        |d| hessian(design, response, d),
        report,
    );

    let delta = &report.solution;
    let sigma2 = design
        .rows()
        .zip(response)
        .map(|(x, &y)| simplex_unit_deviance(y, expit(dot(x, delta.as_slice()))))
        .sum::<f64>()
        / design.nrows() as f64;

    Ok(FittedModel {
        coefficients: delta.clone(),
        vcov: None,
        report,
        kind: ModelKind::Simplex,
        column_names: design.column_names().to_vec(),
        dispersion: Some(sigma2),
    })
}
