use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, FittedModel, ModelKind};
use crate::error::{Error, Result};
use crate::solver::{polish, solve_guarded, SolveConfig, SolveReport};
use crate::stats::expit;

/// Coefficient magnitude treated as separation; expit(30) is 1 in f64.
pub const SEPARATION_LIMIT: f64 = 30.0;

/// `(1/n) sum_i (1/pi_i) (D_i - expit(theta'Z_i)) Z_i`.
pub fn logistic_score(
    design: &DesignMatrix,
    outcome: &[u8],
    pi: &[f64],
    theta: &DVector<f64>,
) -> DVector<f64> {
    let n = design.nrows() as f64;
    let w: Vec<f64> = design
        .rows()
        .zip(outcome.iter().zip(pi))
        .map(|(z, (&d, &p))| (f64::from(d) - expit(super::dot(z, theta.as_slice()))) / p)
        .collect();
    design.weighted_sum(&w) / n
}

fn logistic_jacobian(design: &DesignMatrix, pi: &[f64], theta: &DVector<f64>) -> DMatrix<f64> {
    let n = design.nrows() as f64;
    let w: Vec<f64> = design
        .rows()
        .zip(pi)
        .map(|(z, &p)| {
            let mu = expit(super::dot(z, theta.as_slice()));
            -mu * (1.0 - mu) / p
        })
        .collect();
    design.weighted_gram(&w) / n
}

pub(crate) fn check_binary(values: &[u8], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|&v| v > 1) {
        return Err(Error::invalid(format!(
            "{what} at position {i} is {}, expected 0 or 1",
            values[i]
        )));
    }
    Ok(())
}

/// Solves the inverse-probability-weighted logistic score equation. Passing
/// `pi` identically 1 gives the ordinary unweighted fit. The returned model
/// has no variance; see [`crate::variance`].
pub fn fit_weighted_logistic(
    design: &DesignMatrix,
    outcome: &[u8],
    pi: &[f64],
    cfg: &SolveConfig,
) -> Result<FittedModel> {
    let (n, p) = (design.nrows(), design.ncols());
    if outcome.len() != n || pi.len() != n {
        return Err(Error::invalid(format!(
            "design has {n} rows but outcome has {} and pi has {}",
            outcome.len(),
            pi.len()
        )));
    }
    if n < p {
        return Err(Error::invalid(format!("{n} rows for {p} coefficients")));
    }
    check_binary(outcome, "outcome")?;
    if let Some(i) = pi.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::invalid(format!(
            "selection probability {} at position {i} is outside (0, 1]",
            pi[i]
        )));
    }
    let cases = outcome.iter().filter(|&&d| d == 1).count();
    if cases == 0 || cases == n {
        return Err(Error::DegenerateOutcome {
            value: outcome[0],
        });
    }

    // Under separation the score decays towards zero while the coefficients
    // grow without bound, so a score threshold alone can stop early on a
    // divergent path. Iterate until the Newton step itself is negligible and
    // check the score afterwards.
    let step_cfg = SolveConfig {
        tol_score: f64::MIN_POSITIVE,
        ..*cfg
    };
    let report = solve_guarded(
        |t| logistic_score(design, outcome, pi, t),
        |t| logistic_jacobian(design, pi, t),
        DVector::zeros(p),
        &step_cfg,
        |t, iteration| {
            if t.iter().any(|c| c.abs() > SEPARATION_LIMIT) {
                Err(Error::Separation {
                    iteration,
                    limit: SEPARATION_LIMIT,
                })
            } else {
                Ok(())
            }
        },
    )
    .map_err(|e| match e {
        Error::MaxIterationsExceeded { report } => Error::NonConvergence {
            model: "logistic",
            report,
        },
        Error::SingularJacobian { .. } => Error::RankDeficientDesign,
        other => other,
    })?;
    let report = polish(
        |t| logistic_score(design, outcome, pi, t),
        |t| logistic_jacobian(design, pi, t),
        report,
    );
    if report.final_residual_norm > cfg.tol_score {
        return Err(Error::NonConvergence {
            model: "logistic",
            report: SolveReport {
                converged: false,
                ..report
            },
        });
    }

    Ok(FittedModel {
        coefficients: report.solution.clone(),
        vcov: None,
        report,
        kind: ModelKind::Logistic,
        column_names: design.column_names().to_vec(),
        dispersion: None,
    })
}
