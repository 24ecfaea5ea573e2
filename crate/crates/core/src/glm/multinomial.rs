use nalgebra::{DMatrix, DVector};

use super::{dot, DesignMatrix, FittedModel, ModelKind};
use crate::error::{Error, Result};
use crate::solver::{polish, solve_estimating_equation, SolveConfig};

/// Sample membership of a unit in the union of the internal and external
/// samples. The discriminant is the multinomial category code; `Both` is the
/// reference level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Membership {
    /// In both samples, (S, S_ext) = (1, 1).
    Both = 0,
    /// Internal only, (1, 0).
    InternalOnly = 1,
    /// External only, (0, 1).
    ExternalOnly = 2,
}

impl Membership {
    pub fn from_indicators(s: u8, s_ext: u8) -> Option<Self> {
        match (s, s_ext) {
            (1, 1) => Some(Membership::Both),
            (1, 0) => Some(Membership::InternalOnly),
            (0, 1) => Some(Membership::ExternalOnly),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

const CATEGORIES: usize = 3;

/// Fitted probabilities `[p_(1,1), p_(1,0), p_(0,1)]` for one covariate row,
/// given stacked coefficients `[beta_1; beta_2]` of the two non-reference
/// logits.
pub fn multinomial_probabilities(coefficients: &DVector<f64>, x: &[f64]) -> [f64; 3] {
    let q = x.len();
    let eta1 = dot(x, &coefficients.as_slice()[..q]);
    let eta2 = dot(x, &coefficients.as_slice()[q..2 * q]);
    // Shift by the largest logit to avoid overflow.
    let m = eta1.max(eta2).max(0.0);
    let e0 = (-m).exp();
    let e1 = (eta1 - m).exp();
    let e2 = (eta2 - m).exp();
    let total = e0 + e1 + e2;
    [e0 / total, e1 / total, e2 / total]
}

fn score(design: &DesignMatrix, category: &[u8], beta: &DVector<f64>) -> DVector<f64> {
    let q = design.ncols();
    let n = design.nrows() as f64;
    let mut g = DVector::zeros(2 * q);
    for (x, &c) in design.rows().zip(category) {
        let p = multinomial_probabilities(beta, x);
        for k in 1..CATEGORIES {
            let r = f64::from(u8::from(c as usize == k)) - p[k];
            for j in 0..q {
                g[(k - 1) * q + j] += r * x[j];
            }
        }
    }
    g / n
}

fn jacobian(design: &DesignMatrix, beta: &DVector<f64>) -> DMatrix<f64> {
    let q = design.ncols();
    let n = design.nrows() as f64;
    let mut h = DMatrix::zeros(2 * q, 2 * q);
    for x in design.rows() {
        let p = multinomial_probabilities(beta, x);
        for k in 1..CATEGORIES {
            for l in 1..CATEGORIES {
                let w = p[k] * (f64::from(u8::from(k == l)) - p[l]);
                for a in 0..q {
                    for b in 0..q {
                        h[((k - 1) * q + a, (l - 1) * q + b)] -= w * x[a] * x[b];
                    }
                }
            }
        }
    }
    h / n
}

/// Baseline-category logit fit for a three-level response coded 0, 1, 2
/// (0 is the reference). Coefficients are stacked as `[beta_1; beta_2]`,
/// each of length `design.ncols()`.
pub fn fit_multinomial(
    design: &DesignMatrix,
    category: &[u8],
    cfg: &SolveConfig,
) -> Result<FittedModel> {
    if category.len() != design.nrows() {
        return Err(Error::invalid(format!(
            "design has {} rows but category has {}",
            design.nrows(),
            category.len()
        )));
    }
    if let Some(i) = category.iter().position(|&c| c as usize >= CATEGORIES) {
        return Err(Error::invalid(format!(
            "category at position {i} is {}, expected 0, 1 or 2",
            category[i]
        )));
    }
    let mut counts = [0usize; CATEGORIES];
    for &c in category {
        counts[c as usize] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCategory { category: k });
    }

    let q = design.ncols();
    let report = solve_estimating_equation(
        |b| score(design, category, b),
        |b| jacobian(design, b),
        DVector::zeros(2 * q),
        cfg,
    )
    .map_err(|e| match e {
        Error::MaxIterationsExceeded { report } => Error::NonConvergence {
            model: "multinomial",
            report,
        },
        Error::SingularJacobian { .. } => Error::RankDeficientDesign,
        other => other,
    })?;
    let report = polish(
        |b| score(design, category, b),
        |b| jacobian(design, b),
        report,
    );

    let mut names = Vec::with_capacity(2 * q);
    for level in ["(1,0)", "(0,1)"] {
        names.extend(design.column_names().iter().map(|c| format!("{level}:{c}")));
    }
    Ok(FittedModel {
        coefficients: report.solution.clone(),
        vcov: None,
        report,
        kind: ModelKind::Multinomial,
        column_names: names,
        dispersion: None,
    })
}
