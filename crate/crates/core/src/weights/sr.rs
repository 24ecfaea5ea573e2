use super::{clamp_probabilities, WeightDiagnostics, WeightMethod, WeightSet};
use crate::error::{Error, Result};
use crate::glm::{
    fit_multinomial, fit_simplex_regression, multinomial_probabilities, DesignMatrix, Membership,
};
use crate::solver::SolveConfig;
use crate::stats::expit;

/// Denominators below this are treated as zero.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Which internal units also belong to the external sample and vice versa.
/// Units flagged on both sides are the same people; the union sample is the
/// internal rows followed by the external rows not flagged here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlap {
    pub internal_in_external: Vec<bool>,
    pub external_in_internal: Vec<bool>,
}

impl Overlap {
    /// No unit in both samples.
    pub fn disjoint(n_internal: usize, n_external: usize) -> Self {
        Self {
            internal_in_external: vec![false; n_internal],
            external_in_internal: vec![false; n_external],
        }
    }

    fn validate(&self, n_internal: usize, n_external: usize) -> Result<()> {
        if self.internal_in_external.len() != n_internal
            || self.external_in_internal.len() != n_external
        {
            return Err(Error::invalid("overlap flags do not match sample sizes"));
        }
        let a = self.internal_in_external.iter().filter(|&&b| b).count();
        let b = self.external_in_internal.iter().filter(|&&b| b).count();
        if a != b {
            return Err(Error::invalid(format!(
                "{a} internal units flagged as external but {b} external units flagged as internal"
            )));
        }
        Ok(())
    }
}

/// `P(S_ext=1|X) (p11 + p10) / (p11 + p01)`, where `p` holds the union-sample
/// membership probabilities in [`Membership`] order: (1,1), (1,0), (0,1).
pub fn composite_probability(p_ext: f64, p: [f64; 3]) -> f64 {
    p_ext * (p[0] + p[1]) / (p[0] + p[2])
}

/// Simplex-regression composite estimate. `P(S_ext=1|X)` is modeled by
/// simplex regression of `pi_ext` on the external rows, the membership
/// probabilities by a baseline-category logit on the union sample.
pub fn estimate_weights_sr(
    internal_x: &DesignMatrix,
    external_x: &DesignMatrix,
    pi_ext: &[f64],
    overlap: &Overlap,
    cfg: &SolveConfig,
) -> Result<WeightSet> {
    if internal_x.column_names() != external_x.column_names() {
        return Err(Error::invalid("internal and external designs have different columns"));
    }
    if pi_ext.len() != external_x.nrows() {
        return Err(Error::invalid(format!(
            "{} external rows but {} external probabilities",
            external_x.nrows(),
            pi_ext.len()
        )));
    }
    overlap.validate(internal_x.nrows(), external_x.nrows())?;

    let external_fit = fit_simplex_regression(external_x, pi_ext, cfg)?;

    let external_only: Vec<usize> = (0..external_x.nrows())
        .filter(|&i| !overlap.external_in_internal[i])
        .collect();
    let mut data = Vec::with_capacity((internal_x.nrows() + external_only.len()) * internal_x.ncols());
    let mut category = Vec::with_capacity(internal_x.nrows() + external_only.len());
    for (i, row) in internal_x.rows().enumerate() {
        data.extend_from_slice(row);
        category.push(if overlap.internal_in_external[i] {
            Membership::Both.code()
        } else {
            Membership::InternalOnly.code()
        });
    }
    for &i in &external_only {
        data.extend_from_slice(external_x.row(i));
        category.push(Membership::ExternalOnly.code());
    }
    let union = DesignMatrix::new(
        data,
        category.len(),
        internal_x.column_names().to_vec(),
        internal_x.has_intercept(),
    )?;
    let membership_fit = fit_multinomial(&union, &category, cfg)?;

    let mut raw = Vec::with_capacity(internal_x.nrows());
    for (i, row) in internal_x.rows().enumerate() {
        let p = multinomial_probabilities(&membership_fit.coefficients, row);
        let denominator = p[0] + p[2];
        if denominator < DENOMINATOR_FLOOR {
            return Err(Error::DegenerateDenominator {
                unit: i,
                value: denominator,
            });
        }
        let p_ext = expit(crate::glm::dot(row, external_fit.coefficients.as_slice()));
        raw.push(composite_probability(p_ext, p));
    }

    let mut diagnostics = WeightDiagnostics {
        iterations: external_fit.report.iterations + membership_fit.report.iterations,
        residual_norm: external_fit
            .report
            .final_residual_norm
            .max(membership_fit.report.final_residual_norm),
        ..Default::default()
    };
    let pi_hat = clamp_probabilities(raw.into_iter(), &mut diagnostics);
    Ok(WeightSet {
        pi_hat,
        method: WeightMethod::Sr,
        alpha_hat: None,
        diagnostics,
    })
}
