use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Replaces weights below the `lower_q` sample quantile by that quantile and
/// weights above the `upper_q` quantile by that one. Quantiles interpolate
/// linearly between order statistics (position `1 + (n-1) q`).
pub fn winsorize_weights(w: &[f64], lower_q: f64, upper_q: f64) -> Result<Vec<f64>> {
    if !(0.0 <= lower_q && lower_q < upper_q && upper_q <= 1.0) {
        return Err(Error::invalid(format!(
            "winsorizing quantiles ({lower_q}, {upper_q}) must satisfy 0 <= lo < hi <= 1"
        )));
    }
    if let Some(i) = w.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::invalid(format!("weight {} at unit {i} is not positive", w[i])));
    }
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, lower_q);
    let hi = quantile_sorted(&sorted, upper_q);
    Ok(w.iter().map(|x| x.clamp(lo, hi)).collect())
}

/// `w0 * p_pop^D (1-p_pop)^(1-D) / (p_int^D (1-p_int)^(1-D))`.
pub fn augment_weights_with_outcome(
    w0: &[f64],
    outcome: &[u8],
    p_pop: &[f64],
    p_int: &[f64],
) -> Result<Vec<f64>> {
    let n = w0.len();
    if outcome.len() != n || p_pop.len() != n || p_int.len() != n {
        return Err(Error::invalid("augmentation inputs differ in length"));
    }
    let open = |p: f64| p > 0.0 && p < 1.0;
    (0..n)
        .map(|i| {
            if !(w0[i] > 0.0) || !open(p_pop[i]) || !open(p_int[i]) || outcome[i] > 1 {
                return Err(Error::invalid(format!("invalid augmentation input at unit {i}")));
            }
            Ok(if outcome[i] == 1 {
                w0[i] * p_pop[i] / p_int[i]
            } else {
                w0[i] * (1.0 - p_pop[i]) / (1.0 - p_int[i])
            })
        })
        .collect()
}

/// Discretization of one continuous variable: label `k` means the value lies
/// in `[cutoff_k, cutoff_{k+1})`, with open ends below the first and above
/// the last cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningRule {
    pub variable: String,
    pub cutoffs: Vec<f64>,
}

impl CoarseningRule {
    /// Default quantile levels for the cutoffs.
    pub const DEFAULT_QUANTILES: [f64; 2] = [0.15, 0.85];

    pub fn new(variable: impl Into<String>, cutoffs: Vec<f64>) -> Result<Self> {
        if cutoffs.iter().any(|c| !c.is_finite()) || cutoffs.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::DegenerateCutoffs { cutoffs });
        }
        Ok(Self {
            variable: variable.into(),
            cutoffs,
        })
    }

    /// Cutoffs at the given sample quantiles of `values`.
    pub fn from_quantiles(variable: impl Into<String>, values: &[f64], levels: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot take quantiles of an empty column"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cutoffs = levels.iter().map(|&q| quantile_sorted(&sorted, q)).collect();
        Self::new(variable, cutoffs)
    }

    pub fn bins(&self) -> usize {
        self.cutoffs.len() + 1
    }

    pub fn label(&self, value: f64) -> usize {
        self.cutoffs.partition_point(|c| *c <= value)
    }
}

/// Bin labels of `values` under `rule`.
pub fn coarsen(values: &[f64], rule: &CoarseningRule) -> Vec<usize> {
    values.iter().map(|&v| rule.label(v)).collect()
}
