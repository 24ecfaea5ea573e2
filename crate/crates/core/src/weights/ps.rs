use std::collections::BTreeMap;

use super::{cell_label, CellKey, PopulationSummary, WeightDiagnostics, WeightMethod, WeightSet};
use crate::error::{Error, Result};

/// Post-stratification: `w_i` proportional to `P(X'_i) / P_hat(X'_i | S=1)`,
/// rescaled so that the internal weights sum to N; `pi_i = 1 / w_i`.
pub fn estimate_weights_ps(
    internal_cells: &[CellKey],
    summary: &PopulationSummary,
) -> Result<WeightSet> {
    let PopulationSummary::JointCells { cells, .. } = summary else {
        return Err(Error::invalid("post-stratification needs a joint-cells summary"));
    };
    let population_size = summary.population_size().ok_or(Error::MissingN)? as f64;
    let n = internal_cells.len();
    if n == 0 {
        return Err(Error::invalid("internal sample is empty"));
    }
    if population_size < n as f64 {
        return Err(Error::invalid(format!(
            "population size {population_size} is smaller than the internal sample {n}"
        )));
    }

    let mut counts: BTreeMap<&CellKey, usize> = BTreeMap::new();
    for key in internal_cells {
        *counts.entry(key).or_default() += 1;
    }
    let mut raw = Vec::with_capacity(n);
    for (unit, key) in internal_cells.iter().enumerate() {
        let p = cells.get(key).copied().unwrap_or(0.0);
        if !(p > 0.0) {
            return Err(Error::UnmatchedCell {
                unit,
                cell: cell_label(key),
            });
        }
        raw.push(p / (counts[key] as f64 / n as f64));
    }
    let total: f64 = raw.iter().sum();
    let scale = population_size / total;

    let mut diagnostics = WeightDiagnostics::default();
    let pi_hat = raw
        .iter()
        .map(|r| {
            let pi = 1.0 / (r * scale);
            if pi > 1.0 {
                diagnostics.clamped_high += 1;
                1.0
            } else {
                pi
            }
        })
        .collect();
    Ok(WeightSet {
        pi_hat,
        method: WeightMethod::Ps,
        alpha_hat: None,
        diagnostics,
    })
}
