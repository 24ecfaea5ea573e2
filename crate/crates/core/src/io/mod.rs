//! File formats: column-role and simulation config files, analysis
//! datasets, population summaries, result tables and population export.

mod config;
mod dataset;
mod output;
mod roles;
mod summary;

pub use config::{parse_simulation_config, read_simulation_config};
pub use dataset::{
    export_population, load_dataset, load_external_sample, AnalysisSample, ExternalSample,
};
pub use output::{format_number, OutputFormat, ResultRow, ResultTable, StudyTable, WeightTable};
pub use roles::ColumnRoleMap;
pub use summary::{load_population_summary, LoadedSummary, SummaryKind};

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; repeated keys are rejected. Returns `(line, key, value)`.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected key = value, got {trimmed:?}"),
            });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config {
                line,
                message: "empty key".into(),
            });
        }
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
        out.push((line, key, value.trim().to_string()));
    }
    Ok(out)
}

/// Comma-separated list, trimmed, empty items dropped.
pub(crate) fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}
