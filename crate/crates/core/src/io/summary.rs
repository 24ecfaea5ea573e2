use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::weights::{cell_label, CellKey, PopulationSummary};

/// Accepted deviation of joint cell probabilities from a unit sum.
const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    /// One row per cell: a level column per variable, then `probability`.
    /// An optional row with `N` in the first column and the population
    /// size in its last non-empty field gives N.
    JointCells,
    /// `name,value` rows plus a required `N` row.
    MarginalMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSummary {
    pub summary: PopulationSummary,
    pub warnings: Vec<String>,
}

fn parse_number(s: &str, row: usize, column: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumericCell {
            row,
            column: column.into(),
            value: s.into(),
        })
}

fn parse_population_size(s: &str, row: usize, column: &str) -> Result<u64> {
    let v = parse_number(s, row, column)?;
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::invalid(format!("population size {s:?} is not a positive integer")));
    }
    Ok(v as u64)
}

pub fn load_population_summary(path: impl AsRef<Path>, kind: SummaryKind) -> Result<LoadedSummary> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    match kind {
        SummaryKind::JointCells => joint_cells(&header, &records),
        SummaryKind::MarginalMeans => marginal_means(&header, &records),
    }
}

fn joint_cells(header: &[String], records: &[csv::StringRecord]) -> Result<LoadedSummary> {
    let Some((last, variables)) = header.split_last() else {
        return Err(Error::invalid("empty summary header"));
    };
    if last != "probability" || variables.is_empty() {
        return Err(Error::MissingColumn {
            column: "probability".into(),
        });
    }
    let mut cells: BTreeMap<CellKey, f64> = BTreeMap::new();
    let mut population_size = None;
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let fields: Vec<&str> = rec.iter().collect();
        if fields.first() == Some(&"N") {
            let value = fields[1..].iter().rev().find(|f| !f.is_empty()).copied().unwrap_or("");
            population_size = Some(parse_population_size(value, row, last)?);
            continue;
        }
        if fields.len() != header.len() {
            return Err(Error::invalid(format!(
                "summary row {row} has {} fields, expected {}",
                fields.len(),
                header.len()
            )));
        }
        let key: CellKey = fields[..variables.len()].iter().map(|s| s.to_string()).collect();
        let p = parse_number(fields[variables.len()], row, last)?;
        if p < 0.0 {
            return Err(Error::invalid(format!("negative probability in summary row {row}")));
        }
        if cells.insert(key.clone(), p).is_some() {
            return Err(Error::DuplicateCell { cell: cell_label(&key) });
        }
    }
    let sum: f64 = cells.values().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::ProbabilitySumOutOfRange { sum });
    }
    let mut warnings = Vec::new();
    if sum != 1.0 {
        cells.values_mut().for_each(|p| *p /= sum);
        let resum: f64 = cells.values().sum();
        if (resum - 1.0).abs() > 1e-9 {
            return Err(Error::ProbabilitySumOutOfRange { sum: resum });
        }
        if (sum - 1.0).abs() > 1e-12 {
            warnings.push(format!("cell probabilities summed to {sum}; renormalized"));
        }
    }
    Ok(LoadedSummary {
        summary: PopulationSummary::joint_cells(variables.to_vec(), cells, population_size)?,
        warnings,
    })
}

fn marginal_means(header: &[String], records: &[csv::StringRecord]) -> Result<LoadedSummary> {
    if header != ["name", "value"] {
        return Err(Error::invalid("marginal-means summary header must be name,value"));
    }
    let mut names: Vec<String> = Vec::new();
    let mut means = Vec::new();
    let mut population_size = None;
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let (Some(name), Some(value)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::invalid(format!("summary row {row} needs a name and a value")));
        };
        if name == "N" {
            if population_size.is_some() {
                return Err(Error::DuplicateCell { cell: "N".into() });
            }
            population_size = Some(parse_population_size(value, row, "value")?);
            continue;
        }
        if names.iter().any(|n| n == name) {
            return Err(Error::DuplicateCell { cell: name.into() });
        }
        names.push(name.into());
        means.push(parse_number(value, row, "value")?);
    }
    let population_size = population_size.ok_or(Error::MissingN)?;
    Ok(LoadedSummary {
        summary: PopulationSummary::marginal_means(names, means, population_size)?,
        warnings: Vec::new(),
    })
}
