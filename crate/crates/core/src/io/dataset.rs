use std::collections::BTreeMap;
use std::path::Path;

use super::output::format_number;
use super::roles::ColumnRoleMap;
use crate::error::{Error, Result};
use crate::glm::DesignMatrix;
use crate::simulation::Population;
use crate::weights::CellKey;

const MISSING_TOKENS: [&str; 6] = ["", "NA", "NaN", "nan", "null", "."];

/// Validated analysis dataset. Rows are numbered from 1, header excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSample {
    pub roles: ColumnRoleMap,
    pub n_rows: usize,
    columns: BTreeMap<String, Vec<f64>>,
    /// Missing-value counts of unmapped columns.
    pub missing_counts: BTreeMap<String, usize>,
}

/// External probability sample with known design probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSample {
    pub x: DesignMatrix,
    pub pi_ext: Vec<f64>,
    /// Flags external units that are also internal, when known.
    pub in_internal: Option<Vec<bool>>,
}

struct Table {
    n_rows: usize,
    columns: BTreeMap<String, Vec<f64>>,
    missing_counts: BTreeMap<String, usize>,
}

/// Reads a comma-separated file. `required` columns must exist; `optional`
/// ones are read when present. Both must hold numbers in every row, and
/// `binary` columns must hold 0 or 1.
fn read_table(path: &Path, required: &[String], optional: &[String], binary: &[&str]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    for name in required {
        if !header.contains(name) {
            return Err(Error::MissingColumn { column: name.clone() });
        }
    }
    let wanted: Vec<(usize, &String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| required.contains(h) || optional.contains(h))
        .collect();
    let mut columns: BTreeMap<String, Vec<f64>> =
        wanted.iter().map(|(_, h)| ((*h).clone(), Vec::new())).collect();
    let mut missing_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        n_rows = row;
        for (j, name) in header.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            let Some(col) = columns.get_mut(name) else {
                if MISSING_TOKENS.contains(&cell) {
                    *missing_counts.entry(name.clone()).or_default() += 1;
                }
                continue;
            };
            let value = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let is_binary = binary.contains(&name.as_str());
            match value {
                Some(v) if !is_binary || v == 0.0 || v == 1.0 => col.push(v),
                Some(_) => {
                    return Err(Error::NonBinaryIndicator {
                        row,
                        column: name.clone(),
                        value: cell.into(),
                    })
                }
                None if is_binary && !MISSING_TOKENS.contains(&cell) => {
                    return Err(Error::NonBinaryIndicator {
                        row,
                        column: name.clone(),
                        value: cell.into(),
                    })
                }
                None => {
                    return Err(Error::NonNumericCell {
                        row,
                        column: name.clone(),
                        value: cell.into(),
                    })
                }
            }
        }
    }
    Ok(Table {
        n_rows,
        columns,
        missing_counts,
    })
}

/// Loads an analysis dataset. Outcome, disease and selection covariates and
/// the selection indicator (when mapped) are required; the external
/// indicator, external probability and population outcome probability
/// columns are read when present.
pub fn load_dataset(path: impl AsRef<Path>, roles: &ColumnRoleMap) -> Result<AnalysisSample> {
    roles.validate()?;
    let mut required: Vec<String> = std::iter::once(roles.outcome.clone())
        .chain(roles.disease_covariates.iter().cloned())
        .chain(roles.selection_covariates.iter().cloned())
        .chain(roles.selection_indicator.iter().cloned())
        .collect();
    required.dedup();
    let optional: Vec<String> = roles
        .external_indicator
        .iter()
        .chain(&roles.external_prob)
        .chain(&roles.population_outcome_prob)
        .cloned()
        .collect();
    let table = read_table(path.as_ref(), &required, &optional, &roles.binary_columns())?;
    if table.n_rows == 0 {
        return Err(Error::invalid("dataset has no rows"));
    }
    Ok(AnalysisSample {
        roles: roles.clone(),
        n_rows: table.n_rows,
        columns: table.columns,
        missing_counts: table.missing_counts,
    })
}

/// Loads an external sample file: the selection design columns and the
/// external probability column are required; the selection indicator, when
/// mapped and present, marks units that are also internal.
pub fn load_external_sample(path: impl AsRef<Path>, roles: &ColumnRoleMap) -> Result<ExternalSample> {
    let prob = roles
        .external_prob
        .clone()
        .ok_or_else(|| Error::invalid("roles do not name an external_prob column"))?;
    let mut required = roles.selection_design_columns();
    required.push(prob.clone());
    let optional: Vec<String> = roles.selection_indicator.iter().cloned().collect();
    let binary: Vec<&str> = std::iter::once(roles.outcome.as_str())
        .chain(roles.selection_indicator.as_deref())
        .collect();
    let table = read_table(path.as_ref(), &required, &optional, &binary)?;
    if table.n_rows == 0 {
        return Err(Error::invalid("external sample has no rows"));
    }
    let rows: Vec<usize> = (0..table.n_rows).collect();
    let x = build_design(&table.columns, &roles.selection_design_columns(), &rows)?;
    let pi_ext = table.columns[&prob].clone();
    check_probabilities(&pi_ext, &prob)?;
    let in_internal = roles
        .selection_indicator
        .as_ref()
        .and_then(|c| table.columns.get(c))
        .map(|v| v.iter().map(|&s| s == 1.0).collect());
    Ok(ExternalSample {
        x,
        pi_ext,
        in_internal,
    })
}

fn check_probabilities(p: &[f64], column: &str) -> Result<()> {
    if let Some(i) = p.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(Error::invalid(format!(
            "row {}, column {column:?}: probability {} outside (0, 1]",
            i + 1,
            p[i]
        )));
    }
    Ok(())
}

fn build_design(columns: &BTreeMap<String, Vec<f64>>, names: &[String], rows: &[usize]) -> Result<DesignMatrix> {
    let picked: Vec<Vec<f64>> = names
        .iter()
        .map(|n| {
            let col = columns
                .get(n)
                .ok_or_else(|| Error::MissingColumn { column: n.clone() })?;
            Ok(rows.iter().map(|&r| col[r]).collect())
        })
        .collect::<Result<_>>()?;
    let named: Vec<(&str, &[f64])> = names
        .iter()
        .zip(&picked)
        .map(|(n, c)| (n.as_str(), c.as_slice()))
        .collect();
    if named.is_empty() {
        return Ok(DesignMatrix::intercept_only(rows.len()));
    }
    DesignMatrix::with_intercept(&named)
}

impl AnalysisSample {
    /// Values of a loaded column.
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn { column: name.into() })
    }

    /// Zero-based indices of internal units: rows flagged by the selection
    /// indicator, or every row when none is mapped.
    pub fn internal_rows(&self) -> Vec<usize> {
        match &self.roles.selection_indicator {
            Some(c) => self.columns[c]
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == 1.0)
                .map(|(i, _)| i)
                .collect(),
            None => (0..self.n_rows).collect(),
        }
    }

    pub fn outcome(&self, rows: &[usize]) -> Vec<u8> {
        let d = &self.columns[&self.roles.outcome];
        rows.iter().map(|&r| d[r] as u8).collect()
    }

    pub fn disease_design(&self, rows: &[usize]) -> Result<DesignMatrix> {
        build_design(&self.columns, &self.roles.disease_covariates, rows)
    }

    pub fn selection_design(&self, rows: &[usize]) -> Result<DesignMatrix> {
        build_design(&self.columns, &self.roles.selection_design_columns(), rows)
    }

    /// Design on the selection covariates without the outcome.
    pub fn selection_covariate_design(&self, rows: &[usize]) -> Result<DesignMatrix> {
        build_design(&self.columns, &self.roles.selection_covariate_columns(), rows)
    }

    /// External sample drawn from this file: rows flagged by the external
    /// indicator, with overlap read from the selection indicator.
    pub fn external_subsample(&self) -> Result<ExternalSample> {
        let ind = self
            .roles
            .external_indicator
            .as_ref()
            .ok_or_else(|| Error::invalid("no external data and no external_indicator role"))?;
        let prob = self
            .roles
            .external_prob
            .as_ref()
            .ok_or_else(|| Error::invalid("roles do not name an external_prob column"))?;
        let flags = self.column(ind)?;
        let rows: Vec<usize> = (0..self.n_rows).filter(|&r| flags[r] == 1.0).collect();
        if rows.is_empty() {
            return Err(Error::invalid("no rows are flagged as external"));
        }
        let p = self.column(prob)?;
        let pi_ext: Vec<f64> = rows.iter().map(|&r| p[r]).collect();
        check_probabilities(&pi_ext, prob)?;
        let in_internal = match &self.roles.selection_indicator {
            Some(c) => rows.iter().map(|&r| self.columns[c][r] == 1.0).collect(),
            None => vec![true; rows.len()],
        };
        Ok(ExternalSample {
            x: self.selection_design(&rows)?,
            pi_ext,
            in_internal: Some(in_internal),
        })
    }

    /// Flags of `rows` that also belong to the external sample, when the
    /// external indicator is loaded.
    pub fn external_flags(&self, rows: &[usize]) -> Option<Vec<bool>> {
        let c = self.roles.external_indicator.as_ref()?;
        let v = self.columns.get(c)?;
        Some(rows.iter().map(|&r| v[r] == 1.0).collect())
    }

    /// Post-stratification cell of each row: one level per variable, the
    /// coarsening bin when the roles give cutoffs and the value otherwise.
    pub fn cell_keys(&self, rows: &[usize], variables: &[String]) -> Result<Vec<CellKey>> {
        let cols: Vec<&[f64]> = variables.iter().map(|v| self.column(v)).collect::<Result<_>>()?;
        Ok(rows
            .iter()
            .map(|&r| {
                variables
                    .iter()
                    .zip(&cols)
                    .map(|(v, c)| match self.roles.coarsening.get(v) {
                        Some(rule) => rule.label(c[r]).to_string(),
                        None => level_label(c[r]),
                    })
                    .collect()
            })
            .collect())
    }
}

/// Integral values print without a fraction so that `1` and `1.0` match.
pub(crate) fn level_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Writes a population as CSV with columns
/// `z1,z2,w,d,s,s_ext,pi_true,pi_ext`.
pub fn export_population(pop: &Population, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["z1", "z2", "w", "d", "s", "s_ext", "pi_true", "pi_ext"])?;
    for i in 0..pop.len() {
        w.write_record([
            format_number(pop.z1[i]),
            format_number(pop.z2[i]),
            format_number(pop.w[i]),
            pop.d[i].to_string(),
            pop.s[i].to_string(),
            pop.s_ext[i].to_string(),
            format_number(pop.pi_true[i]),
            format_number(pop.pi_ext[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
