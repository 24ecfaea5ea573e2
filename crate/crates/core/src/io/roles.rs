use std::collections::BTreeMap;
use std::path::Path;

use super::{parse_key_values, split_list};
use crate::error::{Error, Result};
use crate::weights::CoarseningRule;

/// Maps dataset columns to model roles.
///
/// The selection design is the intercept, then `shared_covariates` (disease
/// covariates that also drive selection), then `selection_covariates`, then
/// the outcome when `selection_uses_outcome` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRoleMap {
    pub outcome: String,
    pub disease_covariates: Vec<String>,
    pub selection_covariates: Vec<String>,
    pub shared_covariates: Vec<String>,
    pub selection_uses_outcome: bool,
    pub selection_indicator: Option<String>,
    pub external_indicator: Option<String>,
    pub external_prob: Option<String>,
    /// Per-unit population `P(D=1 | selection covariates)`, for outcome
    /// augmentation.
    pub population_outcome_prob: Option<String>,
    /// Fixed cutoffs for post-stratification variables, keyed by column.
    pub coarsening: BTreeMap<String, CoarseningRule>,
}

impl ColumnRoleMap {
    pub fn new(
        outcome: impl Into<String>,
        disease_covariates: Vec<String>,
        selection_covariates: Vec<String>,
    ) -> Result<Self> {
        let roles = Self {
            outcome: outcome.into(),
            disease_covariates,
            selection_covariates,
            shared_covariates: Vec::new(),
            selection_uses_outcome: true,
            selection_indicator: None,
            external_indicator: None,
            external_prob: None,
            population_outcome_prob: None,
            coarsening: BTreeMap::new(),
        };
        roles.validate()?;
        Ok(roles)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut outcome = None;
        let mut disease = None;
        let mut selection = Vec::new();
        let mut shared = Vec::new();
        let mut uses_outcome = true;
        let (mut s_ind, mut e_ind, mut e_prob, mut p_pop) = (None, None, None, None);
        let mut coarsening = BTreeMap::new();
        for (line, key, value) in parse_key_values(text)? {
            let cfg_err = |message: String| Error::Config { line, message };
            match key.as_str() {
                "outcome" => outcome = Some(value),
                "disease_covariates" => disease = Some(split_list(&value)),
                "selection_covariates" => selection = split_list(&value),
                "shared_covariates" => shared = split_list(&value),
                "selection_uses_outcome" => {
                    uses_outcome = value
                        .parse()
                        .map_err(|_| cfg_err(format!("expected true or false, got {value:?}")))?
                }
                "selection_indicator" => s_ind = Some(value),
                "external_indicator" => e_ind = Some(value),
                "external_prob" => e_prob = Some(value),
                "population_outcome_prob" => p_pop = Some(value),
                k if k.starts_with("coarsen.") => {
                    let var = k["coarsen.".len()..].to_string();
                    let cutoffs = split_list(&value)
                        .iter()
                        .map(|c| c.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| cfg_err(format!("bad cutoff list {value:?}")))?;
                    coarsening.insert(var.clone(), CoarseningRule::new(var, cutoffs)?);
                }
                other => return Err(cfg_err(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Config {
            line: 0,
            message: format!("missing required key {k:?}"),
        };
        let roles = Self {
            outcome: outcome.ok_or_else(|| missing("outcome"))?,
            disease_covariates: disease.ok_or_else(|| missing("disease_covariates"))?,
            selection_covariates: selection,
            shared_covariates: shared,
            selection_uses_outcome: uses_outcome,
            selection_indicator: s_ind,
            external_indicator: e_ind,
            external_prob: e_prob,
            population_outcome_prob: p_pop,
            coarsening,
        };
        roles.validate()?;
        Ok(roles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.disease_covariates.is_empty() {
            return Err(Error::invalid("at least one disease covariate is required"));
        }
        if let Some(s) = self
            .shared_covariates
            .iter()
            .find(|s| !self.disease_covariates.contains(s))
        {
            return Err(Error::invalid(format!(
                "shared covariate {s:?} is not a disease covariate"
            )));
        }
        let mut names: Vec<&String> = std::iter::once(&self.outcome)
            .chain(&self.disease_covariates)
            .chain(&self.selection_covariates)
            .chain(&self.selection_indicator)
            .chain(&self.external_indicator)
            .chain(&self.external_prob)
            .chain(&self.population_outcome_prob)
            .collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("column {:?} has two roles", w[0])));
        }
        Ok(())
    }

    /// Selection design columns, without the intercept.
    pub fn selection_design_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .shared_covariates
            .iter()
            .chain(&self.selection_covariates)
            .cloned()
            .collect();
        if self.selection_uses_outcome {
            cols.push(self.outcome.clone());
        }
        cols
    }

    /// Selection design columns other than the outcome.
    pub fn selection_covariate_columns(&self) -> Vec<String> {
        self.shared_covariates
            .iter()
            .chain(&self.selection_covariates)
            .cloned()
            .collect()
    }

    /// Columns that must be 0/1.
    pub fn binary_columns(&self) -> Vec<&str> {
        std::iter::once(&self.outcome)
            .chain(&self.selection_indicator)
            .chain(&self.external_indicator)
            .map(String::as_str)
            .collect()
    }
}
