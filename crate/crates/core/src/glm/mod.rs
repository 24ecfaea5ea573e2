//! Regression fitters: IPW-weighted logistic, three-category baseline logit,
//! and simplex regression for proportions.

mod logistic;
mod multinomial;
mod simplex;

pub use logistic::{fit_weighted_logistic, logistic_score, SEPARATION_LIMIT};
pub use multinomial::{fit_multinomial, multinomial_probabilities, Membership};
pub use simplex::{fit_simplex_regression, simplex_log_density, simplex_unit_deviance};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::SolveReport;

/// Row-major n x p design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
    column_names: Vec<String>,
    has_intercept: bool,
}

impl DesignMatrix {
    pub fn new(
        data: Vec<f64>,
        nrows: usize,
        column_names: Vec<String>,
        has_intercept: bool,
    ) -> Result<Self> {
        let ncols = column_names.len();
        if ncols == 0 {
            return Err(Error::invalid("design matrix needs at least one column"));
        }
        if data.len() != nrows * ncols {
            return Err(Error::invalid(format!(
                "design data has {} entries, expected {nrows}x{ncols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite design entry at row {}, column {:?}",
                pos / ncols,
                column_names[pos % ncols]
            )));
        }
        if has_intercept && (0..nrows).any(|i| data[i * ncols] != 1.0) {
            return Err(Error::invalid("intercept column must be all ones"));
        }
        Ok(Self {
            data,
            nrows,
            ncols,
            column_names,
            has_intercept,
        })
    }

    /// Builds a design from covariate columns, prepending an intercept.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Result<Self> {
        let n = columns.first().map_or(0, |(_, c)| c.len());
        if columns.iter().any(|(_, c)| c.len() != n) {
            return Err(Error::invalid("design columns differ in length"));
        }
        let p = columns.len() + 1;
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            data.push(1.0);
            data.extend(columns.iter().map(|(_, c)| c[i]));
        }
        let mut names = vec!["(Intercept)".to_string()];
        names.extend(columns.iter().map(|(name, _)| name.to_string()));
        Self::new(data, n, names, true)
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Self {
        Self::new(vec![1.0; n], n, vec!["(Intercept)".into()], true)
            .expect("ones are a valid design")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.ncols)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Sub-design holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            nrows: idx.len(),
            ncols: self.ncols,
            column_names: self.column_names.clone(),
            has_intercept: self.has_intercept,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }

    pub fn linear_predictor(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.rows().map(|r| dot(r, beta.as_slice())).collect()
    }

    /// `sum_i w_i x_i`.
    pub fn weighted_sum(&self, w: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (r, &wi) in self.rows().zip(w) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += wi * x;
            }
        }
        out
    }

    /// `sum_i w_i x_i x_i'`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let p = self.ncols;
        let mut out = DMatrix::zeros(p, p);
        for (r, &wi) in self.rows().zip(w) {
            for a in 0..p {
                let wa = wi * r[a];
                for b in 0..=a {
                    out[(a, b)] += wa * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                out[(b, a)] = out[(a, b)];
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    Multinomial,
    Simplex,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coefficients: DVector<f64>,
    pub vcov: Option<DMatrix<f64>>,
    pub report: SolveReport,
    pub kind: ModelKind,
    pub column_names: Vec<String>,
    /// Simplex dispersion sigma^2; absent for the other families.
    pub dispersion: Option<f64>,
}

impl FittedModel {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.vcov
            .as_ref()
            .map(|v| v.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect())
    }
}
