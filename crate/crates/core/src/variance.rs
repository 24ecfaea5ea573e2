//! Sandwich variance estimators for the IPW logistic coefficients and Wald
//! intervals.
//!
//! All estimators return `(1/N) G^-1 E G^-1'`. `G` is the derivative of the
//! averaged weighted score in theta. `E` is the averaged outer product of
//! the score, corrected for estimated selection-model coefficients when
//! those come from pseudolikelihood or calibration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm::{dot, DesignMatrix};
use crate::solver::Factorization;
use crate::stats::{expit, normal_quantile};

/// Selection-parameter correction terms. With `psi = -H^-1 h` the meat is
/// `E1 - E2 - E2' + E4`, `E2 = G_alpha H^-1 cross`,
/// `E4 = G_alpha H^-1 outer H^-1' G_alpha'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCorrection {
    /// p x q derivative of the weighted score in alpha.
    pub g_alpha: DMatrix<f64>,
    /// q x q derivative of the selection estimating function.
    pub h: DMatrix<f64>,
    /// q x p, `(1/N) sum_i h_i g_i'`.
    pub cross: DMatrix<f64>,
    /// q x q, `(1/N) sum_i h_i h_i'`.
    pub outer: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichComponents {
    /// Bread, `-(1/N) sum S/pi mu(1-mu) ZZ'`.
    pub g_theta: DMatrix<f64>,
    /// Uncorrected meat, `(1/N) sum S/pi^2 (D-mu)^2 ZZ'`.
    pub e1: DMatrix<f64>,
    pub correction: Option<SelectionCorrection>,
}

impl SandwichComponents {
    fn g_alpha_h_inv(c: &SelectionCorrection) -> Result<DMatrix<f64>> {
        // G_alpha H^-1 = (H^-T G_alpha^T)^T.
        let f = Factorization::new(&c.h.transpose()).map_err(|_| Error::SingularH)?;
        Ok(f.solve_matrix(&c.g_alpha.transpose()).transpose())
    }

    /// `E2` (and `E3 = E2'`); zero without a correction.
    pub fn e2(&self) -> Result<DMatrix<f64>> {
        let p = self.g_theta.nrows();
        match &self.correction {
            None => Ok(DMatrix::zeros(p, p)),
            Some(c) => Ok(Self::g_alpha_h_inv(c)? * &c.cross),
        }
    }

    pub fn e4(&self) -> Result<DMatrix<f64>> {
        let p = self.g_theta.nrows();
        match &self.correction {
            None => Ok(DMatrix::zeros(p, p)),
            Some(c) => {
                let a = Self::g_alpha_h_inv(c)?;
                Ok(&a * &c.outer * a.transpose())
            }
        }
    }

    pub fn e_hat(&self) -> Result<DMatrix<f64>> {
        let e2 = self.e2()?;
        Ok(&self.e1 - &e2 - e2.transpose() + self.e4()?)
    }

    /// `(1/N) G^-1 E G^-1'`, symmetrized.
    pub fn vcov(&self, population_size: f64) -> Result<DMatrix<f64>> {
        let f = Factorization::new(&self.g_theta).map_err(|_| Error::SingularBread)?;
        let g_inv = f.inverse();
        let v = &g_inv * self.e_hat()? * g_inv.transpose() / population_size;
        Ok((&v + v.transpose()) * 0.5)
    }
}

fn check_theta(theta: &DVector<f64>, z: &DesignMatrix, outcome: &[u8], pi: &[f64]) -> Result<()> {
    if theta.len() != z.ncols() || outcome.len() != z.nrows() || pi.len() != z.nrows() {
        return Err(Error::invalid("theta, design, outcome and pi are not aligned"));
    }
    if let Some(i) = pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::invalid(format!("pi {} at unit {i} is outside (0, 1]", pi[i])));
    }
    Ok(())
}

/// Bread and uncorrected meat over the internal sample.
fn base_components(
    theta: &DVector<f64>,
    z: &DesignMatrix,
    outcome: &[u8],
    pi: &[f64],
    population_size: f64,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let mut bread = Vec::with_capacity(z.nrows());
    let mut meat = Vec::with_capacity(z.nrows());
    let mut resid = Vec::with_capacity(z.nrows());
    for ((row, &d), &p) in z.rows().zip(outcome).zip(pi) {
        let mu = expit(dot(row, theta.as_slice()));
        let r = f64::from(d) - mu;
        bread.push(-mu * (1.0 - mu) / p);
        meat.push(r * r / (p * p));
        resid.push(r);
    }
    (
        z.weighted_gram(&bread) / population_size,
        z.weighted_gram(&meat) / population_size,
        resid,
    )
}

/// Components with the selection probabilities treated as known.
pub fn known_weights_components(
    theta: &DVector<f64>,
    z: &DesignMatrix,
    outcome: &[u8],
    pi: &[f64],
    population_size: f64,
) -> Result<SandwichComponents> {
    check_theta(theta, z, outcome, pi)?;
    let (g_theta, e1, _) = base_components(theta, z, outcome, pi, population_size);
    Ok(SandwichComponents {
        g_theta,
        e1,
        correction: None,
    })
}

/// Variance of theta-hat when `pi` is known (or plugged in as if known).
/// Rows of `z` are the internal sample.
pub fn vcov_known_weights(
    theta: &DVector<f64>,
    z: &DesignMatrix,
    outcome: &[u8],
    pi: &[f64],
    population_size: f64,
) -> Result<DMatrix<f64>> {
    known_weights_components(theta, z, outcome, pi, population_size)?.vcov(population_size)
}

/// Data for the pseudolikelihood variance.
#[derive(Debug, Clone, Copy)]
pub struct PlVarianceData<'a> {
    /// Internal disease-model design.
    pub z: &'a DesignMatrix,
    /// Internal selection-model design.
    pub x: &'a DesignMatrix,
    pub outcome: &'a [u8],
    /// External selection-model design and its design probabilities.
    pub external_x: &'a DesignMatrix,
    pub pi_ext: &'a [f64],
    /// For each internal unit, its external design probability if it also
    /// belongs to the external sample.
    pub internal_pi_ext: &'a [Option<f64>],
}

pub fn pl_components(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    data: &PlVarianceData<'_>,
    population_size: f64,
) -> Result<SandwichComponents> {
    let (z, x) = (data.z, data.x);
    let n = z.nrows();
    if x.nrows() != n || data.internal_pi_ext.len() != n || alpha.len() != x.ncols() {
        return Err(Error::invalid("PL variance inputs are not aligned"));
    }
    if data.external_x.ncols() != x.ncols() || data.pi_ext.len() != data.external_x.nrows() {
        return Err(Error::invalid("external design and probabilities are not aligned"));
    }
    let pi: Vec<f64> = x.linear_predictor(alpha).into_iter().map(expit).collect();
    check_theta(theta, z, data.outcome, &pi)?;
    let (g_theta, e1, resid) = base_components(theta, z, data.outcome, &pi, population_size);

    let (p, q) = (z.ncols(), x.ncols());
    let mut g_alpha = DMatrix::zeros(p, q);
    let mut cross = DMatrix::zeros(q, p);
    let mut outer = DMatrix::zeros(q, q);
    for i in 0..n {
        let zi = DVector::from_row_slice(z.row(i));
        let xi = DVector::from_row_slice(x.row(i));
        let (pi_i, r) = (pi[i], resid[i]);
        g_alpha -= (&zi * xi.transpose()) * ((1.0 - pi_i) / pi_i * r);
        let mut c = r / pi_i;
        let mut o = 1.0;
        if let Some(pe) = data.internal_pi_ext[i] {
            c -= r / pe;
            o -= 2.0 * pi_i / pe;
        }
        cross += (&xi * zi.transpose()) * c;
        outer += (&xi * xi.transpose()) * o;
    }
    let mut h_w = Vec::with_capacity(data.external_x.nrows());
    let mut o_w = Vec::with_capacity(data.external_x.nrows());
    for (row, &pe) in data.external_x.rows().zip(data.pi_ext) {
        let pr = expit(dot(row, alpha.as_slice()));
        h_w.push(-pr * (1.0 - pr) / pe);
        o_w.push((pr / pe).powi(2));
    }
    let h = data.external_x.weighted_gram(&h_w) / population_size;
    outer += data.external_x.weighted_gram(&o_w);

    Ok(SandwichComponents {
        g_theta,
        e1,
        correction: Some(SelectionCorrection {
            g_alpha: g_alpha / population_size,
            h,
            cross: cross / population_size,
            outer: outer / population_size,
        }),
    })
}

/// Pseudolikelihood variance including selection-parameter uncertainty.
pub fn vcov_pl(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    data: &PlVarianceData<'_>,
    population_size: f64,
) -> Result<DMatrix<f64>> {
    pl_components(theta, alpha, data, population_size)?.vcov(population_size)
}

/// Calibration components; all sums run over the internal sample.
pub fn cl_components(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    z: &DesignMatrix,
    x: &DesignMatrix,
    outcome: &[u8],
    population_size: f64,
) -> Result<SandwichComponents> {
    let n = z.nrows();
    if x.nrows() != n || alpha.len() != x.ncols() {
        return Err(Error::invalid("CL variance inputs are not aligned"));
    }
    let pi: Vec<f64> = x.linear_predictor(alpha).into_iter().map(expit).collect();
    check_theta(theta, z, outcome, &pi)?;
    let (g_theta, e1, resid) = base_components(theta, z, outcome, &pi, population_size);

    let (p, q) = (z.ncols(), x.ncols());
    let mut g_alpha = DMatrix::zeros(p, q);
    let mut cross = DMatrix::zeros(q, p);
    let mut h_w = Vec::with_capacity(n);
    let mut o_w = Vec::with_capacity(n);
    for i in 0..n {
        let zi = DVector::from_row_slice(z.row(i));
        let xi = DVector::from_row_slice(x.row(i));
        let (pi_i, r) = (pi[i], resid[i]);
        g_alpha -= (&zi * xi.transpose()) * ((1.0 - pi_i) / pi_i * r);
        cross += (&xi * zi.transpose()) * ((1.0 / pi_i) * (1.0 / pi_i - 1.0) * r);
        h_w.push(-(1.0 - pi_i) / pi_i);
        o_w.push((1.0 - pi_i) / (pi_i * pi_i));
    }
    Ok(SandwichComponents {
        g_theta,
        e1,
        correction: Some(SelectionCorrection {
            g_alpha: g_alpha / population_size,
            h: x.weighted_gram(&h_w) / population_size,
            cross: cross / population_size,
            outer: x.weighted_gram(&o_w) / population_size,
        }),
    })
}

/// Calibration variance including selection-parameter uncertainty.
pub fn vcov_cl(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    z: &DesignMatrix,
    x: &DesignMatrix,
    outcome: &[u8],
    population_size: f64,
) -> Result<DMatrix<f64>> {
    cl_components(theta, alpha, z, x, outcome, population_size)?.vcov(population_size)
}

/// Per-coefficient Wald interval `theta_j -/+ z sqrt(V_jj)`.
pub fn wald_ci(theta: &DVector<f64>, vcov: &DMatrix<f64>, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} is outside (0, 1)")));
    }
    if vcov.nrows() != theta.len() || vcov.ncols() != theta.len() {
        return Err(Error::invalid("vcov does not match theta"));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let v = vcov[(j, j)];
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("negative variance {v} for coefficient {j}")));
            }
            let half = z * v.sqrt();
            Ok((t - half, t + half))
        })
        .collect()
}
