//! Newton–Raphson with step-halving for square systems of estimating
//! equations, plus the small dense linear-algebra kernel the fitters and
//! variance estimators share.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivots smaller than this fraction of the largest pivot mark a matrix as
/// singular.
pub const PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    /// Convergence threshold on the max-abs residual.
    pub tol_score: f64,
    /// Convergence threshold on the max-abs parameter change.
    pub tol_step: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_score: 1e-8,
            tol_step: 1e-10,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_score > 0.0) || !(self.tol_step > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    /// Max-abs size of the last accepted step (0 when no step was taken).
    pub last_step_norm: f64,
    pub converged: bool,
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| {
        if x.is_nan() {
            f64::INFINITY
        } else {
            m.max(x.abs())
        }
    })
}

/// Partial-pivot LU factorization with an explicit singularity check.
pub struct Factorization {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Factorization {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::invalid(format!(
                "expected a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularMatrix);
        }
        let lu = a.clone().lu();
        let u = lu.u();
        let pivots: Vec<f64> = u.diagonal().iter().map(|x| x.abs()).collect();
        let largest = pivots.iter().cloned().fold(0.0, f64::max);
        if largest == 0.0 || pivots.iter().any(|&p| p < PIVOT_RATIO * largest) {
            return Err(Error::SingularMatrix);
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factorization checked nonsingular")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factorization checked nonsingular")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.lu.l().nrows();
        self.solve_matrix(&DMatrix::identity(n, n))
    }
}

pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Factorization::new(a)?.solve(b))
}

pub fn invert(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Factorization::new(a)?.inverse())
}

/// Solves `residual(x) = 0` by Newton–Raphson. A full step that increases the
/// max-abs residual is halved until it does not; when halvings run out the
/// best iterate so far comes back inside `MaxIterationsExceeded`.
pub fn solve_estimating_equation<F, J>(
    residual: F,
    jacobian: J,
    init: DVector<f64>,
    cfg: &SolveConfig,
) -> Result<SolveReport>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    solve_guarded(residual, jacobian, init, cfg, |_, _| Ok(()))
}

/// As [`solve_estimating_equation`], with a guard called on every accepted
/// iterate. A guard error aborts the solve (fitters use this for separation).
pub fn solve_guarded<F, J, G>(
    mut residual: F,
    mut jacobian: J,
    init: DVector<f64>,
    cfg: &SolveConfig,
    mut guard: G,
) -> Result<SolveReport>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
    G: FnMut(&DVector<f64>, usize) -> Result<()>,
{
    cfg.validate()?;
    let mut x = init;
    let mut r = residual(&x);
    if r.len() != x.len() {
        return Err(Error::invalid(format!(
            "residual has length {} but parameter has length {}",
            r.len(),
            x.len()
        )));
    }
    let mut norm = max_abs(&r);
    let mut last_step = 0.0;

    let report = |x: &DVector<f64>, it: usize, norm: f64, step: f64, ok: bool| SolveReport {
        solution: x.clone(),
        iterations: it,
        final_residual_norm: norm,
        last_step_norm: step,
        converged: ok,
    };

    if norm <= cfg.tol_score {
        return Ok(report(&x, 0, norm, 0.0, true));
    }

    for iteration in 1..=cfg.max_iter {
        let jac = jacobian(&x);
        if jac.nrows() != x.len() || jac.ncols() != x.len() {
            return Err(Error::invalid(format!(
                "jacobian is {}x{}, expected {n}x{n}",
                jac.nrows(),
                jac.ncols(),
                n = x.len()
            )));
        }
        let step = match Factorization::new(&jac) {
            Ok(f) => f.solve(&(-&r)),
            Err(_) => return Err(Error::SingularJacobian { iteration }),
        };

        let mut scale = 1.0;
        let mut halvings = 0;
        let (x_new, r_new, norm_new) = loop {
            let candidate = &x + &step * scale;
            let r_c = residual(&candidate);
            let n_c = max_abs(&r_c);
            if n_c.is_finite() && n_c <= norm {
                break (candidate, r_c, n_c);
            }
            if halvings == cfg.max_halvings {
                return Err(Error::MaxIterationsExceeded {
                    report: report(&x, iteration - 1, norm, last_step, false),
                });
            }
            halvings += 1;
            scale *= 0.5;
        };

        last_step = max_abs(&(&step * scale));
        x = x_new;
        r = r_new;
        norm = norm_new;
        guard(&x, iteration)?;

        if norm <= cfg.tol_score || last_step <= cfg.tol_step {
            return Ok(report(&x, iteration, norm, last_step, true));
        }
    }

    Err(Error::MaxIterationsExceeded {
        report: report(&x, cfg.max_iter, norm, last_step, false),
    })
}

/// One extra Newton step from a converged solution, kept only if it does not
/// increase the residual. Fitters use it so that results do not depend on
/// which side of `tol_score` the last iterate happened to land.
pub(crate) fn polish<F, J>(mut residual: F, mut jacobian: J, mut report: SolveReport) -> SolveReport
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    let r = residual(&report.solution);
    let Ok(f) = Factorization::new(&jacobian(&report.solution)) else {
        return report;
    };
    let step = f.solve(&(-&r));
    let candidate = &report.solution + &step;
    let norm = max_abs(&residual(&candidate));
    if norm.is_finite() && norm <= max_abs(&r) {
        report.solution = candidate;
        report.final_residual_norm = norm;
        report.last_step_norm = max_abs(&step);
    }
    report
}

/// Central-difference jacobian. Meant for checking analytic jacobians in
/// tests; the fitters never use it.
pub fn finite_difference_jacobian<F>(mut f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut up = x.clone();
        let mut down = x.clone();
        up[j] += h;
        down[j] -= h;
        let col = (f(&up) - f(&down)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}
