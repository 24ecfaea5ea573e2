use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{generate_population, Population, SimulationConfig};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, DesignMatrix};
use crate::solver::SolveConfig;
use crate::stats::sample_variance;
use crate::variance::{vcov_cl, vcov_known_weights, vcov_pl, wald_ci, PlVarianceData};
use crate::weights::{
    estimate_weights_cl, estimate_weights_pl, estimate_weights_ps, estimate_weights_sr, CellKey,
    CoarseningRule, Overlap, PopulationSummary, WeightSet,
};

/// Largest tolerated share of failed replications per method.
const MAX_FAILURE_FRACTION: f64 = 0.10;
const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Unweighted,
    Pl,
    Sr,
    Ps,
    Cl,
    OracleWeights,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Unweighted,
        Method::Pl,
        Method::Sr,
        Method::Ps,
        Method::Cl,
        Method::OracleWeights,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unweighted => "unweighted",
            Method::Pl => "pl",
            Method::Sr => "sr",
            Method::Ps => "ps",
            Method::Cl => "cl",
            Method::OracleWeights => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub theta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub weights: Option<WeightSet>,
}

#[derive(Debug)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub fits: BTreeMap<Method, Result<MethodFit>>,
}

/// Disease and selection designs of the internal sample plus the pieces
/// each weighting method needs.
struct Prepared<'a> {
    pop: &'a Population,
    internal: Vec<usize>,
    external: Vec<usize>,
    z: DesignMatrix,
    x: DesignMatrix,
    outcome: Vec<u8>,
}

pub(crate) fn disease_design(pop: &Population, idx: &[usize]) -> Result<DesignMatrix> {
    let z1: Vec<f64> = idx.iter().map(|&i| pop.z1[i]).collect();
    let z2: Vec<f64> = idx.iter().map(|&i| pop.z2[i]).collect();
    DesignMatrix::with_intercept(&[("z1", &z1), ("z2", &z2)])
}

pub(crate) fn selection_design(pop: &Population, idx: &[usize]) -> Result<DesignMatrix> {
    let z2: Vec<f64> = idx.iter().map(|&i| pop.z2[i]).collect();
    let w: Vec<f64> = idx.iter().map(|&i| pop.w[i]).collect();
    let d: Vec<f64> = idx.iter().map(|&i| f64::from(pop.d[i])).collect();
    DesignMatrix::with_intercept(&[("z2", &z2), ("w", &w), ("d", &d)])
}

impl<'a> Prepared<'a> {
    fn new(pop: &'a Population) -> Result<Self> {
        let internal = pop.internal_indices();
        let external = pop.external_indices();
        Ok(Self {
            z: disease_design(pop, &internal)?,
            x: selection_design(pop, &internal)?,
            outcome: internal.iter().map(|&i| pop.d[i]).collect(),
            pop,
            internal,
            external,
        })
    }

    fn n(&self) -> f64 {
        self.pop.len() as f64
    }

    fn fit_known(&self, pi: &[f64], cfg: &SolveConfig) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let fit = fit_weighted_logistic(&self.z, &self.outcome, pi, cfg)?;
        let vcov = vcov_known_weights(&fit.coefficients, &self.z, &self.outcome, pi, self.n())?;
        Ok((fit.coefficients, vcov))
    }

    fn run(&self, method: Method, cfg: &SolveConfig) -> Result<MethodFit> {
        match method {
            Method::Unweighted => {
                let (theta, vcov) = self.fit_known(&vec![1.0; self.internal.len()], cfg)?;
                Ok(MethodFit { theta, vcov, weights: None })
            }
            Method::OracleWeights => {
                let ws = WeightSet::known(
                    &self.internal.iter().map(|&i| self.pop.pi_true[i]).collect::<Vec<_>>(),
                )?;
                let (theta, vcov) = self.fit_known(&ws.pi_hat, cfg)?;
                Ok(MethodFit { theta, vcov, weights: Some(ws) })
            }
            Method::Pl => {
                let ext_x = selection_design(self.pop, &self.external)?;
                let pi_ext: Vec<f64> = self.external.iter().map(|&i| self.pop.pi_ext[i]).collect();
                let ws = estimate_weights_pl(&self.x, &ext_x, &pi_ext, cfg)?;
                let fit = fit_weighted_logistic(&self.z, &self.outcome, &ws.pi_hat, cfg)?;
                let internal_pi_ext: Vec<Option<f64>> = self
                    .internal
                    .iter()
                    .map(|&i| (self.pop.s_ext[i] == 1).then_some(self.pop.pi_ext[i]))
                    .collect();
                let data = PlVarianceData {
                    z: &self.z,
                    x: &self.x,
                    outcome: &self.outcome,
                    external_x: &ext_x,
                    pi_ext: &pi_ext,
                    internal_pi_ext: &internal_pi_ext,
                };
                let alpha = ws.alpha_hat.as_ref().expect("PL sets alpha");
                let vcov = vcov_pl(&fit.coefficients, alpha, &data, self.n())?;
                Ok(MethodFit { theta: fit.coefficients, vcov, weights: Some(ws) })
            }
            Method::Sr => {
                let ext_x = selection_design(self.pop, &self.external)?;
                let pi_ext: Vec<f64> = self.external.iter().map(|&i| self.pop.pi_ext[i]).collect();
                let overlap = Overlap {
                    internal_in_external: self.internal.iter().map(|&i| self.pop.s_ext[i] == 1).collect(),
                    external_in_internal: self.external.iter().map(|&i| self.pop.s[i] == 1).collect(),
                };
                let ws = estimate_weights_sr(&self.x, &ext_x, &pi_ext, &overlap, cfg)?;
                let (theta, vcov) = self.fit_known(&ws.pi_hat, cfg)?;
                Ok(MethodFit { theta, vcov, weights: Some(ws) })
            }
            Method::Ps => {
                let (summary, cells) = post_stratification_cells(self.pop)?;
                let internal_cells: Vec<CellKey> =
                    self.internal.iter().map(|&i| cells[i].clone()).collect();
                let ws = estimate_weights_ps(&internal_cells, &summary)?;
                let (theta, vcov) = self.fit_known(&ws.pi_hat, cfg)?;
                Ok(MethodFit { theta, vcov, weights: Some(ws) })
            }
            Method::Cl => {
                let summary = population_means(self.pop)?;
                let ws = estimate_weights_cl(&self.x, &summary, cfg)?;
                let fit = fit_weighted_logistic(&self.z, &self.outcome, &ws.pi_hat, cfg)?;
                let alpha = ws.alpha_hat.as_ref().expect("CL sets alpha");
                let vcov = vcov_cl(&fit.coefficients, alpha, &self.z, &self.x, &self.outcome, self.n())?;
                Ok(MethodFit { theta: fit.coefficients, vcov, weights: Some(ws) })
            }
        }
    }
}

/// Joint cell probabilities of `(D, Z2', W')` in the realized population,
/// with `Z2'` and `W'` cut at their population 15th and 85th percentiles,
/// and every unit's cell.
pub fn post_stratification_cells(pop: &Population) -> Result<(PopulationSummary, Vec<CellKey>)> {
    let z2_rule = CoarseningRule::from_quantiles("z2", &pop.z2, &CoarseningRule::DEFAULT_QUANTILES)?;
    let w_rule = CoarseningRule::from_quantiles("w", &pop.w, &CoarseningRule::DEFAULT_QUANTILES)?;
    let keys: Vec<CellKey> = (0..pop.len())
        .map(|i| {
            vec![
                pop.d[i].to_string(),
                z2_rule.label(pop.z2[i]).to_string(),
                w_rule.label(pop.w[i]).to_string(),
            ]
        })
        .collect();
    let mut counts: BTreeMap<CellKey, usize> = BTreeMap::new();
    for k in &keys {
        *counts.entry(k.clone()).or_default() += 1;
    }
    let n = pop.len() as f64;
    let mut cells: BTreeMap<CellKey, f64> = counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
    // Renormalize away summation rounding.
    let total: f64 = cells.values().sum();
    cells.values_mut().for_each(|p| *p /= total);
    let summary = PopulationSummary::joint_cells(
        vec!["d".into(), "z2".into(), "w".into()],
        cells,
        Some(pop.len() as u64),
    )?;
    Ok((summary, keys))
}

/// Exact population means of `(Z2, W, D)` with N.
pub fn population_means(pop: &Population) -> Result<PopulationSummary> {
    let n = pop.len() as f64;
    let m = |v: &mut dyn Iterator<Item = f64>| v.sum::<f64>() / n;
    PopulationSummary::marginal_means(
        vec!["z2".into(), "w".into(), "d".into()],
        vec![
            m(&mut pop.z2.iter().copied()),
            m(&mut pop.w.iter().copied()),
            m(&mut pop.d.iter().map(|&v| f64::from(v))),
        ],
        pop.len() as u64,
    )
}

/// Generates replication `replication` and fits every requested method.
/// Method failures are recorded, not propagated.
pub fn run_replication(
    cfg: &SimulationConfig,
    replication: usize,
    methods: &[Method],
) -> Result<ReplicationOutcome> {
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let pop = generate_population(cfg, replication)?;
    let prepared = Prepared::new(&pop)?;
    let solve = SolveConfig::default();
    let fits = methods.iter().map(|&m| (m, prepared.run(m, &solve))).collect();
    Ok(ReplicationOutcome { replication, fits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub relative_bias_pct: f64,
    /// Monte Carlo standard error of the bias.
    pub bias_mc_se: f64,
    pub mse: f64,
    pub rmse_relative: f64,
    pub coverage: f64,
    pub mean_est_var: f64,
    pub mc_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// Failure counts by error kind.
    pub failure_kinds: BTreeMap<String, usize>,
    /// Clamp events summed over replications.
    pub clamp_count: usize,
    /// Mean selection-model coefficients, for PL and CL.
    pub mean_alpha: Option<Vec<f64>>,
    pub parameters: Vec<ParameterSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub config: SimulationConfig,
    pub methods: Vec<MethodSummary>,
}

impl StudyResult {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn parameter(&self, m: Method, index: usize) -> Option<&ParameterSummary> {
        self.method(m).and_then(|s| s.parameters.get(index))
    }
}

const PARAMETER_NAMES: [&str; 3] = ["(Intercept)", "z1", "z2"];

/// Study metrics for one method from its per-replication results, in
/// replication order. `reference_mse` holds the unweighted method's
/// per-parameter MSE for the relative RMSE.
pub fn summarize_method(
    method: Method,
    truth: &[f64],
    results: &[&Result<MethodFit>],
    reference_mse: Option<&[f64]>,
) -> Result<MethodSummary> {
    let total = results.len();
    let ok: Vec<&MethodFit> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mut failure_kinds = BTreeMap::new();
    for r in results {
        if let Err(e) = r {
            *failure_kinds.entry(e.kind().to_string()).or_insert(0) += 1;
        }
    }
    let failures = total - ok.len();
    if ok.is_empty() {
        return Err(Error::AllReplicationsFailed {
            method: method.name().into(),
            total,
        });
    }
    if failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures {
            method: method.name().into(),
            failed: failures,
            total,
        });
    }
    let r = ok.len() as f64;
    let mut parameters = Vec::with_capacity(truth.len());
    for (j, &t) in truth.iter().enumerate() {
        let est: Vec<f64> = ok.iter().map(|f| f.theta[j]).collect();
        let mean_estimate = est.iter().sum::<f64>() / r;
        let bias = mean_estimate - t;
        let mse = est.iter().map(|e| (e - t).powi(2)).sum::<f64>() / r;
        let mc_var = if ok.len() > 1 { sample_variance(&est) } else { f64::NAN };
        let mut covered = 0usize;
        for f in &ok {
            let ci = wald_ci(&f.theta, &f.vcov, CI_LEVEL)?;
            if ci[j].0 <= t && t <= ci[j].1 {
                covered += 1;
            }
        }
        let rmse_relative = match reference_mse {
            Some(reference) if method == Method::Unweighted => {
                let _ = reference;
                1.0
            }
            Some(reference) => mse / reference[j],
            None => f64::NAN,
        };
        parameters.push(ParameterSummary {
            name: PARAMETER_NAMES.get(j).map_or(format!("theta{j}"), |s| s.to_string()),
            truth: t,
            mean_estimate,
            bias,
            relative_bias_pct: 100.0 * bias.abs() / t.abs(),
            bias_mc_se: (mc_var / r).sqrt(),
            mse,
            rmse_relative,
            coverage: covered as f64 / r,
            mean_est_var: ok.iter().map(|f| f.vcov[(j, j)]).sum::<f64>() / r,
            mc_var,
        });
    }
    let clamp_count = ok
        .iter()
        .filter_map(|f| f.weights.as_ref())
        .map(|w| w.diagnostics.clamp_count())
        .sum();
    let alphas: Vec<&DVector<f64>> = ok
        .iter()
        .filter_map(|f| f.weights.as_ref().and_then(|w| w.alpha_hat.as_ref()))
        .collect();
    let mean_alpha = (!alphas.is_empty()).then(|| {
        let q = alphas[0].len();
        (0..q)
            .map(|k| alphas.iter().map(|a| a[k]).sum::<f64>() / alphas.len() as f64)
            .collect()
    });
    Ok(MethodSummary {
        method,
        successes: ok.len(),
        failures,
        failure_kinds,
        clamp_count,
        mean_alpha,
        parameters,
    })
}

/// Runs `cfg.replications` replications with `threads` workers (0 means the
/// rayon default) and aggregates metrics in replication order. The
/// unweighted fit is always computed as the relative-RMSE reference, but
/// only requested methods are reported.
pub fn run_study(cfg: &SimulationConfig, methods: &[Method], threads: usize) -> Result<StudyResult> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let mut to_run: Vec<Method> = methods.to_vec();
    if !to_run.contains(&Method::Unweighted) {
        to_run.insert(0, Method::Unweighted);
    }
    to_run.sort();
    to_run.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, r, &to_run))
            .collect::<Result<Vec<_>>>()
    })?;

    let truth = cfg.theta.to_vec();
    let collect = |m: Method| -> Vec<&Result<MethodFit>> { outcomes.iter().map(|o| &o.fits[&m]).collect() };
    let reference = summarize_method(Method::Unweighted, &truth, &collect(Method::Unweighted), None)?;
    let reference_mse: Vec<f64> = reference.parameters.iter().map(|p| p.mse).collect();

    let mut summaries = Vec::new();
    let mut seen = Vec::new();
    for &m in methods {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        summaries.push(summarize_method(m, &truth, &collect(m), Some(&reference_mse))?);
    }
    Ok(StudyResult {
        config: cfg.clone(),
        methods: summaries,
    })
}
