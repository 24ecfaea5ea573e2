//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selbias::glm::{fit_weighted_logistic, DesignMatrix};
use selbias::simulation::{
    estimate_r_offset_mc, generate_population, run_study, Method, SimulationConfig, StudyResult,
};
use selbias::solver::SolveConfig;
use selbias::stats::expit;
use selbias::variance::{cl_components, pl_components, PlVarianceData};
use selbias::weights::{composite_probability, estimate_weights_cl_totals, estimate_weights_pl};

const SEED: u64 = 20240101;
const REPLICATIONS: usize = 500;
const PAPER_METHODS: [Method; 5] = [Method::Unweighted, Method::Pl, Method::Sr, Method::Ps, Method::Cl];

struct Studies(BTreeMap<(u8, u8), StudyResult>);

impl Studies {
    fn get(&mut self, dag: u8, setup: u8) -> &StudyResult {
        self.0.entry((dag, setup)).or_insert_with(|| {
            let start = Instant::now();
            let cfg = SimulationConfig::new(dag, setup)
                .unwrap()
                .with_seed(SEED)
                .with_replications(REPLICATIONS);
            let study = run_study(&cfg, &Method::ALL, 0).expect("study runs");
            println!("  [study dag {dag} setup {setup}: R={REPLICATIONS}, {:.0?}]", start.elapsed());
            study
        })
    }
}

/// Collects the failed checks of one criterion.
#[derive(Default)]
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn require(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }
}

fn rel_bias(study: &StudyResult, m: Method, j: usize) -> f64 {
    study.parameter(m, j).unwrap().relative_bias_pct.abs()
}

fn criterion_1(studies: &mut Studies) -> Check {
    let mut c = Check::default();
    for setup in 1..=3 {
        let s = studies.get(1, setup);
        for m in PAPER_METHODS {
            // Slopes only: selection shifts the intercept even in DAG 1.
            for j in 1..3 {
                let b = rel_bias(s, m, j);
                c.require(b <= 2.0, format!("setup {setup} {} theta{j} {b:.2}%", m.name()));
            }
        }
    }
    c
}

fn criterion_2(studies: &mut Studies) -> Check {
    let s = studies.get(2, 1);
    let mut c = Check::default();
    let b = rel_bias(s, Method::Unweighted, 1);
    c.require((10.0..=18.0).contains(&b), format!("unweighted theta1 {b:.2}%"));
    for m in [Method::Pl, Method::Cl] {
        let b = rel_bias(s, m, 1);
        c.require(b <= 2.0, format!("{} theta1 {b:.2}%", m.name()));
    }
    let b = rel_bias(s, Method::Ps, 1);
    c.require(b >= 15.0, format!("ps theta1 {b:.2}%"));
    for m in PAPER_METHODS {
        let b = rel_bias(s, m, 2);
        c.require(b <= 2.0, format!("{} theta2 {b:.2}%", m.name()));
    }
    c
}

fn criterion_3(studies: &mut Studies) -> Check {
    let s = studies.get(3, 1);
    let mut c = Check::default();
    let b = rel_bias(s, Method::Unweighted, 2);
    c.require(b >= 20.0, format!("unweighted theta2 {b:.2}%"));
    for m in [Method::Pl, Method::Cl] {
        let b = rel_bias(s, m, 2);
        c.require(b <= 2.0, format!("{} theta2 {b:.2}%", m.name()));
        let r = s.parameter(m, 2).unwrap().rmse_relative;
        c.require(r <= 0.1, format!("{} theta2 rmse_relative {r:.3}", m.name()));
    }
    let b = rel_bias(s, Method::Sr, 2);
    c.require((10.0..=25.0).contains(&b), format!("sr theta2 {b:.2}%"));
    c
}

fn criterion_4(studies: &mut Studies) -> Check {
    let s = studies.get(4, 1);
    let mut c = Check::default();
    let b = rel_bias(s, Method::Unweighted, 2);
    c.require(b >= 40.0, format!("unweighted theta2 {b:.2}%"));
    let b = rel_bias(s, Method::Ps, 2);
    c.require(b <= 10.0, format!("ps theta2 {b:.2}%"));
    for m in [Method::Pl, Method::Cl] {
        let b = rel_bias(s, m, 2);
        c.require(b <= 2.0, format!("{} theta2 {b:.2}%", m.name()));
    }
    c
}

fn criterion_5(studies: &mut Studies) -> Check {
    let s = studies.get(3, 2);
    let mut c = Check::default();
    for m in [Method::Pl, Method::Cl] {
        let b = rel_bias(s, m, 2);
        c.require(b >= 15.0, format!("{} theta2 {b:.2}%", m.name()));
    }
    c
}

fn criterion_6(studies: &mut Studies) -> Check {
    let mut c = Check::default();
    for dag in 1..=4 {
        let s = studies.get(dag, 1);
        for m in [Method::Pl, Method::Cl] {
            let p = s.parameter(m, 2).unwrap();
            let ratio = p.mean_est_var / p.mc_var;
            c.require((0.8..=1.25).contains(&ratio), format!("dag {dag} {} ratio {ratio:.3}", m.name()));
        }
    }
    c
}

fn criterion_7(studies: &mut Studies) -> Check {
    let mut c = Check::default();
    for dag in 1..=4 {
        let s = studies.get(dag, 1);
        for m in [Method::Pl, Method::Cl] {
            let cov = s.parameter(m, 2).unwrap().coverage;
            c.require((0.92..=0.97).contains(&cov), format!("dag {dag} {} coverage {cov:.3}", m.name()));
        }
        if dag >= 3 {
            let cov = s.parameter(Method::Sr, 2).unwrap().coverage;
            c.require(cov < 0.5, format!("dag {dag} sr coverage {cov:.3}"));
        }
    }
    c
}

/// Cell-frequency reconstruction of the internal selection probability on a
/// discrete population with overlapping internal and external samples.
fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cells: BTreeMap<(u8, u8, u8), [usize; 4]> = BTreeMap::new();
    for _ in 0..40_000 {
        let (d, z2, w) = (rng.gen_range(0..2u8), rng.gen_range(0..3u8), rng.gen_range(0..2u8));
        let p_s = 0.05 + 0.1 * f64::from(z2) + 0.15 * f64::from(w) + 0.3 * f64::from(d);
        let p_e = 0.1 + 0.05 * f64::from(z2) + 0.1 * f64::from(d);
        let (s, e) = (rng.gen_bool(p_s), rng.gen_bool(p_e));
        let c = cells.entry((d, z2, w)).or_default();
        c[0] += 1;
        c[1] += usize::from(s && e);
        c[2] += usize::from(s && !e);
        c[3] += usize::from(!s && e);
    }
    let mut worst: f64 = 0.0;
    for [n, n11, n10, n01] in cells.values().copied() {
        let union = (n11 + n10 + n01) as f64;
        let p = [n11 as f64 / union, n10 as f64 / union, n01 as f64 / union];
        let p_ext = (n11 + n01) as f64 / n as f64;
        let direct = (n11 + n10) as f64 / n as f64;
        worst = worst.max((composite_probability(p_ext, p) - direct).abs());
    }
    let mut c = Check::default();
    c.require(worst <= 1e-12, format!("{} cells, max error {worst:.2e}", cells.len()));
    c
}

fn design(rows: &[Vec<f64>], names: &[&str]) -> DesignMatrix {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    DesignMatrix::new(data, rows.len(), names.iter().map(|s| s.to_string()).collect(), true).unwrap()
}

fn weighted_loglik(theta: [f64; 2], z: &[f64], d: &[u8], pi: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..z.len() {
        let eta = theta[0] + theta[1] * z[i];
        ll += (f64::from(d[i]) * eta - (1.0 + eta.exp()).ln()) / pi[i];
    }
    ll
}

/// Refining grid search over a concave two-parameter surface.
fn grid_maximize(f: impl Fn([f64; 2]) -> f64) -> [f64; 2] {
    let (mut center, mut step) = ([0.0, 0.0], 0.25);
    let mut half_width = 40;
    while step > 1e-6 {
        let mut best = (f64::NEG_INFINITY, center);
        for a in -half_width..=half_width {
            for b in -half_width..=half_width {
                let t = [center[0] + a as f64 * step, center[1] + b as f64 * step];
                let v = f(t);
                if v > best.0 {
                    best = (v, t);
                }
            }
        }
        center = best.1;
        step /= 10.0;
        half_width = 15;
    }
    center
}

fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn outer(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
}

fn criterion_9() -> Check {
    let mut c = Check::default();
    let cfg = SolveConfig::default();

    // Weighted logistic against a grid-search maximizer.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 400;
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let d: Vec<u8> = z.iter().map(|&x| u8::from(rng.gen_bool(expit(-0.5 + 0.8 * x)))).collect();
    let zd = design(&z.iter().map(|&x| vec![1.0, x]).collect::<Vec<_>>(), &["(Intercept)", "z"]);
    let fit = fit_weighted_logistic(&zd, &d, &pi, &cfg).unwrap();
    let grid = grid_maximize(|t| weighted_loglik(t, &z, &d, &pi));
    let err = (fit.coefficients[0] - grid[0]).abs().max((fit.coefficients[1] - grid[1]).abs());
    c.require(err <= 1e-3, format!("weighted logistic vs grid {err:.1e}"));

    // PL with the whole population as a census external sample equals the
    // full-population logistic fit of S.
    let sim = SimulationConfig {
        population_size: 20_000,
        ..SimulationConfig::new(3, 1).unwrap().with_seed(SEED)
    };
    let pop = generate_population(&sim, 0).unwrap();
    let x_row = |i: usize| vec![1.0, pop.z2[i], pop.w[i], f64::from(pop.d[i])];
    let names = ["(Intercept)", "z2", "w", "d"];
    let all: Vec<Vec<f64>> = (0..pop.len()).map(x_row).collect();
    let internal = pop.internal_indices();
    let x_all = design(&all, &names);
    let x_int = design(&internal.iter().map(|&i| x_row(i)).collect::<Vec<_>>(), &names);
    let pl = estimate_weights_pl(&x_int, &x_all, &vec![1.0; pop.len()], &cfg).unwrap();
    let mle = fit_weighted_logistic(&x_all, &pop.s, &vec![1.0; pop.len()], &cfg).unwrap();
    let alpha = pl.alpha_hat.clone().unwrap();
    let err = (&alpha - &mle.coefficients).amax();
    c.require(err <= 1e-8, format!("pl census vs MLE {err:.1e}"));

    // Calibration residual, recomputed from the returned probabilities.
    let mut totals = DVector::zeros(4);
    for row in &all {
        totals += DVector::from_row_slice(row);
    }
    let cl = estimate_weights_cl_totals(&x_int, &totals, pop.len() as f64, &cfg).unwrap();
    let mut sums = DVector::zeros(4);
    for (k, &i) in internal.iter().enumerate() {
        sums += DVector::from_row_slice(&x_row(i)) / cl.pi_hat[k];
    }
    let resid = (sums - &totals).amax();
    c.require(resid <= 1e-6 * pop.len() as f64, format!("cl residual {resid:.2e}"));

    // Sandwich pieces against per-unit sums on a toy population.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let big_n = 30;
    let units: Vec<(Vec<f64>, Vec<f64>, u8, u8, u8, f64)> = (0..big_n)
        .map(|_| {
            let (z1, z2, w): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d = u8::from(rng.gen_bool(0.4));
            let s = u8::from(rng.gen_bool(0.6));
            let e = u8::from(rng.gen_bool(0.5));
            let pe = rng.gen_range(0.3..0.9);
            (vec![1.0, z1, z2], vec![1.0, z2, w, f64::from(d)], d, s, e, pe)
        })
        .collect();
    let theta = DVector::from_row_slice(&[-0.4, 0.3, 0.2]);
    let alpha = DVector::from_row_slice(&[0.1, -0.2, 0.3, 0.4]);
    let nf = big_n as f64;
    let sel: Vec<usize> = (0..big_n).filter(|&i| units[i].3 == 1).collect();
    let ext: Vec<usize> = (0..big_n).filter(|&i| units[i].4 == 1).collect();
    let zi = design(&sel.iter().map(|&i| units[i].0.clone()).collect::<Vec<_>>(), &["1", "z1", "z2"]);
    let xi = design(&sel.iter().map(|&i| units[i].1.clone()).collect::<Vec<_>>(), &names);
    let xe = design(&ext.iter().map(|&i| units[i].1.clone()).collect::<Vec<_>>(), &names);
    let outcome: Vec<u8> = sel.iter().map(|&i| units[i].2).collect();
    let pe_ext: Vec<f64> = ext.iter().map(|&i| units[i].5).collect();
    let pe_int: Vec<Option<f64>> = sel.iter().map(|&i| (units[i].4 == 1).then_some(units[i].5)).collect();

    let dot = |a: &[f64], b: &DVector<f64>| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
    // Per-unit score g_i, its derivatives, and the PL and CL selection functions.
    let (mut g_theta, mut e1, mut g_alpha) = (DMatrix::zeros(3, 3), DMatrix::zeros(3, 3), DMatrix::zeros(3, 4));
    let (mut h_pl, mut cross_pl, mut outer_pl) = (DMatrix::zeros(4, 4), DMatrix::zeros(4, 3), DMatrix::zeros(4, 4));
    let (mut h_cl, mut cross_cl, mut outer_cl) = (DMatrix::zeros(4, 4), DMatrix::zeros(4, 3), DMatrix::zeros(4, 4));
    for (z, x, d, s, e, pe) in &units {
        let (s, e) = (f64::from(*s), f64::from(*e));
        let mu = expit(dot(z, &theta));
        let p = expit(dot(x, &alpha));
        let r = f64::from(*d) - mu;
        let g: Vec<f64> = z.iter().map(|v| s / p * r * v).collect();
        g_theta -= outer(z, z) * (s / p * mu * (1.0 - mu));
        e1 += outer(&g, &g);
        g_alpha -= outer(z, x) * (s * (1.0 - p) / p * r);
        let h: Vec<f64> = x.iter().map(|v| s * v - e / pe * p * v).collect();
        h_pl -= outer(x, x) * (e / pe * p * (1.0 - p));
        cross_pl += outer(&h, &g);
        outer_pl += outer(&h, &h);
        h_cl -= outer(x, x) * (s * (1.0 - p) / p);
        cross_cl += outer(x, &g) * (s * (1.0 / p - 1.0));
        outer_cl += outer(x, x) * (s * (1.0 - p) / (p * p));
    }
    let data = PlVarianceData {
        z: &zi,
        x: &xi,
        outcome: &outcome,
        external_x: &xe,
        pi_ext: &pe_ext,
        internal_pi_ext: &pe_int,
    };
    let pl = pl_components(&theta, &alpha, &data, nf).unwrap();
    let cl = cl_components(&theta, &alpha, &zi, &xi, &outcome, nf).unwrap();
    let mut worst: f64 = 0.0;
    for comp in [&pl, &cl] {
        worst = worst.max(max_rel_diff(&(&g_theta / nf), &comp.g_theta));
        worst = worst.max(max_rel_diff(&(&e1 / nf), &comp.e1));
        worst = worst.max(max_rel_diff(&(&g_alpha / nf), &comp.correction.as_ref().unwrap().g_alpha));
    }
    let (pc, cc) = (pl.correction.as_ref().unwrap(), cl.correction.as_ref().unwrap());
    for (mine, theirs) in [
        (&h_pl, &pc.h),
        (&cross_pl, &pc.cross),
        (&outer_pl, &pc.outer),
        (&h_cl, &cc.h),
        (&cross_cl, &cc.cross),
        (&outer_cl, &cc.outer),
    ] {
        worst = worst.max(max_rel_diff(&(mine / nf), theirs));
    }
    // Full PL sandwich from the hand sums.
    let (gt, ga, h) = (&g_theta / nf, &g_alpha / nf, &h_pl / nf);
    let a = &ga * h.clone().try_inverse().unwrap();
    let e2 = &a * (&cross_pl / nf);
    let e = &e1 / nf - &e2 - e2.transpose() + &a * (&outer_pl / nf) * a.transpose();
    let gi = gt.try_inverse().unwrap();
    let v = &gi * e * gi.transpose() / nf;
    worst = worst.max(max_rel_diff(&v, &pl.vcov(nf).unwrap()));
    c.require(worst <= 1e-12, format!("sandwich components max rel diff {worst:.1e}"));
    c
}

fn criterion_10() -> Check {
    let mut c = Check::default();
    let pop = generate_population(&SimulationConfig::new(1, 1).unwrap().with_seed(SEED), 0).unwrap();
    let h = estimate_r_offset_mc(&pop, 5).unwrap().homogeneity().unwrap();
    c.require(
        h.p_value >= 0.05,
        format!("dag 1 homogeneity chi2 {:.1} on {} df, p = {:.3}", h.statistic, h.df, h.p_value),
    );
    let pop = generate_population(&SimulationConfig::new(2, 1).unwrap().with_seed(SEED), 0).unwrap();
    let t = estimate_r_offset_mc(&pop, 5).unwrap().slope_test().unwrap();
    c.require(
        t.p_value >= 0.05,
        format!("dag 2 within-stratum slope {:.4} (se {:.4}), p = {:.3}", t.slope, t.se, t.p_value),
    );
    c
}

fn criterion_11() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_selbias"))
            .args(["simulate", "--dag", "1", "--setup", "1", "--replications", "50", "--seed", "7"])
            .args(["--method", "pl", "--threads", threads, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    let mut c = Check::default();
    c.require(
        outputs.windows(2).all(|w| w[0] == w[1]),
        format!("{} runs, {} bytes each", outputs.len(), outputs[0].len()),
    );
    c
}

/// Setup 1 is well specified for PL and CL: no clamping and consistent alpha.
fn setup_one_selection_model(studies: &mut Studies) -> Check {
    let mut c = Check::default();
    for dag in 1..=4 {
        let s = studies.get(dag, 1);
        let truth = s.config.alpha;
        for m in [Method::Pl, Method::Cl] {
            let ms = s.method(m).unwrap();
            let mean = ms.mean_alpha.as_ref().unwrap();
            let err = mean.iter().zip(truth).map(|(a, t)| (a - t).abs()).fold(0.0, f64::max);
            c.require(
                ms.clamp_count == 0 && err <= 0.05,
                format!("dag {dag} {} clamps {} alpha err {err:.3}", m.name(), ms.clamp_count),
            );
        }
    }
    c
}

fn main() {
    let mut studies = Studies(BTreeMap::new());
    type Criterion<'a> = Box<dyn FnMut(&mut Studies) -> Check + 'a>;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 dag 1 all methods unbiased", Box::new(criterion_1)),
        ("2 dag 2 setup 1 bias pattern", Box::new(criterion_2)),
        ("3 dag 3 setup 1 bias pattern", Box::new(criterion_3)),
        ("4 dag 4 setup 1 bias pattern", Box::new(criterion_4)),
        ("5 misspecified selection biases pl/cl", Box::new(criterion_5)),
        ("6 variance ratio pl/cl", Box::new(criterion_6)),
        ("7 coverage", Box::new(criterion_7)),
        ("8 composite probability identity", Box::new(|_: &mut Studies| criterion_8())),
        ("9 oracle equivalences", Box::new(|_: &mut Studies| criterion_9())),
        ("10 r structure", Box::new(|_: &mut Studies| criterion_10())),
        ("11 simulate determinism", Box::new(|_: &mut Studies| criterion_11())),
        ("setup 1 selection model", Box::new(setup_one_selection_model)),
    ];
    let mut failed = 0;
    for (name, mut run) in criteria {
        let check = run(&mut studies);
        if check.failures.is_empty() {
            println!("PASS criterion {name}: {}", check.notes.join("; "));
        } else {
            failed += 1;
            println!("FAIL criterion {name}: {}", check.failures.join("; "));
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
