use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use selbias::io::format_number;
use selbias::simulation::{generate_population, run_replication, Method, SimulationConfig};
use selbias::weights::CoarseningRule;

const ROLES: &str = "\
outcome = d
disease_covariates = z1, z2
selection_covariates = w
shared_covariates = z2
selection_indicator = s
external_indicator = s_ext
external_prob = pi_ext
";

fn selbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selbias"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

/// Exports replication 0 of `cfg` through the CLI and writes the role file.
fn export(dir: &Path, cfg: &SimulationConfig) -> (PathBuf, PathBuf) {
    let pop = dir.join("population.csv");
    let roles = dir.join("roles.cfg");
    std::fs::write(&roles, ROLES).unwrap();
    let out = selbias(&[
        "simulate",
        "--dag",
        &cfg.dag.to_string(),
        "--setup",
        &cfg.setup.to_string(),
        "--seed",
        &cfg.seed.to_string(),
        "--population-size",
        &cfg.population_size.to_string(),
        "--replications",
        "1",
        "--method",
        "unweighted",
        "--export-population",
        path_str(&pop),
        "--out",
        path_str(&dir.join("study.csv")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (pop, roles)
}

fn estimates(path: &Path) -> Vec<f64> {
    read_csv(path).iter().map(|r| r[2].parse().unwrap()).collect()
}

#[test]
fn missing_value_is_a_validation_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "D,Z1,Z2,W1\n1,0.5,1,2\n0,-1,0.25,NA\n0,1,1,1\n").unwrap();
    let roles = dir.path().join("r.cfg");
    std::fs::write(&roles, "outcome=D\ndisease_covariates=Z1,Z2\nselection_covariates=W1\n").unwrap();
    let out = selbias(&["fit", "--method", "unweighted", "--data", path_str(&data), "--roles", path_str(&roles)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: kind=NonNumericCell reason=row 2, column \"W1\""), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn infeasible_calibration_exits_with_convergence_status() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "D,Z1,W1\n1,0.5,0\n0,-1,0\n0,1,1\n1,0,0\n").unwrap();
    let roles = dir.path().join("r.cfg");
    std::fs::write(&roles, "outcome=D\ndisease_covariates=Z1\nselection_covariates=W1\nselection_uses_outcome=false\n").unwrap();
    let summary = dir.path().join("m.csv");
    // A mean of 5 for a 0/1 column cannot be matched by positive weights.
    std::fs::write(&summary, "name,value\nW1,5\nN,100\n").unwrap();
    let out = selbias(&[
        "fit", "--method", "cl", "--data", path_str(&data), "--roles", path_str(&roles), "--summary",
        path_str(&summary),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_output_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "3", "1"] {
        let out = dir.path().join(format!("s{}.csv", outputs.len()));
        let status = selbias(&[
            "simulate", "--dag", "1", "--setup", "1", "--replications", "6", "--seed", "7",
            "--population-size", "6000", "--threads", threads, "--out", path_str(&out),
        ]);
        assert!(status.status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn exported_population_refits_to_the_simulated_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig {
        population_size: 20_000,
        ..SimulationConfig::new(3, 1).unwrap().with_seed(11)
    };
    let (pop_path, roles) = export(dir.path(), &cfg);
    let pop = generate_population(&cfg, 0).unwrap();
    let reference = run_replication(&cfg, 0, &[Method::Pl, Method::Sr, Method::Ps, Method::Cl]).unwrap();

    // Population means for calibration.
    let n = pop.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let d: Vec<f64> = pop.d.iter().map(|&x| f64::from(x)).collect();
    let means = dir.path().join("means.csv");
    std::fs::write(
        &means,
        format!(
            "name,value\nz2,{}\nw,{}\nd,{}\nN,{}\n",
            format_number(mean(&pop.z2)),
            format_number(mean(&pop.w)),
            format_number(mean(&d)),
            pop.len()
        ),
    )
    .unwrap();

    // Joint cells of (d, z2', w') at population 15th/85th percentiles.
    let z2_rule = CoarseningRule::from_quantiles("z2", &pop.z2, &[0.15, 0.85]).unwrap();
    let w_rule = CoarseningRule::from_quantiles("w", &pop.w, &[0.15, 0.85]).unwrap();
    let mut counts = std::collections::BTreeMap::<(u8, usize, usize), usize>::new();
    for i in 0..pop.len() {
        *counts.entry((pop.d[i], z2_rule.label(pop.z2[i]), w_rule.label(pop.w[i]))).or_default() += 1;
    }
    let mut cells = String::from("d,z2,w,probability\n");
    for ((dd, a, b), c) in &counts {
        cells.push_str(&format!("{dd},{a},{b},{}\n", format_number(*c as f64 / n)));
    }
    cells.push_str(&format!("N,,,{}\n", pop.len()));
    let joint = dir.path().join("cells.csv");
    std::fs::write(&joint, cells).unwrap();
    let ps_roles = dir.path().join("ps_roles.cfg");
    let fmt = |r: &CoarseningRule| r.cutoffs.iter().map(|c| format_number(*c)).collect::<Vec<_>>().join(", ");
    std::fs::write(
        &ps_roles,
        format!("{ROLES}coarsen.z2 = {}\ncoarsen.w = {}\n", fmt(&z2_rule), fmt(&w_rule)),
    )
    .unwrap();

    let cases = [
        (Method::Pl, roles.clone(), None),
        (Method::Sr, roles.clone(), None),
        (Method::Cl, roles.clone(), Some(means)),
        (Method::Ps, ps_roles, Some(joint)),
    ];
    for (method, roles, summary) in cases {
        let out = dir.path().join(format!("fit_{}.csv", method.name()));
        let mut args = vec![
            "fit".to_string(), "--method".into(), method.name().into(), "--data".into(),
            path_str(&pop_path).into(), "--roles".into(), path_str(&roles).into(), "--out".into(),
            path_str(&out).into(),
        ];
        if let Some(s) = &summary {
            args.extend(["--summary".to_string(), path_str(s).into()]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let status = selbias(&args);
        assert!(status.status.success(), "{}: {}", method.name(), String::from_utf8_lossy(&status.stderr));
        let theta = estimates(&out);
        let expected = reference.fits[&method].as_ref().unwrap();
        for j in 0..3 {
            assert!(
                (theta[j] - expected.theta[j]).abs() <= 1e-12,
                "{} theta{j}: {} vs {}",
                method.name(),
                theta[j],
                expected.theta[j]
            );
        }
        let rows = read_csv(&out);
        let se: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
        for j in 0..3 {
            let diff = (se[j] - expected.vcov[(j, j)].sqrt()).abs();
            assert!(diff <= 1e-9 * se[j], "{} se{j}", method.name());
        }
    }
}

#[test]
fn naive_fit_on_dag2_population_underestimates_theta1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig::new(2, 1).unwrap().with_seed(5);
    let (pop, roles) = export(dir.path(), &cfg);
    let out = dir.path().join("fit.json");
    let status = selbias(&[
        "fit", "--method", "unweighted", "--data", path_str(&pop), "--roles", path_str(&roles), "--out",
        path_str(&out), "--format", "json",
    ]);
    assert!(status.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let theta1 = rows[1]["estimate"].as_f64().unwrap();
    let se1 = rows[1]["std_error"].as_f64().unwrap();
    assert_eq!(rows[1]["parameter"], "z1");
    assert!(theta1 < 0.5 - 2.0 * se1, "theta1 = {theta1}, se = {se1}");
    for r in rows.as_array().unwrap() {
        let (lo, est, hi) = (r["ci_lower"].as_f64().unwrap(), r["estimate"].as_f64().unwrap(), r["ci_upper"].as_f64().unwrap());
        assert!(lo <= est && est <= hi);
    }
}

#[test]
fn calibration_weights_reproduce_the_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig {
        population_size: 20_000,
        ..SimulationConfig::new(4, 1).unwrap().with_seed(3)
    };
    let (pop_path, roles) = export(dir.path(), &cfg);
    let pop = generate_population(&cfg, 0).unwrap();
    let n = pop.len() as f64;
    let totals = [
        n,
        pop.z2.iter().sum::<f64>(),
        pop.w.iter().sum::<f64>(),
        pop.d.iter().map(|&x| f64::from(x)).sum::<f64>(),
    ];
    let means = dir.path().join("marginals.csv");
    std::fs::write(
        &means,
        format!(
            "name,value\nz2,{}\nw,{}\nd,{}\nN,{}\n",
            format_number(totals[1] / n),
            format_number(totals[2] / n),
            format_number(totals[3] / n),
            pop.len()
        ),
    )
    .unwrap();
    let out = dir.path().join("weights.csv");
    let status = selbias(&[
        "weights", "--method", "cl", "--data", path_str(&pop_path), "--roles", path_str(&roles), "--summary",
        path_str(&means), "--out", path_str(&out),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut sums = [0.0; 4];
    let rows = read_csv(&out);
    assert_eq!(rows.len(), pop.s.iter().filter(|&&s| s == 1).count());
    for r in rows {
        let i: usize = r[1].parse::<usize>().unwrap() - 1;
        assert_eq!(pop.s[i], 1);
        let pi: f64 = r[2].parse().unwrap();
        let x = [1.0, pop.z2[i], pop.w[i], f64::from(pop.d[i])];
        for k in 0..4 {
            sums[k] += x[k] / pi;
        }
    }
    for k in 0..4 {
        assert!((sums[k] - totals[k]).abs() <= 1e-6 * n, "column {k}: {} vs {}", sums[k], totals[k]);
    }
}

#[test]
fn winsorized_weights_stay_within_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig {
        population_size: 10_000,
        ..SimulationConfig::new(3, 1).unwrap().with_seed(8)
    };
    let (pop_path, roles) = export(dir.path(), &cfg);
    let plain = dir.path().join("plain.csv");
    let clipped = dir.path().join("clipped.csv");
    for (out, extra) in [(&plain, vec![]), (&clipped, vec!["--winsorize", "0.025", "0.975"])] {
        let mut args = vec!["weights", "--method", "pl", "--data", path_str(&pop_path), "--roles", path_str(&roles), "--out", path_str(out)];
        args.extend(extra);
        assert!(selbias(&args).status.success());
    }
    let w = |p: &Path| -> Vec<f64> { read_csv(p).iter().map(|r| r[3].parse().unwrap()).collect() };
    let (a, b) = (w(&plain), w(&clipped));
    let mut sorted = a.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = selbias::stats::quantile_sorted(&sorted, 0.025);
    let hi = selbias::stats::quantile_sorted(&sorted, 0.975);
    for (x, y) in a.iter().zip(&b) {
        assert!((y - x.clamp(lo, hi)).abs() <= 1e-9 * y);
    }
}
