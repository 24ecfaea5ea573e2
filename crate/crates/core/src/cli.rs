//! Command-line surface: `fit`, `weights` and `simulate`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::error::{Error, ErrorClass, Result};
use crate::glm::fit_weighted_logistic;
use crate::io::{
    export_population, load_dataset, load_external_sample, load_population_summary,
    read_simulation_config, AnalysisSample, ColumnRoleMap, ExternalSample, OutputFormat,
    ResultTable, StudyTable, SummaryKind, WeightTable,
};
use crate::simulation::{generate_population, run_study, Method, SimulationConfig};
use crate::solver::SolveConfig;
use crate::variance::{vcov_cl, vcov_known_weights, vcov_pl, PlVarianceData};
use crate::weights::{
    augment_weights_with_outcome, estimate_weights_cl, estimate_weights_pl, estimate_weights_ps,
    estimate_weights_sr, winsorize_weights, Overlap, PopulationSummary, WeightSet,
};

#[derive(Debug, Parser)]
#[command(name = "selbias", version, about = "Selection-bias corrected logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the weighted disease model and report estimates with Wald intervals.
    Fit(FitArgs),
    /// Estimate selection probabilities for the internal sample.
    Weights(FitArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// unweighted, pl, sr, ps or cl.
    #[arg(long, value_parser = parse_fit_method)]
    pub method: Method,
    #[arg(long)]
    pub data: PathBuf,
    /// External probability sample for pl and sr. Without it the external
    /// units are the rows of --data flagged by the external indicator.
    #[arg(long)]
    pub external_data: Option<PathBuf>,
    /// Population summary: joint cells for ps, marginal means for cl.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Column-role config file.
    #[arg(long)]
    pub roles: PathBuf,
    /// Clip weights at these two quantiles.
    #[arg(long, num_args = 2, value_names = ["Q_LO", "Q_HI"])]
    pub winsorize: Option<Vec<f64>>,
    /// Multiply weights by P(D | covariates) in the population over the
    /// internal sample.
    #[arg(long)]
    pub augment_outcome: bool,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dag: Option<u8>,
    #[arg(long)]
    pub setup: Option<u8>,
    /// Simulation config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub population_size: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Methods to report, repeatable or comma-separated. Defaults to all.
    #[arg(long, value_delimiter = ',', value_parser = Method::parse)]
    pub method: Vec<Method>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    pub format: OutputFormat,
    /// Also write the population of replication 0 to this CSV file.
    #[arg(long)]
    pub export_population: Option<PathBuf>,
}

fn parse_fit_method(s: &str) -> Result<Method> {
    match Method::parse(s)? {
        Method::OracleWeights => Err(Error::invalid("oracle weights exist only in simulation")),
        m => Ok(m),
    }
}

fn parse_format(s: &str) -> Result<OutputFormat> {
    s.parse()
}

/// Exit status for an error: 2 for invalid input, 3 for numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Convergence => 3,
        ErrorClass::Validation | ErrorClass::Io => 2,
    }
}

/// Runs a parsed command, returning the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Weights(args) => cmd_weights(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let reason = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} reason={reason}", e.kind());
            exit_code(&e)
        }
    }
}

/// Internal-sample inputs shared by `fit` and `weights`.
struct Prepared {
    sample: AnalysisSample,
    rows: Vec<usize>,
    external: Option<ExternalSample>,
}

/// Selection probabilities with what the variance step needs to know.
struct Estimated {
    weights: WeightSet,
    /// Weights were changed after estimation, so the two-step variance no
    /// longer applies.
    post_processed: bool,
}

fn prepare(args: &FitArgs) -> Result<Prepared> {
    let roles = ColumnRoleMap::read(&args.roles)?;
    let sample = load_dataset(&args.data, &roles)?;
    let rows = sample.internal_rows();
    if rows.is_empty() {
        return Err(Error::invalid("no internal units in the dataset"));
    }
    let external = match args.method {
        Method::Pl | Method::Sr => Some(match &args.external_data {
            Some(path) => load_external_sample(path, &roles)?,
            None => sample.external_subsample()?,
        }),
        _ => None,
    };
    Ok(Prepared {
        sample,
        rows,
        external,
    })
}

fn load_summary(args: &FitArgs, kind: SummaryKind) -> Result<PopulationSummary> {
    let path = args
        .summary
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("--summary is required for {}", args.method.name())))?;
    let loaded = load_population_summary(path, kind)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.summary)
}

fn estimate(args: &FitArgs, p: &Prepared, cfg: &SolveConfig) -> Result<Estimated> {
    let x = p.sample.selection_design(&p.rows)?;
    let mut weights = match args.method {
        Method::Unweighted => WeightSet::known(&vec![1.0; p.rows.len()])?,
        Method::Pl => {
            let ext = p.external.as_ref().expect("external sample prepared");
            estimate_weights_pl(&x, &ext.x, &ext.pi_ext, cfg)?
        }
        Method::Sr => {
            let ext = p.external.as_ref().expect("external sample prepared");
            let overlap = match (p.sample.external_flags(&p.rows), &ext.in_internal) {
                (Some(a), Some(b)) => Overlap {
                    internal_in_external: a,
                    external_in_internal: b.clone(),
                },
                (None, None) => Overlap::disjoint(p.rows.len(), ext.x.nrows()),
                _ => {
                    return Err(Error::invalid(
                        "sr needs overlap flags on both samples or on neither",
                    ))
                }
            };
            estimate_weights_sr(&x, &ext.x, &ext.pi_ext, &overlap, cfg)?
        }
        Method::Ps => {
            let summary = load_summary(args, SummaryKind::JointCells)?;
            let PopulationSummary::JointCells { variables, .. } = &summary else {
                unreachable!("joint-cells loader returns joint cells")
            };
            let cells = p.sample.cell_keys(&p.rows, variables)?;
            estimate_weights_ps(&cells, &summary)?
        }
        Method::Cl => {
            let summary = load_summary(args, SummaryKind::MarginalMeans)?;
            estimate_weights_cl(&x, &summary, cfg)?
        }
        Method::OracleWeights => unreachable!("rejected by the argument parser"),
    };
    let mut post_processed = false;
    if args.augment_outcome {
        let col = p
            .sample
            .roles
            .population_outcome_prob
            .as_ref()
            .ok_or_else(|| Error::invalid("--augment-outcome needs a population_outcome_prob role"))?;
        let all = p.sample.column(col)?;
        let p_pop: Vec<f64> = p.rows.iter().map(|&r| all[r]).collect();
        let outcome = p.sample.outcome(&p.rows);
        let xc = p.sample.selection_covariate_design(&p.rows)?;
        let ones = vec![1.0; p.rows.len()];
        let fit = fit_weighted_logistic(&xc, &outcome, &ones, cfg)?;
        let p_int: Vec<f64> = xc
            .linear_predictor(&fit.coefficients)
            .into_iter()
            .map(crate::stats::expit)
            .collect();
        let w = augment_weights_with_outcome(&weights.weights(), &outcome, &p_pop, &p_int)?;
        weights.pi_hat = w.iter().map(|w| 1.0 / w).collect();
        post_processed = true;
    }
    if let Some(q) = &args.winsorize {
        let w = winsorize_weights(&weights.weights(), q[0], q[1])?;
        weights.pi_hat = w.iter().map(|w| 1.0 / w).collect();
        post_processed = true;
    }
    Ok(Estimated {
        weights,
        post_processed,
    })
}

fn cmd_weights(args: &FitArgs) -> Result<()> {
    let p = prepare(args)?;
    let est = estimate(args, &p, &SolveConfig::default())?;
    let rows: Vec<usize> = p.rows.iter().map(|r| r + 1).collect();
    let table = WeightTable::new(args.method.name(), rows, &est.weights);
    match &args.out {
        Some(path) => table.write_path(path, args.format),
        None => table.write(std::io::stdout().lock(), args.format),
    }
}

/// Fits the disease model for `fit` and tabulates estimates with Wald
/// intervals. PL and CL use their two-step variance unless the weights were
/// post-processed; everything else uses the fixed-weight sandwich.
pub fn fit_from_args(args: &FitArgs) -> Result<ResultTable> {
    let cfg = SolveConfig::default();
    let p = prepare(args)?;
    let est = estimate(args, &p, &cfg)?;
    let z = p.sample.disease_design(&p.rows)?;
    let outcome = p.sample.outcome(&p.rows);
    let pi = &est.weights.pi_hat;
    let fit = fit_weighted_logistic(&z, &outcome, pi, &cfg)?;
    let theta = &fit.coefficients;
    // N cancels in every sandwich form; the sample size keeps scales moderate.
    let n = p.sample.n_rows as f64;
    let vcov: DMatrix<f64> = match (args.method, est.post_processed, &est.weights.alpha_hat) {
        (Method::Pl, false, Some(alpha)) => {
            let ext = p.external.as_ref().expect("external sample prepared");
            let x = p.sample.selection_design(&p.rows)?;
            let flags = p.sample.external_flags(&p.rows);
            let internal_pi_ext: Vec<Option<f64>> = match flags {
                Some(f) if f.iter().any(|&b| b) => {
                    let col = p.sample.roles.external_prob.as_ref().ok_or_else(|| {
                        Error::invalid("overlapping units need an external_prob column")
                    })?;
                    let probs = p.sample.column(col)?;
                    p.rows
                        .iter()
                        .zip(&f)
                        .map(|(&r, &b)| b.then_some(probs[r]))
                        .collect()
                }
                _ => vec![None; p.rows.len()],
            };
            let data = PlVarianceData {
                z: &z,
                x: &x,
                outcome: &outcome,
                external_x: &ext.x,
                pi_ext: &ext.pi_ext,
                internal_pi_ext: &internal_pi_ext,
            };
            vcov_pl(theta, alpha, &data, n)?
        }
        (Method::Cl, false, Some(alpha)) => {
            let x = p.sample.selection_design(&p.rows)?;
            vcov_cl(theta, alpha, &z, &x, &outcome, n)?
        }
        _ => vcov_known_weights(theta, &z, &outcome, pi, n)?,
    };
    ResultTable::from_fit(args.method.name(), z.column_names(), theta, &vcov, args.level)
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let table = fit_from_args(args)?;
    match &args.out {
        Some(path) => table.write_path(path, args.format),
        None => table.write(std::io::stdout().lock(), args.format),
    }
}

/// Builds the study configuration from a config file and flag overrides.
pub fn simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = read_simulation_config(path)?;
            if args.dag.is_some_and(|d| d != cfg.dag) || args.setup.is_some_and(|s| s != cfg.setup) {
                return Err(Error::invalid("--dag/--setup disagree with the config file"));
            }
            cfg
        }
        None => match (args.dag, args.setup) {
            (Some(d), Some(s)) => SimulationConfig::new(d, s)?,
            _ => return Err(Error::invalid("--dag and --setup are required without --config")),
        },
    };
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.population_size {
        cfg.population_size = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = simulation_config(args)?;
    if let Some(path) = &args.export_population {
        export_population(&generate_population(&cfg, 0)?, path)?;
    }
    let methods = if args.method.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.method.clone()
    };
    let result = run_study(&cfg, &methods, args.threads)?;
    let table = StudyTable(&result);
    match &args.out {
        Some(path) => table.write_path(path, args.format),
        None => table.write(std::io::stdout().lock(), args.format),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "selbias", "fit", "--method", "pl", "--data", "d.csv", "--roles", "r.cfg",
            "--winsorize", "0.025", "0.975", "--format", "json",
        ])
        .unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        assert_eq!(a.method, Method::Pl);
        assert_eq!(a.winsorize, Some(vec![0.025, 0.975]));
        assert_eq!(a.format, OutputFormat::Json);
        assert!(Cli::try_parse_from(["selbias", "fit", "--method", "oracle", "--data", "d", "--roles", "r"]).is_err());
        let cli = Cli::try_parse_from(["selbias", "simulate", "--dag", "2", "--setup", "1", "--method", "pl,cl"]).unwrap();
        let Command::Simulate(s) = cli.command else { panic!() };
        assert_eq!(s.method, vec![Method::Pl, Method::Cl]);
        let cfg = simulation_config(&s).unwrap();
        assert_eq!((cfg.dag, cfg.setup), (2, 1));
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::MissingN), 2);
        assert_eq!(exit_code(&Error::SingularBread), 3);
    }
}
