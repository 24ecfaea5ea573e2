use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simulation::StudyResult;
use crate::variance::wald_ci;
use crate::weights::WeightSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::invalid(format!("unknown format {s:?}"))),
        }
    }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format_number(*x),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Text(s) => serde_json::to_string(s).expect("string serializes"),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) if x.is_finite() => format_number(*x),
            Cell::Num(_) => "null".into(),
        }
    }
}

fn write_cells<W: Write>(out: W, header: &[&str], rows: &[Vec<Cell>], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(Cell::csv))?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut out = out;
            writeln!(out, "[")?;
            for (i, row) in rows.iter().enumerate() {
                let fields: Vec<String> = header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| format!("{}: {}", serde_json::to_string(h).expect("str"), c.json()))
                    .collect();
                let sep = if i + 1 < rows.len() { "," } else { "" };
                writeln!(out, "  {{{}}}{sep}", fields.join(", "))?;
            }
            writeln!(out, "]")?;
        }
    }
    Ok(())
}

fn write_to_path(path: &Path, header: &[&str], rows: &[Vec<Cell>], format: OutputFormat) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(f);
    write_cells(&mut buf, header, rows, format)?;
    buf.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Coefficient estimates with standard errors and Wald intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    const HEADER: [&'static str; 6] = ["method", "parameter", "estimate", "std_error", "ci_lower", "ci_upper"];

    pub fn from_fit(
        method: &str,
        names: &[String],
        theta: &DVector<f64>,
        vcov: &DMatrix<f64>,
        level: f64,
    ) -> Result<Self> {
        let ci = wald_ci(theta, vcov, level)?;
        let rows = names
            .iter()
            .enumerate()
            .map(|(j, name)| ResultRow {
                method: method.into(),
                parameter: name.clone(),
                estimate: theta[j],
                std_error: vcov[(j, j)].max(0.0).sqrt(),
                ci_lower: ci[j].0,
                ci_upper: ci[j].1,
            })
            .collect();
        Ok(Self { rows })
    }

    fn cells(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Text(r.method.clone()),
                    Cell::Text(r.parameter.clone()),
                    Cell::Num(r.estimate),
                    Cell::Num(r.std_error),
                    Cell::Num(r.ci_lower),
                    Cell::Num(r.ci_upper),
                ]
            })
            .collect()
    }

    pub fn write<W: Write>(&self, out: W, format: OutputFormat) -> Result<()> {
        write_cells(out, &Self::HEADER, &self.cells(), format)
    }

    pub fn write_path(&self, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
        write_to_path(path.as_ref(), &Self::HEADER, &self.cells(), format)
    }
}

/// Per-unit selection probabilities and weights. `row` is the 1-based data
/// row of each internal unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub method: String,
    pub rows: Vec<usize>,
    pub pi_hat: Vec<f64>,
}

impl WeightTable {
    const HEADER: [&'static str; 4] = ["method", "row", "pi_hat", "weight"];

    pub fn new(method: &str, rows: Vec<usize>, weights: &WeightSet) -> Self {
        Self {
            method: method.into(),
            rows,
            pi_hat: weights.pi_hat.clone(),
        }
    }

    fn cells(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .zip(&self.pi_hat)
            .map(|(&r, &p)| {
                vec![
                    Cell::Text(self.method.clone()),
                    Cell::Int(r),
                    Cell::Num(p),
                    Cell::Num(1.0 / p),
                ]
            })
            .collect()
    }

    pub fn write<W: Write>(&self, out: W, format: OutputFormat) -> Result<()> {
        write_cells(out, &Self::HEADER, &self.cells(), format)
    }

    pub fn write_path(&self, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
        write_to_path(path.as_ref(), &Self::HEADER, &self.cells(), format)
    }
}

/// Study metrics, one row per method and parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable<'a>(pub &'a StudyResult);

impl StudyTable<'_> {
    const HEADER: [&'static str; 16] = [
        "dag",
        "setup",
        "method",
        "parameter",
        "truth",
        "mean_estimate",
        "bias",
        "relative_bias_pct",
        "rmse_relative",
        "coverage",
        "mean_est_var",
        "mc_var",
        "replications",
        "failures",
        "clamp_count",
        "seed",
    ];

    fn cells(&self) -> Vec<Vec<Cell>> {
        let cfg = &self.0.config;
        let mut out = Vec::new();
        for m in &self.0.methods {
            for p in &m.parameters {
                out.push(vec![
                    Cell::Int(cfg.dag.into()),
                    Cell::Int(cfg.setup.into()),
                    Cell::Text(m.method.name().into()),
                    Cell::Text(p.name.clone()),
                    Cell::Num(p.truth),
                    Cell::Num(p.mean_estimate),
                    Cell::Num(p.bias),
                    Cell::Num(p.relative_bias_pct),
                    Cell::Num(p.rmse_relative),
                    Cell::Num(p.coverage),
                    Cell::Num(p.mean_est_var),
                    Cell::Num(p.mc_var),
                    Cell::Int(m.successes + m.failures),
                    Cell::Int(m.failures),
                    Cell::Int(m.clamp_count),
                    Cell::Text(cfg.seed.to_string()),
                ]);
            }
        }
        out
    }

    pub fn write<W: Write>(&self, out: W, format: OutputFormat) -> Result<()> {
        write_cells(out, &Self::HEADER, &self.cells(), format)
    }

    pub fn write_path(&self, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
        write_to_path(path.as_ref(), &Self::HEADER, &self.cells(), format)
    }
}
