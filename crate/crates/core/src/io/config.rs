use std::path::Path;

use super::{parse_key_values, split_list};
use crate::error::{Error, Result};
use crate::simulation::SimulationConfig;

fn fixed<const K: usize>(value: &str, line: usize) -> Result<[f64; K]> {
    let items = split_list(value);
    let parsed: Vec<f64> = items
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config {
            line,
            message: format!("bad number list {value:?}"),
        })?;
    parsed.try_into().map_err(|v: Vec<f64>| Error::Config {
        line,
        message: format!("expected {K} values, got {}", v.len()),
    })
}

fn scalar<T: std::str::FromStr>(value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("bad value {value:?}"),
    })
}

/// Parses a `key = value` simulation config. `dag` and `setup` select the
/// defaults; every other field overrides them. Unknown keys are errors.
pub fn parse_simulation_config(text: &str) -> Result<SimulationConfig> {
    let entries = parse_key_values(text)?;
    let find = |k: &str| entries.iter().find(|(_, key, _)| key == k);
    let (dag, setup) = match (find("dag"), find("setup")) {
        (Some((l1, _, d)), Some((l2, _, s))) => (scalar::<u8>(d, *l1)?, scalar::<u8>(s, *l2)?),
        _ => {
            return Err(Error::Config {
                line: 0,
                message: "dag and setup are required".into(),
            })
        }
    };
    let mut cfg = SimulationConfig::new(dag, setup)?;
    for (line, key, value) in &entries {
        let (line, value) = (*line, value.as_str());
        match key.as_str() {
            "dag" | "setup" => {}
            "population_size" => cfg.population_size = scalar(value, line)?,
            "theta" => cfg.theta = fixed(value, line)?,
            "gamma" => cfg.gamma = fixed(value, line)?,
            "alpha" => cfg.alpha = fixed(value, line)?,
            "selection_scale" => cfg.selection_scale = scalar(value, line)?,
            "interactions" => cfg.interactions = fixed(value, line)?,
            "nu" => cfg.nu = fixed(value, line)?,
            "external_scale" => cfg.external_scale = scalar(value, line)?,
            "z_correlation" => cfg.z_correlation = scalar(value, line)?,
            "seed" => cfg.seed = scalar(value, line)?,
            "replications" => cfg.replications = scalar(value, line)?,
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {other:?}"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_simulation_config(path: impl AsRef<Path>) -> Result<SimulationConfig> {
    parse_simulation_config(&std::fs::read_to_string(path)?)
}
