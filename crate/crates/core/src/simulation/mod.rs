//! Monte Carlo engine: populations under four selection DAGs and three
//! internal-selection setups, per-replication fitting, and study metrics.

mod roffset;
mod study;

pub use roffset::{
    binned_log_r, estimate_r_offset_mc, BinEstimate, HomogeneityTest, ROffsetEstimate, SlopeTest,
};
pub use study::{
    run_replication, run_study, summarize_method, Method, MethodFit, MethodSummary,
    ParameterSummary, ReplicationOutcome, StudyResult,
};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::{expit, normal_quantile};

/// Parameters of one simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub dag: u8,
    pub setup: u8,
    pub population_size: usize,
    /// Disease model `(theta0, theta1, theta2)` on `(1, Z1, Z2)`.
    pub theta: [f64; 3],
    /// `W | D, Z1, Z2 ~ N(g1 D + g2 Z1 + g3 Z2, 1)`.
    pub gamma: [f64; 3],
    /// Internal selection `(a0, a1, a2, a3)` on `(1, Z2, W, D)`.
    pub alpha: [f64; 4],
    /// Multiplier on the internal selection probability (setup 2).
    pub selection_scale: f64,
    /// Coefficients of `D Z2` and `D W` in the internal selection logit (setup 3).
    pub interactions: [f64; 2],
    /// External selection `(n0, n1, n2, n3)` on `(1, Z2, W, D)`.
    pub nu: [f64; 4],
    pub external_scale: f64,
    pub z_correlation: f64,
    pub seed: u64,
    pub replications: usize,
}

impl SimulationConfig {
    pub const THETA: [f64; 3] = [-2.0, 0.5, 0.5];
    pub const NU: [f64; 4] = [-0.6, 1.2, 0.4, 0.5];
    pub const EXTERNAL_SCALE: f64 = 0.75;
    pub const Z_CORRELATION: f64 = 0.5;
    pub const SETUP2_SCALE: f64 = 0.4;
    pub const DEFAULT_REPLICATIONS: usize = 500;

    pub fn new(dag: u8, setup: u8) -> Result<Self> {
        let gamma = match dag {
            1 => [0.0, 0.0, 0.0],
            2 | 3 => [0.0, 1.0, 0.0],
            4 => [1.0, 1.0, 1.0],
            _ => return Err(Error::invalid(format!("dag must be 1-4, got {dag}"))),
        };
        let alpha1 = if dag <= 2 { 0.0 } else { 0.7 };
        let (population_size, selection_scale, interactions) = match setup {
            1 => (50_000, 1.0, [0.0, 0.0]),
            2 => (125_000, Self::SETUP2_SCALE, [0.0, 0.0]),
            3 => (50_000, 1.0, if dag <= 2 { [0.0, 0.4] } else { [0.5, 0.4] }),
            _ => return Err(Error::invalid(format!("setup must be 1-3, got {setup}"))),
        };
        Ok(Self {
            dag,
            setup,
            population_size,
            theta: Self::THETA,
            gamma,
            alpha: [-0.8, alpha1, 0.3, 1.0],
            selection_scale,
            interactions,
            nu: Self::NU,
            external_scale: Self::EXTERNAL_SCALE,
            z_correlation: Self::Z_CORRELATION,
            seed: 0,
            replications: Self::DEFAULT_REPLICATIONS,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.replications == 0 {
            return Err(Error::invalid("population size and replications must be positive"));
        }
        if !(self.z_correlation.abs() < 1.0) {
            return Err(Error::invalid("z correlation must lie in (-1, 1)"));
        }
        if !(self.selection_scale > 0.0 && self.selection_scale <= 1.0)
            || !(self.external_scale > 0.0 && self.external_scale <= 1.0)
        {
            return Err(Error::invalid("probability scales must lie in (0, 1]"));
        }
        let finite = self
            .theta
            .iter()
            .chain(&self.gamma)
            .chain(&self.alpha)
            .chain(&self.interactions)
            .chain(&self.nu)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite simulation coefficient"));
        }
        Ok(())
    }

    /// Internal selection probability for one unit.
    pub fn selection_probability(&self, z2: f64, w: f64, d: f64) -> f64 {
        let a = &self.alpha;
        let eta = a[0]
            + a[1] * z2
            + a[2] * w
            + a[3] * d
            + self.interactions[0] * d * z2
            + self.interactions[1] * d * w;
        self.selection_scale * expit(eta)
    }

    /// External design probability for one unit.
    pub fn external_probability(&self, z2: f64, w: f64, d: f64) -> f64 {
        let v = &self.nu;
        self.external_scale * expit(v[0] + v[1] * z2 + v[2] * w + v[3] * d)
    }
}

/// One simulated target population.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub w: Vec<f64>,
    pub d: Vec<u8>,
    pub s: Vec<u8>,
    pub s_ext: Vec<u8>,
    pub pi_true: Vec<f64>,
    pub pi_ext: Vec<f64>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn internal_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.s[i] == 1).collect()
    }

    pub fn external_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.s_ext[i] == 1).collect()
    }
}

/// Uniform on the open interval (0, 1) from the top 53 bits of a draw.
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Random stream for replication `r`: the study seed fixes the key and the
/// replication index selects the stream, so streams do not depend on the
/// order in which replications run.
pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Draws the population for replication `replication`. Normal variates come
/// from the inverse normal CDF applied to open-interval uniforms. Each unit
/// consumes six uniforms in a fixed order: Z1, Z2, D, W, S, S_ext.
pub fn generate_population(cfg: &SimulationConfig, replication: usize) -> Result<Population> {
    cfg.validate()?;
    let n = cfg.population_size;
    let mut rng = replication_rng(cfg.seed, replication);
    let rho = cfg.z_correlation;
    let rho_c = (1.0 - rho * rho).sqrt();
    let mut pop = Population {
        z1: Vec::with_capacity(n),
        z2: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        s_ext: Vec::with_capacity(n),
        pi_true: Vec::with_capacity(n),
        pi_ext: Vec::with_capacity(n),
    };
    let (t, g) = (&cfg.theta, &cfg.gamma);
    for _ in 0..n {
        let e1 = normal_quantile(open_uniform(&mut rng));
        let e2 = normal_quantile(open_uniform(&mut rng));
        let z1 = e1;
        let z2 = rho * e1 + rho_c * e2;
        let d = u8::from(open_uniform(&mut rng) < expit(t[0] + t[1] * z1 + t[2] * z2));
        let df = f64::from(d);
        let w = g[0] * df + g[1] * z1 + g[2] * z2 + normal_quantile(open_uniform(&mut rng));
        let pi = cfg.selection_probability(z2, w, df);
        let s = u8::from(open_uniform(&mut rng) < pi);
        let pe = cfg.external_probability(z2, w, df);
        let se = u8::from(open_uniform(&mut rng) < pe);
        pop.z1.push(z1);
        pop.z2.push(z2);
        pop.w.push(w);
        pop.d.push(d);
        pop.s.push(s);
        pop.s_ext.push(se);
        pop.pi_true.push(pi);
        pop.pi_ext.push(pe);
    }
    Ok(pop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn dag1_selection_covariate_is_independent() {
        let cfg = SimulationConfig::new(1, 1).unwrap().with_seed(3);
        let pop = generate_population(&cfg, 0).unwrap();
        let d: Vec<f64> = pop.d.iter().map(|&v| f64::from(v)).collect();
        for other in [&d, &pop.z1, &pop.z2] {
            assert!(correlation(&pop.w, other).abs() < 0.02);
        }
        assert!((correlation(&pop.z1, &pop.z2) - 0.5).abs() < 0.02);
    }

    #[test]
    fn prevalence_matches_numerical_integration() {
        // Oracle: 2-D Gauss-Hermite style quadrature on a fine grid over the
        // bivariate normal, computed independently of the generator.
        let steps = 400;
        let h = 16.0 / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let a = -8.0 + h * i as f64;
            for j in 0..=steps {
                let b = -8.0 + h * j as f64;
                let dens = (-0.5 * (a * a + b * b)).exp() / (2.0 * std::f64::consts::PI);
                let z1 = a;
                let z2 = 0.5 * a + 0.75f64.sqrt() * b;
                total += dens * h * h / (1.0 + (2.0 - 0.5 * z1 - 0.5 * z2).exp());
            }
        }
        let cfg = SimulationConfig::new(1, 1).unwrap().with_seed(9);
        let pop = generate_population(&cfg, 0).unwrap();
        let n = pop.len() as f64;
        let prevalence = pop.d.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let se = (total * (1.0 - total) / n).sqrt();
        assert!((prevalence - total).abs() < 3.0 * se, "{prevalence} vs {total}");
    }

    #[test]
    fn setup2_scales_selection() {
        let one = generate_population(&SimulationConfig::new(3, 1).unwrap().with_seed(4), 0).unwrap();
        let cfg2 = SimulationConfig::new(3, 2).unwrap().with_seed(4);
        assert_eq!(cfg2.population_size, 125_000);
        let two = generate_population(&cfg2, 0).unwrap();
        let frac = |p: &Population| p.s.iter().map(|&v| f64::from(v)).sum::<f64>() / p.len() as f64;
        let ratio = frac(&two) / frac(&one);
        assert!((ratio - 0.4).abs() < 0.03, "{ratio}");
        let n_int = |p: &Population| p.internal_indices().len() as f64;
        assert!((n_int(&two) / n_int(&one) - 1.0).abs() < 0.05);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let cfg = SimulationConfig::new(2, 1).unwrap().with_seed(17);
        let cfg = SimulationConfig {
            population_size: 500,
            ..cfg
        };
        let a = generate_population(&cfg, 4).unwrap();
        assert_eq!(a, generate_population(&cfg, 4).unwrap());
        assert_ne!(a.z1, generate_population(&cfg, 5).unwrap().z1);
    }

    #[test]
    fn probabilities_are_in_range() {
        for (dag, setup) in [(1, 1), (4, 2), (3, 3)] {
            let cfg = SimulationConfig {
                population_size: 2_000,
                ..SimulationConfig::new(dag, setup).unwrap()
            };
            let pop = generate_population(&cfg, 0).unwrap();
            assert!(pop.pi_true.iter().all(|p| *p > 0.0 && *p < 1.0));
            assert!(pop.pi_ext.iter().all(|p| *p > 0.0 && *p < 0.75));
        }
    }
}
