use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::Population;
use crate::error::{Error, Result};
use crate::stats::normal_cdf;
use crate::weights::CoarseningRule;

/// Minimum number of units of each outcome class in a bin.
pub const MIN_BIN_CLASS_SIZE: usize = 50;

/// Selection-rate ratio in one `(Z1, Z2)` bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEstimate {
    pub z1_bin: usize,
    pub z2_bin: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub selected_cases: usize,
    pub selected_controls: usize,
    /// `ln(P(S=1|D=1,bin) / P(S=1|D=0,bin))`.
    pub log_r: f64,
    /// Delta-method standard error of `log_r`.
    pub se: f64,
    pub mean_z1: f64,
    pub mean_z2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ROffsetEstimate {
    pub bins: Vec<BinEstimate>,
    /// `(z1_bin, z2_bin)` of bins left out as sparse.
    pub skipped: Vec<(usize, usize)>,
}

/// Chi-square test that all bins share one log r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneityTest {
    pub pooled_log_r: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Sample variance of the binned log r values.
    pub between_variance: f64,
    /// Mean squared standard error, the spread expected from sampling alone.
    pub noise_floor: f64,
}

/// Pooled within-`Z1`-stratum weighted least-squares slope of log r on the
/// bin mean of `Z2`, adjusting for the bin mean of `Z1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeTest {
    pub slope: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub strata: usize,
}

/// Per-bin log r from bin labels, outcomes and selection indicators.
/// Bins with fewer than [`MIN_BIN_CLASS_SIZE`] units of either class, or
/// with no selected unit of either class, are skipped and reported.
pub fn binned_log_r(
    z1: &[f64],
    z2: &[f64],
    z1_bin: &[usize],
    z2_bin: &[usize],
    d: &[u8],
    s: &[u8],
    n_bins: usize,
) -> Result<ROffsetEstimate> {
    let n = d.len();
    if [z1.len(), z2.len(), z1_bin.len(), z2_bin.len(), s.len()].iter().any(|&l| l != n) {
        return Err(Error::invalid("binning inputs differ in length"));
    }
    if z1_bin.iter().chain(z2_bin).any(|&b| b >= n_bins) {
        return Err(Error::invalid("bin label out of range"));
    }
    #[derive(Default, Clone)]
    struct Acc {
        n: [usize; 2],
        sel: [usize; 2],
        z1: f64,
        z2: f64,
    }
    let mut acc = vec![Acc::default(); n_bins * n_bins];
    for i in 0..n {
        let a = &mut acc[z1_bin[i] * n_bins + z2_bin[i]];
        let k = usize::from(d[i] == 1);
        a.n[k] += 1;
        a.sel[k] += usize::from(s[i] == 1);
        a.z1 += z1[i];
        a.z2 += z2[i];
    }
    let mut out = ROffsetEstimate {
        bins: Vec::new(),
        skipped: Vec::new(),
    };
    for (idx, a) in acc.iter().enumerate() {
        let (b1, b2) = (idx / n_bins, idx % n_bins);
        let [n0, n1] = a.n;
        let [s0, s1] = a.sel;
        if n0 < MIN_BIN_CLASS_SIZE || n1 < MIN_BIN_CLASS_SIZE || s0 == 0 || s1 == 0 {
            out.skipped.push((b1, b2));
            continue;
        }
        let (p1, p0) = (s1 as f64 / n1 as f64, s0 as f64 / n0 as f64);
        let var = (1.0 - p1) / s1 as f64 + (1.0 - p0) / s0 as f64;
        let total = (n0 + n1) as f64;
        out.bins.push(BinEstimate {
            z1_bin: b1,
            z2_bin: b2,
            n_cases: n1,
            n_controls: n0,
            selected_cases: s1,
            selected_controls: s0,
            log_r: (p1 / p0).ln(),
            se: var.sqrt(),
            mean_z1: a.z1 / total,
            mean_z2: a.z2 / total,
        });
    }
    Ok(out)
}

/// Binned log r over an `n_bins` x `n_bins` grid of equiprobable marginal
/// quantile bins of `(Z1, Z2)`.
pub fn estimate_r_offset_mc(pop: &Population, n_bins: usize) -> Result<ROffsetEstimate> {
    if n_bins < 1 {
        return Err(Error::invalid("need at least one bin"));
    }
    let levels: Vec<f64> = (1..n_bins).map(|k| k as f64 / n_bins as f64).collect();
    let r1 = CoarseningRule::from_quantiles("z1", &pop.z1, &levels)?;
    let r2 = CoarseningRule::from_quantiles("z2", &pop.z2, &levels)?;
    let b1: Vec<usize> = pop.z1.iter().map(|&v| r1.label(v)).collect();
    let b2: Vec<usize> = pop.z2.iter().map(|&v| r2.label(v)).collect();
    binned_log_r(&pop.z1, &pop.z2, &b1, &b2, &pop.d, &pop.s, n_bins)
}

impl ROffsetEstimate {
    pub fn sparse_bins(&self) -> Vec<Error> {
        self.skipped
            .iter()
            .map(|&(z1_bin, z2_bin)| Error::SparseBin { z1_bin, z2_bin })
            .collect()
    }

    pub fn homogeneity(&self) -> Result<HomogeneityTest> {
        let k = self.bins.len();
        if k < 2 {
            return Err(Error::invalid("homogeneity test needs two bins"));
        }
        let w: Vec<f64> = self.bins.iter().map(|b| 1.0 / (b.se * b.se)).collect();
        let wsum: f64 = w.iter().sum();
        let pooled = self.bins.iter().zip(&w).map(|(b, w)| w * b.log_r).sum::<f64>() / wsum;
        let statistic = self
            .bins
            .iter()
            .zip(&w)
            .map(|(b, w)| w * (b.log_r - pooled).powi(2))
            .sum::<f64>();
        let df = k - 1;
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let mean = self.bins.iter().map(|b| b.log_r).sum::<f64>() / k as f64;
        let between_variance =
            self.bins.iter().map(|b| (b.log_r - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let noise_floor = self.bins.iter().map(|b| b.se * b.se).sum::<f64>() / k as f64;
        Ok(HomogeneityTest {
            pooled_log_r: pooled,
            statistic,
            df,
            p_value: chi.sf(statistic),
            between_variance,
            noise_floor,
        })
    }

    pub fn slope_test(&self) -> Result<SlopeTest> {
        let strata: Vec<usize> = {
            let mut s: Vec<usize> = self.bins.iter().map(|b| b.z1_bin).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        // Accumulate the within-stratum centered normal equations for
        // (mean Z2, mean Z1).
        let mut xtx = [[0.0; 2]; 2];
        let mut xty = [0.0; 2];
        let mut used = 0;
        for &st in &strata {
            let bins: Vec<&BinEstimate> = self.bins.iter().filter(|b| b.z1_bin == st).collect();
            if bins.len() < 2 {
                continue;
            }
            used += 1;
            let w: Vec<f64> = bins.iter().map(|b| 1.0 / (b.se * b.se)).collect();
            let ws: f64 = w.iter().sum();
            let centre = |f: &dyn Fn(&BinEstimate) -> f64| {
                bins.iter().zip(&w).map(|(b, w)| w * f(b)).sum::<f64>() / ws
            };
            let (m2, m1, my) = (centre(&|b| b.mean_z2), centre(&|b| b.mean_z1), centre(&|b| b.log_r));
            for (b, w) in bins.iter().zip(&w) {
                let x = [b.mean_z2 - m2, b.mean_z1 - m1];
                let y = b.log_r - my;
                for r in 0..2 {
                    xty[r] += w * x[r] * y;
                    for c in 0..2 {
                        xtx[r][c] += w * x[r] * x[c];
                    }
                }
            }
        }
        if used == 0 || !(xtx[0][0] > 0.0) {
            return Err(Error::invalid("too few bins for the slope test"));
        }
        let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
        // Without within-stratum spread in mean Z1 the adjustment drops out.
        let (slope, se) = if det > 1e-10 * xtx[0][0] * xtx[1][1] {
            ((xtx[1][1] * xty[0] - xtx[0][1] * xty[1]) / det, (xtx[1][1] / det).sqrt())
        } else {
            (xty[0] / xtx[0][0], (1.0 / xtx[0][0]).sqrt())
        };
        let z = slope / se;
        Ok(SlopeTest {
            slope,
            se,
            z,
            p_value: 2.0 * normal_cdf(-z.abs()),
            strata: used,
        })
    }
}
