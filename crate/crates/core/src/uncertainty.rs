//! Sampling variability of volatility estimates.
//!
//! Two routes are provided. [`mc_band`] simulates i.i.d. normal returns at a
//! known volatility, runs the bias-corrected EWMA estimator over them, drops a
//! burn-in and reads off empirical percentiles. [`ChiApprox`] gives closed
//! forms: a simple moving average of `m` squared normal returns is exactly a
//! scaled chi variate with `m` degrees of freedom, and the EWMA estimate is
//! approximated by a scaled chi whose degrees of freedom `(1 + b) / (1 - b)`
//! match the variance of the squared estimate.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::estimator::{decay_from_halflife, EstimatorError, EwmaParams, EwmaState};
use rand_distr::{Distribution, StandardNormal};

use crate::series::seeded_rng;

/// Fewest retained Monte Carlo estimates accepted for a band.
pub const MIN_RETAINED: usize = 100;

/// Above this many degrees of freedom the chi moments use the asymptotic series.
const LARGE_DOF: f64 = 1e4;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("only {retained} estimates retained after burn-in, need at least {MIN_RETAINED}")]
    TooFewRetained { retained: usize },
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McBandSpec {
    /// True per-period volatility of the simulated returns.
    pub sigma_true: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub halflife: f64,
    /// Percentiles in (0, 100), ascending.
    pub percentiles: Vec<f64>,
    pub seed: u64,
}

impl McBandSpec {
    /// Defaults: 10,000 samples, burn-in 252, 10th and 90th percentiles.
    pub fn new(sigma_true: f64, halflife: f64, seed: u64) -> Self {
        Self {
            sigma_true,
            n_samples: 10_000,
            burn_in: 252,
            halflife,
            percentiles: vec![10.0, 90.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let bad = |m: String| Err(UncertaintyError::InvalidSpec(m));
        if !(self.sigma_true.is_finite() && self.sigma_true >= 0.0) {
            return bad(format!("sigma_true must be non-negative, got {}", self.sigma_true));
        }
        if self.burn_in >= self.n_samples {
            return bad(format!(
                "burn-in {} must be below the sample count {}",
                self.burn_in, self.n_samples
            ));
        }
        if self.percentiles.is_empty() {
            return bad("at least one percentile is required".into());
        }
        if self.percentiles.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            return bad("percentiles must lie strictly between 0 and 100".into());
        }
        if self.percentiles.windows(2).any(|w| w[1] <= w[0]) {
            return bad("percentiles must be strictly ascending".into());
        }
        decay_from_halflife(self.halflife)?;
        let retained = self.n_samples - self.burn_in;
        if retained < MIN_RETAINED {
            return Err(UncertaintyError::TooFewRetained { retained });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandLevel {
    pub percentile: f64,
    /// Per-period volatility at this percentile.
    pub level: f64,
}

/// Zero-mean normal draw with standard deviation `sigma`.
fn draw_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

fn ewma_path(rng: &mut ChaCha8Rng, sigma: f64, params: EwmaParams, n: usize) -> Vec<f64> {
    let mut state = EwmaState::new(params);
    (0..n)
        .map(|_| {
            state.update(draw_normal(rng, sigma));
            (state.weighted_sum() / state.weight_norm()).sqrt()
        })
        .collect()
}

/// Retained EWMA estimates along one simulated path, after the burn-in.
pub fn mc_estimates(spec: &McBandSpec) -> Result<Vec<f64>, UncertaintyError> {
    spec.validate()?;
    let params = EwmaParams::new(spec.halflife)?;
    let mut rng = seeded_rng(spec.seed);
    let mut path = ewma_path(&mut rng, spec.sigma_true, params, spec.n_samples);
    Ok(path.split_off(spec.burn_in))
}

/// Terminal EWMA estimate of `n_paths` independent paths of `path_len` steps.
///
/// Path `i` draws from stream `i` of the seeded generator, so the output does
/// not depend on how the paths are scheduled across threads.
pub fn mc_ensemble_estimates(
    sigma_true: f64,
    halflife: f64,
    path_len: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>, UncertaintyError> {
    if path_len == 0 {
        return Err(UncertaintyError::InvalidSpec("path length must be positive".into()));
    }
    let params = EwmaParams::new(halflife)?;
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(seed);
            rng.set_stream(i as u64);
            let mut state = EwmaState::new(params);
            for _ in 0..path_len {
                state.update(draw_normal(&mut rng, sigma_true));
            }
            (state.weighted_sum() / state.weight_norm()).sqrt()
        })
        .collect())
}

/// Linear-interpolation percentile of ascending `sorted` data, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// Empirical percentiles of the retained Monte Carlo estimates.
pub fn mc_band(spec: &McBandSpec) -> Result<Vec<BandLevel>, UncertaintyError> {
    let estimates = sorted(mc_estimates(spec)?);
    Ok(spec
        .percentiles
        .iter()
        .map(|&p| BandLevel {
            percentile: p,
            level: percentile(&estimates, p),
        })
        .collect())
}

/// `scale * X` with `X` chi-distributed with `dof` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiApprox {
    pub dof: f64,
    pub scale: f64,
}

impl ChiApprox {
    pub fn new(dof: f64, scale: f64) -> Result<Self, UncertaintyError> {
        if !(dof.is_finite() && dof > 0.0) {
            return Err(UncertaintyError::InvalidSpec(format!("dof must be positive, got {dof}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(UncertaintyError::InvalidSpec(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self { dof, scale })
    }

    /// Mean and variance of a unit chi variate.
    fn unit_moments(&self) -> (f64, f64) {
        let k = self.dof;
        if k > LARGE_DOF {
            let var = 0.5 - 1.0 / (8.0 * k) - 1.0 / (16.0 * k * k) + 5.0 / (128.0 * k * k * k);
            return ((k - var).sqrt(), var);
        }
        let mean = std::f64::consts::SQRT_2 * (ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp();
        (mean, (k - mean * mean).max(0.0))
    }

    pub fn mean(&self) -> f64 {
        self.scale * self.unit_moments().0
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * self.unit_moments().1
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Mean of the squared variate, `scale^2 * dof`.
    pub fn squared_mean(&self) -> f64 {
        self.scale * self.scale * self.dof
    }

    /// Variance of the squared variate, `2 * scale^4 * dof`.
    pub fn squared_variance(&self) -> f64 {
        2.0 * self.scale.powi(4) * self.dof
    }

    fn chi_squared(&self) -> ChiSquared {
        ChiSquared::new(self.dof).expect("dof validated positive")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let t = x / self.scale;
        self.chi_squared().cdf(t * t)
    }

    /// CDF of the squared variate.
    pub fn squared_cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.chi_squared().cdf(y / (self.scale * self.scale))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = self.dof;
        let t = x / self.scale;
        let ln_pdf = (1.0 - k / 2.0) * std::f64::consts::LN_2 + (k - 1.0) * t.ln() - t * t / 2.0 - ln_gamma(k / 2.0);
        ln_pdf.exp() / self.scale
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.scale * self.chi_squared().inverse_cdf(p).sqrt()
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

/// Exact law of the simple-moving-average vol over `window` normal returns.
pub fn sma_distribution(sigma_true: f64, window: usize) -> Result<ChiApprox, UncertaintyError> {
    if window < 1 {
        return Err(UncertaintyError::InvalidWindow);
    }
    let m = window as f64;
    ChiApprox::new(m, sigma_true / m.sqrt())
}

/// Variance-matched scaled-chi approximation of the long-run EWMA vol.
pub fn ewma_distribution(sigma_true: f64, halflife: f64) -> Result<ChiApprox, UncertaintyError> {
    let b = decay_from_halflife(halflife)?;
    ChiApprox::new((1.0 + b) / (1.0 - b), sigma_true * ((1.0 - b) / (1.0 + b)).sqrt())
}

/// Approximate standard deviation of the EWMA vol estimate.
pub fn ewma_estimate_std(sigma_true: f64, halflife: f64) -> Result<f64, UncertaintyError> {
    Ok(ewma_distribution(sigma_true, halflife)?.std())
}

/// Kolmogorov-Smirnov distance between the sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = sorted(samples.to_vec());
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d.max(above).max(below)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Count normalized to a density.
    pub density: f64,
    /// Approximation density at the bin center.
    pub approx_density: f64,
}

/// Equal-width histogram of `samples` with the approximation density alongside.
pub fn histogram(samples: &[f64], bins: usize, approx: &ChiApprox) -> Vec<HistogramBin> {
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let a = lo + i as f64 * width;
            let b = a + width;
            HistogramBin {
                lo: a,
                hi: b,
                count,
                density: count as f64 / (n * width),
                approx_density: approx.pdf(0.5 * (a + b)),
            }
        })
        .collect()
}

pub fn write_band_csv(levels: &[BandLevel], periods_per_year: f64, out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["percentile", "level", "level_annualized"])?;
    for l in levels {
        w.write_record([
            format!("{:?}", l.percentile),
            format!("{:?}", l.level),
            format!("{:?}", l.level * periods_per_year.sqrt()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(bins: &[HistogramBin], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "count", "density", "approx_density"])?;
    for b in bins {
        w.write_record([
            format!("{:?}", b.lo),
            format!("{:?}", b.hi),
            b.count.to_string(),
            format!("{:?}", b.density),
            format!("{:?}", b.approx_density),
        ])?;
    }
    w.flush()?;
    Ok(())
}
