//! Chain summaries and error metrics: credibility intervals, correlograms,
//! acceptance-ratio series, histograms and reconstruction errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::mcmc::Chain;

/// Per-component equal-tailed credibility interval `C_eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredInterval {
    pub eta: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CredInterval {
    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn mean_width(&self) -> f64 {
        let w = self.widths();
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }

    /// Indices where `x` falls outside the interval.
    pub fn outside(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .enumerate()
            .filter(|(i, v)| **v < self.lower[*i] || **v > self.upper[*i])
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (N - 1) p`). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval between the `eta/2` and `1 - eta/2` sample quantiles.
pub fn credibility_interval(samples: &[f64], eta: f64) -> Result<(f64, f64)> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "credibility interval needs >= 10 samples, got {}",
            samples.len()
        )));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", format!("must lie in (0, 1), got {eta}")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(invalid("samples", "NaN in samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&sorted, eta / 2.0),
        quantile_sorted(&sorted, 1.0 - eta / 2.0),
    ))
}

/// Credibility intervals of every component of a chain's post-burn-in samples.
pub fn chain_credibility(chain: &Chain, eta: f64) -> Result<CredInterval> {
    let pairs = (0..chain.n())
        .into_par_iter()
        .map(|i| credibility_interval(&chain.component(i), eta))
        .collect::<Result<Vec<_>>>()?;
    let (lower, upper) = pairs.into_iter().unzip();
    Ok(CredInterval { eta, lower, upper })
}

/// Sample autocorrelation `r_0 .. r_max_lag`, normalised by the full-series
/// sum of squared deviations.
pub fn acf(samples: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if max_lag >= n {
        return Err(invalid("max_lag", format!("must be < {n}, got {max_lag}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) || denom <= 1e-300 * n as f64 {
        return Err(Error::ConstantSeries);
    }
    Ok((0..=max_lag)
        .map(|k| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Running acceptance ratio after each recorded iteration.
pub fn acceptance_ratio_series(chain: &Chain) -> Vec<f64> {
    let per = chain.proposals_per_iter as f64;
    let mut acc = 0u64;
    chain
        .accepted
        .iter()
        .enumerate()
        .map(|(t, a)| {
            acc += *a as u64;
            acc as f64 / ((t + 1) as f64 * per)
        })
        .collect()
}

/// `||x - x_true||_2 / ||x_true||_2`.
pub fn relative_error(x: &[f64], x_true: &[f64]) -> Result<f64> {
    check_len(x_true.len(), x.len())?;
    let norm: f64 = x_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("x_true", "relative error undefined for a zero-norm truth"));
    }
    let diff: f64 = x.iter().zip(x_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

pub fn pointwise_abs_error(x: &[f64], x_true: &[f64], indices: &[usize]) -> Result<Vec<f64>> {
    check_len(x_true.len(), x.len())?;
    indices
        .iter()
        .map(|&i| {
            if i >= x.len() {
                Err(Error::IndexOutOfRange { index: i, len: x.len() })
            } else {
                Ok((x[i] - x_true[i]).abs())
            }
        })
        .collect()
}

/// Sturges' rule: `ceil(log2 N) + 1`.
pub fn sturges_bins(n_samples: usize) -> usize {
    if n_samples <= 1 {
        1
    } else {
        (n_samples as f64).log2().ceil() as usize + 1
    }
}

/// Uniform-width bins spanning `[min, max]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("histogram of an empty sample".into()));
    }
    if bins == 0 {
        return Err(invalid("bins", "must be >= 1"));
    }
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(invalid("samples", "non-finite sample"));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for v in samples {
        let k = if width > 0.0 {
            ((v - lo) / width).floor() as usize
        } else {
            0
        };
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}
