//! Uniform spatial grids and the ground-truth test signals.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// Uniform grid `s_i = lo + i (hi - lo) / n` for `i = 1..=n`.
///
/// The left endpoint `lo` is excluded and `hi` is the last point, so a
/// periodic signal on `[lo, hi)` shifted by one cell is sampled exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    lo: f64,
    hi: f64,
}

impl Grid {
    pub fn new(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n", format!("grid needs at least 2 points, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid("hi", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { n, lo, hi })
    }

    /// The `[0, 1]` grid used by all 1D experiments.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, 0.0, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Point with zero-based position `k`, i.e. `s_{k+1}`.
    pub fn point(&self, k: usize) -> f64 {
        // (hi - lo) * i / n rather than i * dx: keeps i/n exactly rounded on [0, 1].
        self.lo + (self.hi - self.lo) * (k + 1) as f64 / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }
}

/// Which ground-truth signal to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Piecewise-smooth signal with two plateaus and a Gaussian bump.
    ///
    /// The narrow plateau is taken as `0.325 <= s <= 0.35`; the bounds as
    /// usually printed describe an empty interval.
    PiecewiseExample,
    /// Zeros everywhere except `amplitude` at the given zero-based positions.
    SparseSpikes { support: Vec<usize>, amplitude: f64 },
    /// Explicit samples, one per grid point.
    Custom { values: Vec<f64> },
}

impl SignalSpec {
    pub fn sparse_spikes(support: Vec<usize>, amplitude: f64) -> Self {
        SignalSpec::SparseSpikes { support, amplitude }
    }
}

/// Evaluate the piecewise example at a single location. Branches are tested
/// in order and the first match wins.
pub fn piecewise_example(s: f64) -> f64 {
    if (0.1..=0.25).contains(&s) {
        40.0
    } else if (0.325..=0.35).contains(&s) {
        10.0
    } else if s > 0.5 {
        let z = (s - 0.75) / 0.05;
        20.0 * (2.0 * std::f64::consts::PI).sqrt() * (-z * z).exp()
    } else {
        0.0
    }
}

/// Sample the ground-truth signal on `grid`.
pub fn sample_signal(spec: &SignalSpec, grid: &Grid) -> Result<Vec<f64>> {
    let n = grid.n();
    match spec {
        SignalSpec::PiecewiseExample => Ok(grid.points().into_iter().map(piecewise_example).collect()),
        SignalSpec::SparseSpikes { support, amplitude } => {
            let mut x = vec![0.0; n];
            for &k in support {
                if k >= n {
                    return Err(Error::IndexOutOfRange { index: k, len: n });
                }
                x[k] = *amplitude;
            }
            Ok(x)
        }
        SignalSpec::Custom { values } => {
            check_len(n, values.len())?;
            Ok(values.clone())
        }
    }
}

/// Zero-based positions `k` where the signal has a discontinuity between
/// grid points `k` and `k + 1`. For spikes the support itself is returned,
/// since spikes are the nonzero entries when the sparse domain is the signal.
pub fn discontinuities(spec: &SignalSpec, grid: &Grid) -> Result<Vec<usize>> {
    let n = grid.n();
    match spec {
        SignalSpec::PiecewiseExample => {
            let mut edges = Vec::new();
            for k in 0..n - 1 {
                let (a, b) = (grid.point(k), grid.point(k + 1));
                // Plateau [0.1, 0.25] and [0.325, 0.35], both closed.
                let opens = |left: f64| a < left && left <= b;
                let closes = |right: f64| a <= right && right < b;
                if opens(0.1) || closes(0.25) || opens(0.325) || closes(0.35) {
                    edges.push(k);
                }
            }
            Ok(edges)
        }
        SignalSpec::SparseSpikes { support, .. } => {
            let mut s = support.clone();
            s.sort_unstable();
            s.dedup();
            Ok(s)
        }
        SignalSpec::Custom { values } => {
            check_len(n, values.len())?;
            let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            Ok(jump_locations(values, 0.25 * scale))
        }
    }
}

/// Positions `k` where `|x[k+1] - x[k]|` exceeds `threshold`.
pub fn jump_locations(x: &[f64], threshold: f64) -> Vec<usize> {
    x.windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() > threshold)
        .map(|(k, _)| k)
        .collect()
}
