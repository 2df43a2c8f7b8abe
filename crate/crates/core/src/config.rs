//! TOML experiment configuration.
//!
//! Every table is optional and falls back to the Example 4.1 setup on an
//! 80-point grid. A minimal file only needs what differs from the defaults:
//!
//! ```toml
//! [noise]
//! sigmas = [5.5, 10.0]
//!
//! [run]
//! variants = ["laplace_l1", "masked_l1"]
//! trials = 5
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorVariant;
use crate::mcmc::ProposalMode;
use crate::signals::SignalSpec;
use crate::vbjs::{SparsityEstimate, DEFAULT_EPSILON};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub signal: SignalConfig,
    pub noise: NoiseConfig,
    pub transform: TransformConfig,
    pub cv: CvConfig,
    pub mask: MaskConfig,
    pub sampler: SamplerConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub spec: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub j: usize,
    /// Noise levels. `recover` and `mask` use the first entry.
    pub sigmas: Vec<f64>,
    /// If set, overrides `sigmas` with the level giving this SNR in dB.
    pub snr_db: Option<f64>,
    /// Lower bound on the estimated noise variance, so noiseless data still
    /// define a proper likelihood.
    pub sigma2_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    /// PA order; 0 selects the identity transform.
    pub order: usize,
    pub periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    pub m_train: usize,
    /// Skip cross-validation and use this prior strength.
    pub lambda_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    /// Defaults to `1/n`.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub estimate: SparsityEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    /// Defaults to `n_iter / 2`.
    pub burn_in: Option<usize>,
    /// Defaults to `0.1 (max(x0) - min(x0) + 1)`.
    pub sigma_q: Option<f64>,
    pub mode: ProposalMode,
    pub adapt: bool,
    pub adapt_factor: f64,
    pub adapt_interval: usize,
    pub target_window: [f64; 2],
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variants: Vec<PosteriorVariant>,
    pub trials: usize,
    pub seed: u64,
    /// Grid indices for pointwise error reports. Defaults depend on the signal.
    pub probes: Option<Vec<usize>>,
    pub max_lag: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            n: 80,
            lo: 0.0,
            hi: 1.0,
            spec: SignalSpec::PiecewiseExample,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            j: 20,
            sigmas: vec![5.5],
            snr_db: None,
            sigma2_floor: 1e-10,
        }
    }
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            order: 3,
            periodic: true,
        }
    }
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 20,
            m_train: 10,
            lambda_hat: None,
        }
    }
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            tau: None,
            epsilon: DEFAULT_EPSILON,
            estimate: SparsityEstimate::Map,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: None,
            sigma_q: None,
            mode: ProposalMode::ComponentwiseSweep,
            adapt: true,
            adapt_factor: 1.5,
            adapt_interval: 500,
            target_window: [0.2, 0.8],
            eta: 0.05,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variants: PosteriorVariant::ALL.to_vec(),
            trials: 1,
            seed: 0,
            probes: None,
            max_lag: 100,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    pub fn burn_in(&self) -> usize {
        self.sampler.burn_in.unwrap_or(self.sampler.n_iter / 2)
    }

    pub fn tau(&self) -> f64 {
        self.mask.tau.unwrap_or(1.0 / self.signal.n as f64)
    }

    /// Probe indices: the given list, or four defaults for Example 4.1
    /// (the edges of both plateaus, the top of the hump and a zero region),
    /// or the first support point and first zero for spikes.
    pub fn probes(&self) -> Vec<usize> {
        if let Some(p) = &self.run.probes {
            return p.clone();
        }
        let n = self.signal.n;
        match &self.signal.spec {
            SignalSpec::PiecewiseExample if n == 80 => vec![7, 25, 59, 45],
            SignalSpec::SparseSpikes { support, .. } => {
                let zero = (0..n).find(|i| !support.contains(i)).unwrap_or(0);
                support.first().map_or(vec![zero], |s| vec![*s, zero])
            }
            _ => vec![n / 4, n / 2, 3 * n / 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.signal;
        if s.n < 2 {
            return Err(bad(format!("signal.n must be >= 2, got {}", s.n)));
        }
        if !(s.lo < s.hi) {
            return Err(bad("signal.lo must be < signal.hi"));
        }
        match &s.spec {
            SignalSpec::SparseSpikes { support, amplitude } => {
                if let Some(i) = support.iter().find(|i| **i >= s.n) {
                    return Err(bad(format!("spike index {i} outside grid of {}", s.n)));
                }
                if !amplitude.is_finite() {
                    return Err(bad("spike amplitude must be finite"));
                }
            }
            SignalSpec::Custom { values } if values.len() != s.n => {
                return Err(bad(format!(
                    "custom signal has {} values, grid has {}",
                    values.len(),
                    s.n
                )));
            }
            _ => {}
        }
        let nz = &self.noise;
        if nz.j < 2 {
            return Err(bad(format!("noise.j must be >= 2, got {}", nz.j)));
        }
        if nz.snr_db.is_none() && nz.sigmas.is_empty() {
            return Err(bad("noise.sigmas must not be empty"));
        }
        if nz.sigmas.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(bad("noise.sigmas must be finite and >= 0"));
        }
        if let Some(db) = nz.snr_db {
            if !db.is_finite() {
                return Err(bad("noise.snr_db must be finite"));
            }
        }
        if !(nz.sigma2_floor > 0.0) {
            return Err(bad("noise.sigma2_floor must be > 0"));
        }
        if self.transform.order >= s.n {
            return Err(bad(format!(
                "transform.order {} must be < n = {}",
                self.transform.order, s.n
            )));
        }
        if self.cv.lambda_hat.is_none() {
            if self.cv.k == 0 || self.cv.m_train == 0 {
                return Err(bad("cv.k and cv.m_train must be positive"));
            }
            if self.cv.m_train >= nz.j {
                return Err(bad(format!(
                    "cv.m_train {} must be < noise.j {}",
                    self.cv.m_train, nz.j
                )));
            }
        }
        if let Some(l) = self.cv.lambda_hat {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(bad("cv.lambda_hat must be finite and >= 0"));
            }
        }
        if let Some(t) = self.mask.tau {
            if !(t > 0.0) {
                return Err(bad("mask.tau must be > 0"));
            }
        }
        if !(self.mask.epsilon > 0.0) {
            return Err(bad("mask.epsilon must be > 0"));
        }
        let sm = &self.sampler;
        if sm.n_iter == 0 || self.burn_in() >= sm.n_iter {
            return Err(bad(format!(
                "need 0 <= burn_in < n_iter, got {} and {}",
                self.burn_in(),
                sm.n_iter
            )));
        }
        if self.sampler.n_iter - self.burn_in() < 10 {
            return Err(bad("need at least 10 post-burn-in iterations"));
        }
        if let Some(q) = sm.sigma_q {
            if !(q > 0.0 && q.is_finite()) {
                return Err(bad("sampler.sigma_q must be > 0"));
            }
        }
        let [lo, hi] = sm.target_window;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(bad("sampler.target_window must satisfy 0 < lo < hi < 1"));
        }
        if !(sm.adapt_factor > 1.0) || sm.adapt_interval == 0 {
            return Err(bad("sampler.adapt_factor must be > 1 and adapt_interval > 0"));
        }
        if !(sm.eta > 0.0 && sm.eta < 1.0) {
            return Err(bad("sampler.eta must lie in (0, 1)"));
        }
        if self.run.variants.is_empty() {
            return Err(bad("run.variants must not be empty"));
        }
        if self.run.trials == 0 {
            return Err(bad("run.trials must be >= 1"));
        }
        if let Some(i) = self.probes().iter().find(|i| **i >= s.n) {
            return Err(bad(format!("probe index {i} outside grid of {}", s.n)));
        }
        Ok(())
    }
}
