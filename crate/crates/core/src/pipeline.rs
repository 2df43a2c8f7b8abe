//! End-to-end recovery: data generation, cross-validated prior strength,
//! support mask and one Metropolis-Hastings chain per posterior variant.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::diagnostics::{
    acceptance_ratio_series, chain_credibility, pointwise_abs_error, relative_error, CredInterval,
};
use crate::error::Result;
use crate::forward::{estimate_noise_variance, generate_mmv, sigma_for_snr, ForwardOperator, MeasurementEnsemble};
use crate::inference::{kfold_cv, AdmmSettings, CvRecord, MapSolver, PosteriorSpec, PosteriorVariant};
use crate::mcmc::{default_initial_state, mh_sample, posterior_mean, Chain, ProposalConfig};
use crate::pa::{build_pa_matrix, identity_transform, PaTransform};
use crate::signals::{discontinuities, sample_signal, Grid};
use crate::vbjs::{
    approximate_joint_sparsity, map_joint_sparsity, spatial_variance, JointSparsityMatrix, SparsityEstimate,
    SupportMask,
};

/// SplitMix64 finalizer folded over `tags`, giving independent-looking
/// seeds for each (noise level, trial, stage) from one base seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    tags.iter()
        .fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, t| {
            mix(acc ^ t.wrapping_add(0x9e37_79b9_7f4a_7c15))
        })
}

/// Grid, truth, forward operator and sparsifying transform of a configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub x_true: Vec<f64>,
    pub edges: Vec<usize>,
    pub op: ForwardOperator,
    pub l: PaTransform,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let s = &cfg.signal;
        let grid = Grid::new(s.n, s.lo, s.hi)?;
        let x_true = sample_signal(&s.spec, &grid)?;
        let edges = discontinuities(&s.spec, &grid)?;
        let op = ForwardOperator::dft(s.n)?;
        let l = match cfg.transform.order {
            0 => identity_transform(s.n),
            m => build_pa_matrix(m, &grid, cfg.transform.periodic)?,
        };
        Ok(Self {
            grid,
            x_true,
            edges,
            op,
            l,
        })
    }

    /// Noise levels to run, in configuration order.
    pub fn sigma_levels(&self, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
        match cfg.noise.snr_db {
            Some(db) => Ok(vec![sigma_for_snr(&self.op, &self.x_true, db)?]),
            None => Ok(cfg.noise.sigmas.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaskArtifacts {
    pub p: JointSparsityMatrix,
    pub mask: SupportMask,
}

/// Everything shared by the posterior variants of one (noise level, trial).
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sigma: f64,
    pub data_seed: u64,
    pub ens: MeasurementEnsemble,
    /// Estimated noise variance, floored at `noise.sigma2_floor`.
    pub sigma2: f64,
    pub lambda_hat: f64,
    pub cv_trace: Vec<CvRecord>,
    pub mask: Option<MaskArtifacts>,
}

/// Simulate the ensemble, estimate `sigma^2` and `lambda_hat`, and build the
/// support mask when `with_mask` is set.
pub fn prepare(
    problem: &Problem,
    cfg: &ExperimentConfig,
    sigma: f64,
    data_seed: u64,
    with_mask: bool,
) -> Result<Prepared> {
    let ens = generate_mmv(&problem.op, &problem.x_true, cfg.noise.j, sigma, data_seed)?;
    let sigma2 = estimate_noise_variance(&ens.y)?.max(cfg.noise.sigma2_floor);
    let solver = MapSolver::new(problem.op.clone(), problem.l.matrix().clone(), AdmmSettings::default())?;
    let (lambda_hat, cv_trace) = match cfg.cv.lambda_hat {
        Some(l) => (l, Vec::new()),
        None => {
            let hp = kfold_cv(
                &ens,
                &solver,
                sigma2,
                cfg.cv.k,
                cfg.cv.m_train,
                derive_seed(data_seed, &[1]),
            )?;
            (hp.lambda_hat, hp.trace)
        }
    };
    let mask = if with_mask {
        let p = match cfg.mask.estimate {
            SparsityEstimate::Inverse => approximate_joint_sparsity(&ens, &problem.op, &problem.l)?,
            SparsityEstimate::Map => map_joint_sparsity(&ens, &solver, &problem.l, lambda_hat, sigma2)?,
        };
        let v = spatial_variance(&p)?;
        let mask = SupportMask::from_variance(v, cfg.mask.epsilon, cfg.tau())?;
        Some(MaskArtifacts { p, mask })
    } else {
        None
    };
    Ok(Prepared {
        sigma,
        data_seed,
        ens,
        sigma2,
        lambda_hat,
        cv_trace,
        mask,
    })
}

/// Outcome of sampling one posterior variant.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: PosteriorVariant,
    pub chain_seed: u64,
    pub x0: Vec<f64>,
    pub chain: Chain,
    pub mean: Vec<f64>,
    pub band: CredInterval,
    pub summary: VariantSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: PosteriorVariant,
    pub relative_error: Option<f64>,
    pub mean_width: f64,
    pub acceptance_post_burn_in: f64,
    pub acceptance_running_final: f64,
    pub final_sigma_q: f64,
    pub probe_errors: Vec<f64>,
    /// Components whose starting MAP value falls outside the credibility band.
    pub start_outside_band: Vec<usize>,
}

pub fn run_variant(
    problem: &Problem,
    prep: &Prepared,
    cfg: &ExperimentConfig,
    variant: PosteriorVariant,
    chain_seed: u64,
) -> Result<VariantResult> {
    let mask = prep.mask.as_ref().map(|m| &m.mask);
    let spec = PosteriorSpec::new(
        variant,
        prep.lambda_hat,
        prep.sigma2,
        prep.ens.mean_observation(),
        problem.op.clone(),
        problem.l.matrix(),
        mask,
    )?;
    let x0 = default_initial_state(&prep.ens, &spec, prep.lambda_hat)?;
    let sm = &cfg.sampler;
    let mut proposal = ProposalConfig::new(sm.sigma_q.unwrap_or_else(|| ProposalConfig::default_sigma_q(&x0)))
        .with_mode(sm.mode)
        .with_adapt(sm.adapt);
    proposal.adapt_factor = sm.adapt_factor;
    proposal.adapt_interval = sm.adapt_interval;
    proposal.target_window = (sm.target_window[0], sm.target_window[1]);
    let chain = mh_sample(&spec, &x0, sm.n_iter, cfg.burn_in(), proposal, chain_seed)?;
    let mean = posterior_mean(&chain);
    let band = chain_credibility(&chain, sm.eta)?;
    let has_truth = problem.x_true.iter().any(|v| *v != 0.0);
    let summary = VariantSummary {
        variant,
        relative_error: if has_truth {
            Some(relative_error(&mean, &problem.x_true)?)
        } else {
            None
        },
        mean_width: band.mean_width(),
        acceptance_post_burn_in: chain.post_burn_in_acceptance(),
        acceptance_running_final: acceptance_ratio_series(&chain).last().copied().unwrap_or(0.0),
        final_sigma_q: chain.sigma_q,
        probe_errors: pointwise_abs_error(&mean, &problem.x_true, &cfg.probes())?,
        start_outside_band: band.outside(&x0),
    };
    Ok(VariantResult {
        variant,
        chain_seed,
        x0,
        chain,
        mean,
        band,
        summary,
    })
}

/// Chain seed of a trial. All variants of a trial share it, so two variants
/// with the same posterior produce the same chain and comparisons between
/// variants are not blurred by Monte Carlo noise.
pub fn chain_seed(data_seed: u64) -> u64 {
    derive_seed(data_seed, &[2])
}

/// Data seed of `(noise level index, trial)`.
pub fn data_seed(base: u64, sigma_index: usize, trial: usize) -> u64 {
    derive_seed(base, &[0, sigma_index as u64, trial as u64])
}
