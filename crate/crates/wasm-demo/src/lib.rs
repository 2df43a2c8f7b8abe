//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page can plot it without a
//! bundler or generated TypeScript types.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sparse_uq::config::ExperimentConfig;
use sparse_uq::inference::PosteriorVariant;
use sparse_uq::mcmc::ProposalMode;
use sparse_uq::pa::build_pa_matrix;
use sparse_uq::pipeline::{chain_seed, data_seed, prepare, run_variant, Problem};
use sparse_uq::signals::{Grid, SignalSpec};

#[derive(Serialize)]
struct MaskView {
    s: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
    mask: Vec<u8>,
    lambda_hat: f64,
    threshold_variance: f64,
}

#[derive(Serialize)]
struct StepView {
    s: Vec<f64>,
    step: Vec<f64>,
    response: Vec<f64>,
}

#[derive(Serialize)]
struct RecoveryView {
    s: Vec<f64>,
    x: Vec<f64>,
    x0: Vec<f64>,
    mean: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    relative_error: Option<f64>,
    acceptance: f64,
}

fn demo_config(n: usize, j: usize, sigma: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.signal.n = n;
    cfg.noise.j = j;
    cfg.noise.sigmas = vec![sigma];
    cfg.cv.k = 5;
    cfg.cv.m_train = (j / 2).max(1);
    cfg.run.seed = seed;
    cfg
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Joint-sparsity variance and support mask of the piecewise test signal.
pub fn mask_json(n: usize, j: usize, sigma: f64, seed: u64) -> Result<String, String> {
    let cfg = demo_config(n, j, sigma, seed);
    cfg.validate().map_err(|e| e.to_string())?;
    let problem = Problem::from_config(&cfg).map_err(|e| e.to_string())?;
    let prep = prepare(&problem, &cfg, sigma, data_seed(seed, 0, 0), true).map_err(|e| e.to_string())?;
    let m = &prep.mask.as_ref().ok_or("no mask")?.mask;
    to_json(&MaskView {
        s: problem.grid.points(),
        x: problem.x_true.clone(),
        v: m.v.clone(),
        mask: m.diag.iter().map(|b| u8::from(*b)).collect(),
        lambda_hat: prep.lambda_hat,
        threshold_variance: 1.0 / m.tau - m.epsilon,
    })
}

/// Order-`order` edge transform applied to a unit step at the grid midpoint.
pub fn step_response_json(order: usize, n: usize, periodic: bool) -> Result<String, String> {
    let grid = Grid::unit(n).map_err(|e| e.to_string())?;
    let l = build_pa_matrix(order, &grid, periodic).map_err(|e| e.to_string())?;
    let step: Vec<f64> = (0..n).map(|k| if k >= n / 2 { 1.0 } else { 0.0 }).collect();
    let response = l.apply(&step).map_err(|e| e.to_string())?;
    to_json(&StepView {
        s: grid.points(),
        step,
        response,
    })
}

/// Short Metropolis-Hastings run for one posterior variant.
pub fn recover_json(variant: &str, n: usize, sigma: f64, n_iter: usize, seed: u64) -> Result<String, String> {
    let variant: PosteriorVariant = variant.parse().map_err(|e: sparse_uq::Error| e.to_string())?;
    let mut cfg = demo_config(n, 10, sigma, seed);
    cfg.signal.spec = SignalSpec::PiecewiseExample;
    cfg.sampler.n_iter = n_iter;
    cfg.sampler.adapt_interval = (n_iter / 20).max(10);
    cfg.sampler.mode = ProposalMode::ComponentwiseSweep;
    cfg.run.variants = vec![variant];
    cfg.validate().map_err(|e| e.to_string())?;
    let problem = Problem::from_config(&cfg).map_err(|e| e.to_string())?;
    let ds = data_seed(seed, 0, 0);
    let prep = prepare(&problem, &cfg, sigma, ds, variant.is_masked()).map_err(|e| e.to_string())?;
    let r = run_variant(&problem, &prep, &cfg, variant, chain_seed(ds)).map_err(|e| e.to_string())?;
    to_json(&RecoveryView {
        s: problem.grid.points(),
        x: problem.x_true.clone(),
        x0: r.x0,
        mean: r.mean,
        lower: r.band.lower,
        upper: r.band.upper,
        relative_error: r.summary.relative_error,
        acceptance: r.summary.acceptance_post_burn_in,
    })
}

#[wasm_bindgen]
pub fn support_mask(n: usize, j: usize, sigma: f64, seed: u32) -> Result<String, JsValue> {
    mask_json(n, j, sigma, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn step_response(order: usize, n: usize, periodic: bool) -> Result<String, JsValue> {
    step_response_json(order, n, periodic).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn recover(variant: &str, n: usize, sigma: f64, n_iter: usize, seed: u32) -> Result<String, JsValue> {
    recover_json(variant, n, sigma, n_iter, seed.into()).map_err(|e| JsValue::from_str(&e))
}
