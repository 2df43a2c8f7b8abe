//! Command implementations behind the `sparse-uq` binary.
//!
//! Each command reads an [`ExperimentConfig`], writes CSV/JSON artifacts into
//! the output directory and finishes with a `manifest.json` listing every
//! file with its SHA-256. Exit codes: 0 when every requested variant
//! completed, 2 for an invalid configuration, 3 when a solver or sampler
//! failed (outputs written so far are kept and the summary marks the
//! failures), 1 for I/O problems.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use sparse_uq::config::ExperimentConfig;
use sparse_uq::diagnostics::{acceptance_ratio_series, acf, chain_credibility, histogram, sturges_bins};
use sparse_uq::forward::{clean_power, snr_db};
use sparse_uq::inference::{CvRecord, PosteriorVariant};
use sparse_uq::io::{read_chain, write_chain, write_columns, write_csv, write_ensemble, write_json, Manifest};
use sparse_uq::mcmc::{posterior_mean, Chain};
use sparse_uq::pipeline::{chain_seed, data_seed, prepare, run_variant, Problem, VariantResult, VariantSummary};

pub mod svg;

#[derive(Debug, Parser)]
#[command(
    name = "sparse-uq",
    version,
    about = "Support-informed sparse recovery with MCMC uncertainty quantification"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub svg: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Cross-validation, mask and one chain per posterior variant.
    Recover,
    /// Repeat recovery over noise levels and trials and aggregate errors.
    Sweep,
    /// Joint-sparsity matrix, variance, weights and mask.
    Mask,
    /// K-fold cross-validation of the prior strength only.
    Cv,
    /// Diagnostics for a saved chain.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Path prefix of a saved chain: reads `<prefix>_states.csv` and `<prefix>_chain.json`.
    #[arg(long)]
    pub chain: PathBuf,
    /// Credibility level; defaults to `sampler.eta`.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Defaults to `run.max_lag`.
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Comma-separated component indices; defaults to the configured probes.
    #[arg(long, value_delimiter = ',')]
    pub probes: Option<Vec<usize>>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Run(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "{m}"),
            Failure::Run(m) => write!(f, "run failed: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn io_fail(e: impl std::fmt::Display) -> Failure {
    Failure::Io(e.to_string())
}

fn run_fail(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn core_fail(e: sparse_uq::Error) -> Failure {
    match e {
        sparse_uq::Error::Io(e) => Failure::Io(e.to_string()),
        e @ sparse_uq::Error::Config(_) => Failure::Config(e.to_string()),
        other => Failure::Run(other.to_string()),
    }
}

fn config_fail(e: sparse_uq::Error) -> Failure {
    match e {
        e @ sparse_uq::Error::Config(_) => Failure::Config(e.to_string()),
        other => Failure::Config(format!("invalid config: {other}")),
    }
}

/// Whether every requested unit of work finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub complete: bool,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        if self.complete {
            0
        } else {
            3
        }
    }
}

/// Parsed configuration, output directory and manifest under construction.
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub config_text: String,
    pub out: PathBuf,
    pub svg: bool,
    pub manifest: Manifest,
}

impl RunContext {
    pub fn new(command: &str, global: &GlobalArgs) -> Result<Self, Failure> {
        let mut cfg = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("invalid config: cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text).map_err(config_fail)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = global.seed {
            cfg.run.seed = seed;
        }
        cfg.validate().map_err(config_fail)?;
        let config_text = cfg.to_toml().map_err(config_fail)?;
        fs::create_dir_all(&global.out).map_err(io_fail)?;
        let manifest = Manifest::new(command, cfg.run.seed, &config_text);
        let mut ctx = Self {
            cfg,
            config_text,
            out: global.out.clone(),
            svg: global.svg,
            manifest,
        };
        let resolved = ctx.out.join("config.toml");
        fs::write(&resolved, &ctx.config_text).map_err(io_fail)?;
        ctx.track(&resolved)?;
        Ok(ctx)
    }

    fn track(&mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.add(&self.out, path).map_err(core_fail)
    }

    fn track_all(&mut self, paths: &[PathBuf]) -> Result<(), Failure> {
        paths.iter().try_for_each(|p| self.track(p))
    }

    fn dir(&self, name: &str) -> Result<PathBuf, Failure> {
        let d = self.out.join(name);
        fs::create_dir_all(&d).map_err(io_fail)?;
        Ok(d)
    }

    fn write_svg(&mut self, path: PathBuf, chart: svg::Chart) -> Result<(), Failure> {
        if self.svg {
            fs::write(&path, chart.render()).map_err(io_fail)?;
            self.track(&path)?;
        }
        Ok(())
    }

    fn finish<T: Serialize>(mut self, summary: &T, complete: bool) -> Result<Outcome, Failure> {
        let path = self.out.join("summary.json");
        write_json(&path, summary).map_err(core_fail)?;
        self.track(&path)?;
        self.manifest.complete = complete;
        self.manifest.write(&self.out).map_err(core_fail)?;
        Ok(Outcome { complete })
    }
}

/// Parse-free entry point used by `main` and the tests.
pub fn execute(cli: &Cli) -> Result<Outcome, Failure> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Failure::Config("invalid config: --threads must be >= 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Recover => run_recover(RunContext::new("recover", &cli.global)?),
        Command::Sweep => run_sweep(RunContext::new("sweep", &cli.global)?),
        Command::Mask => run_mask(RunContext::new("mask", &cli.global)?),
        Command::Cv => run_cv(RunContext::new("cv", &cli.global)?),
        Command::Diagnose(args) => run_diagnose(RunContext::new("diagnose", &cli.global)?, args),
    }
}

fn problem_of(cfg: &ExperimentConfig) -> Result<(Problem, Vec<f64>), Failure> {
    let problem = Problem::from_config(cfg).map_err(config_fail)?;
    let sigmas = problem.sigma_levels(cfg).map_err(config_fail)?;
    Ok((problem, sigmas))
}

fn snr_of(problem: &Problem, sigma: f64) -> Option<f64> {
    let p = clean_power(&problem.op, &problem.x_true).ok()?;
    snr_db(p, sigma * sigma).ok()
}

fn idx(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

fn write_truth(ctx: &mut RunContext, problem: &Problem) -> Result<(), Failure> {
    let path = ctx.out.join("truth.csv");
    write_columns(
        &path,
        &[
            ("i", &idx(problem.grid.n())),
            ("s", &problem.grid.points()),
            ("x", &problem.x_true),
        ],
    )
    .map_err(core_fail)?;
    ctx.track(&path)
}

fn write_cv_trace(ctx: &mut RunContext, trace: &[CvRecord]) -> Result<(), Failure> {
    let path = ctx.out.join("cv_trace.csv");
    write_csv(
        &path,
        &["trial", "column", "lambda", "error"],
        trace.iter().map(|r| {
            vec![
                r.trial.to_string(),
                r.column.to_string(),
                r.lambda.to_string(),
                r.error.to_string(),
            ]
        }),
    )
    .map_err(core_fail)?;
    ctx.track(&path)
}

#[derive(Debug, Serialize)]
struct VariantEntry {
    variant: PosteriorVariant,
    status: &'static str,
    error: Option<String>,
    result: Option<VariantSummary>,
}

#[derive(Debug, Serialize)]
struct RecoverSummary {
    command: &'static str,
    seed: u64,
    sigma: f64,
    snr_db: Option<f64>,
    sigma2_hat: f64,
    lambda_hat: f64,
    mask_zeros: Option<Vec<usize>>,
    probes: Vec<usize>,
    eta: f64,
    variants: Vec<VariantEntry>,
    complete: bool,
}

pub fn run_recover(mut ctx: RunContext) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg.clone();
    let (problem, sigmas) = problem_of(&cfg)?;
    let sigma = sigmas[0];
    let ds = data_seed(cfg.run.seed, 0, 0);
    let needs_mask = cfg.run.variants.iter().any(|v| v.is_masked());
    let prep = prepare(&problem, &cfg, sigma, ds, needs_mask).map_err(run_fail)?;

    write_truth(&mut ctx, &problem)?;
    let paths = write_ensemble(&ctx.out, "ensemble", &prep.ens).map_err(core_fail)?;
    ctx.track_all(&paths)?;
    if !prep.cv_trace.is_empty() {
        write_cv_trace(&mut ctx, &prep.cv_trace)?;
    }
    if let Some(m) = &prep.mask {
        let path = ctx.out.join("mask.csv");
        let mask: Vec<f64> = m.mask.diag.iter().map(|b| f64::from(u8::from(*b))).collect();
        write_columns(
            &path,
            &[
                ("i", &idx(m.mask.n())),
                ("v", &m.mask.v),
                ("w", &m.mask.w),
                ("mask", &mask),
            ],
        )
        .map_err(core_fail)?;
        ctx.track(&path)?;
    }

    let seed = chain_seed(ds);
    let results: Vec<(PosteriorVariant, sparse_uq::Result<VariantResult>)> = cfg
        .run
        .variants
        .par_iter()
        .map(|v| (*v, run_variant(&problem, &prep, &cfg, *v, seed)))
        .collect();

    let mut entries = Vec::new();
    for (variant, res) in results {
        match res {
            Ok(r) => {
                if !r.summary.start_outside_band.is_empty() {
                    eprintln!(
                        "warning: {}: starting MAP value lies outside C_{} at {} component(s)",
                        variant.name(),
                        cfg.sampler.eta,
                        r.summary.start_outside_band.len()
                    );
                }
                write_variant(&mut ctx, &problem, &r)?;
                entries.push(VariantEntry {
                    variant,
                    status: "ok",
                    error: None,
                    result: Some(r.summary),
                });
            }
            Err(e) => {
                eprintln!("error: {}: {e}", variant.name());
                entries.push(VariantEntry {
                    variant,
                    status: "failed",
                    error: Some(e.to_string()),
                    result: None,
                });
            }
        }
    }
    let complete = entries.iter().all(|e| e.status == "ok");
    let summary = RecoverSummary {
        command: "recover",
        seed: cfg.run.seed,
        sigma,
        snr_db: snr_of(&problem, sigma),
        sigma2_hat: prep.sigma2,
        lambda_hat: prep.lambda_hat,
        mask_zeros: prep.mask.as_ref().map(|m| m.mask.zeros().collect()),
        probes: cfg.probes(),
        eta: cfg.sampler.eta,
        variants: entries,
        complete,
    };
    ctx.finish(&summary, complete)
}

fn write_variant(ctx: &mut RunContext, problem: &Problem, r: &VariantResult) -> Result<(), Failure> {
    let name = r.variant.name();
    let dir = ctx.dir(name)?;
    let n = problem.grid.n();
    let s = problem.grid.points();

    let band_path = dir.join("band.csv");
    write_columns(
        &band_path,
        &[
            ("i", &idx(n)),
            ("s", &s),
            ("x_true", &problem.x_true),
            ("x0", &r.x0),
            ("mean", &r.mean),
            ("lower", &r.band.lower),
            ("upper", &r.band.upper),
        ],
    )
    .map_err(core_fail)?;
    ctx.track(&band_path)?;

    let paths = write_chain(&dir, name, &r.chain).map_err(core_fail)?;
    ctx.track_all(&paths)?;

    let probes = ctx.cfg.probes();
    write_chain_diagnostics(ctx, &dir, &r.chain, &probes, ctx.cfg.run.max_lag)?;

    let title = format!("{name}: posterior mean and C_{}", ctx.cfg.sampler.eta);
    ctx.write_svg(
        dir.join("band.svg"),
        svg::Chart {
            title: &title,
            x_label: "s",
            y_label: "x",
            series: vec![
                svg::Series {
                    label: "mean",
                    x: &s,
                    y: &r.mean,
                },
                svg::Series {
                    label: "truth",
                    x: &s,
                    y: &problem.x_true,
                },
            ],
            bands: vec![svg::Band {
                x: &s,
                lower: &r.band.lower,
                upper: &r.band.upper,
            }],
        },
    )?;
    Ok(())
}

/// ACF, running acceptance ratio, probe histograms and (optionally) plots.
fn write_chain_diagnostics(
    ctx: &mut RunContext,
    dir: &Path,
    chain: &Chain,
    probes: &[usize],
    max_lag: usize,
) -> Result<(), Failure> {
    let kept = chain.kept();
    let lag = max_lag.min(kept.saturating_sub(1));
    let acfs: Vec<Vec<f64>> = probes
        .iter()
        .map(|&p| acf(&chain.component(p), lag).unwrap_or_else(|_| vec![f64::NAN; lag + 1]))
        .collect();
    let labels: Vec<String> = probes.iter().map(|p| format!("x_{p}")).collect();
    let lags = idx(lag + 1);
    let mut cols: Vec<(&str, &[f64])> = vec![("lag", &lags)];
    cols.extend(labels.iter().zip(&acfs).map(|(l, a)| (l.as_str(), a.as_slice())));
    let acf_path = dir.join("acf.csv");
    write_columns(&acf_path, &cols).map_err(core_fail)?;
    ctx.track(&acf_path)?;

    let running = acceptance_ratio_series(chain);
    let t: Vec<f64> = (1..=running.len()).map(|v| v as f64).collect();
    let acc_path = dir.join("acceptance.csv");
    write_columns(&acc_path, &[("t", &t), ("acceptance_ratio", &running)]).map_err(core_fail)?;
    ctx.track(&acc_path)?;

    let bins = sturges_bins(kept);
    let mut rows = Vec::new();
    for &p in probes {
        let h = histogram(&chain.component(p), bins).map_err(run_fail)?;
        for (b, c) in h.counts.iter().enumerate() {
            rows.push(vec![
                p.to_string(),
                b.to_string(),
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                c.to_string(),
            ]);
        }
    }
    let hist_path = dir.join("histograms.csv");
    write_csv(&hist_path, &["component", "bin", "lower", "upper", "count"], rows).map_err(core_fail)?;
    ctx.track(&hist_path)?;

    if ctx.svg {
        let traces: Vec<Vec<f64>> = probes.iter().map(|&p| chain.trace(p)).collect();
        let iters = idx(chain.n_iter());
        let series = labels
            .iter()
            .zip(&traces)
            .map(|(l, y)| svg::Series { label: l, x: &iters, y })
            .collect();
        ctx.write_svg(
            dir.join("trace.svg"),
            svg::Chart {
                title: "trace",
                x_label: "iteration",
                y_label: "x",
                series,
                bands: vec![],
            },
        )?;
        let series = labels
            .iter()
            .zip(&acfs)
            .map(|(l, y)| svg::Series { label: l, x: &lags, y })
            .collect();
        ctx.write_svg(
            dir.join("acf.svg"),
            svg::Chart {
                title: "autocorrelation",
                x_label: "lag",
                y_label: "r",
                series,
                bands: vec![],
            },
        )?;
        ctx.write_svg(
            dir.join("acceptance.svg"),
            svg::Chart {
                title: "running acceptance ratio",
                x_label: "iteration",
                y_label: "ratio",
                series: vec![svg::Series {
                    label: "ratio",
                    x: &t,
                    y: &running,
                }],
                bands: vec![],
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct TrialRow {
    sigma: f64,
    trial: usize,
    variant: PosteriorVariant,
    lambda_hat: f64,
    error: Option<String>,
    summary: Option<VariantSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct AggregateRow {
    sigma: f64,
    snr_db: Option<f64>,
    variant: PosteriorVariant,
    trials_ok: usize,
    relative_error_mean: f64,
    relative_error_std: f64,
    mean_width_mean: f64,
    mean_width_std: f64,
    probe_error_mean: Vec<f64>,
    probe_error_std: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    command: &'static str,
    seed: u64,
    trials: usize,
    probes: Vec<usize>,
    aggregate: Vec<AggregateRow>,
    failures: usize,
    complete: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, s)
}

pub fn run_sweep(mut ctx: RunContext) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg.clone();
    let (problem, sigmas) = problem_of(&cfg)?;
    let needs_mask = cfg.run.variants.iter().any(|v| v.is_masked());
    let jobs: Vec<(usize, usize)> = (0..sigmas.len())
        .flat_map(|s| (0..cfg.run.trials).map(move |t| (s, t)))
        .collect();

    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .flat_map_iter(|&(si, trial)| {
            let sigma = sigmas[si];
            let ds = data_seed(cfg.run.seed, si, trial);
            match prepare(&problem, &cfg, sigma, ds, needs_mask) {
                Err(e) => cfg
                    .run
                    .variants
                    .iter()
                    .map(|v| TrialRow {
                        sigma,
                        trial,
                        variant: *v,
                        lambda_hat: f64::NAN,
                        error: Some(e.to_string()),
                        summary: None,
                    })
                    .collect::<Vec<_>>(),
                Ok(prep) => cfg
                    .run
                    .variants
                    .iter()
                    .map(|v| match run_variant(&problem, &prep, &cfg, *v, chain_seed(ds)) {
                        Ok(r) => TrialRow {
                            sigma,
                            trial,
                            variant: *v,
                            lambda_hat: prep.lambda_hat,
                            error: None,
                            summary: Some(r.summary),
                        },
                        Err(e) => TrialRow {
                            sigma,
                            trial,
                            variant: *v,
                            lambda_hat: prep.lambda_hat,
                            error: Some(e.to_string()),
                            summary: None,
                        },
                    })
                    .collect(),
            }
        })
        .collect();

    let probes = cfg.probes();
    let mut header: Vec<String> = [
        "sigma",
        "snr_db",
        "trial",
        "variant",
        "status",
        "lambda_hat",
        "relative_error",
        "mean_width",
        "acceptance",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(probes.iter().map(|p| format!("abs_error_{p}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let fmt_opt = |v: Option<f64>| v.map_or(String::from("NaN"), |x| x.to_string());
    let trial_path = ctx.out.join("sweep_trials.csv");
    write_csv(
        &trial_path,
        &header_refs,
        rows.iter().map(|r| {
            let mut row = vec![
                r.sigma.to_string(),
                fmt_opt(snr_of(&problem, r.sigma)),
                r.trial.to_string(),
                r.variant.name().to_string(),
                if r.error.is_none() {
                    "ok".into()
                } else {
                    "failed".into()
                },
                r.lambda_hat.to_string(),
            ];
            match &r.summary {
                Some(s) => {
                    row.push(fmt_opt(s.relative_error));
                    row.push(s.mean_width.to_string());
                    row.push(s.acceptance_post_burn_in.to_string());
                    row.extend(s.probe_errors.iter().map(|e| e.to_string()));
                }
                None => row.extend(std::iter::repeat_n("NaN".to_string(), 3 + probes.len())),
            }
            row
        }),
    )
    .map_err(core_fail)?;
    ctx.track(&trial_path)?;

    let mut order: Vec<usize> = (0..sigmas.len()).collect();
    order.sort_by(|a, b| sigmas[*b].total_cmp(&sigmas[*a]).then(a.cmp(b)));
    let mut aggregate = Vec::new();
    for &si in &order {
        let sigma = sigmas[si];
        for &variant in &cfg.run.variants {
            let ok: Vec<&VariantSummary> = rows
                .iter()
                .filter(|r| r.sigma.to_bits() == sigma.to_bits() && r.variant == variant)
                .filter_map(|r| r.summary.as_ref())
                .collect();
            let rel: Vec<f64> = ok.iter().filter_map(|s| s.relative_error).collect();
            let width: Vec<f64> = ok.iter().map(|s| s.mean_width).collect();
            let (rm, rs) = mean_std(&rel);
            let (wm, ws) = mean_std(&width);
            let (pm, ps): (Vec<f64>, Vec<f64>) = (0..probes.len())
                .map(|k| mean_std(&ok.iter().map(|s| s.probe_errors[k]).collect::<Vec<_>>()))
                .unzip();
            aggregate.push(AggregateRow {
                sigma,
                snr_db: snr_of(&problem, sigma),
                variant,
                trials_ok: ok.len(),
                relative_error_mean: rm,
                relative_error_std: rs,
                mean_width_mean: wm,
                mean_width_std: ws,
                probe_error_mean: pm,
                probe_error_std: ps,
            });
        }
    }

    let mut header: Vec<String> = [
        "sigma",
        "snr_db",
        "variant",
        "trials_ok",
        "relative_error_mean",
        "relative_error_std",
        "mean_width_mean",
        "mean_width_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in &probes {
        header.push(format!("abs_error_{p}_mean"));
        header.push(format!("abs_error_{p}_std"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let agg_path = ctx.out.join("sweep_summary.csv");
    write_csv(
        &agg_path,
        &header_refs,
        aggregate.iter().map(|a| {
            let mut row = vec![
                a.sigma.to_string(),
                fmt_opt(a.snr_db),
                a.variant.name().to_string(),
                a.trials_ok.to_string(),
                a.relative_error_mean.to_string(),
                a.relative_error_std.to_string(),
                a.mean_width_mean.to_string(),
                a.mean_width_std.to_string(),
            ];
            for (m, s) in a.probe_error_mean.iter().zip(&a.probe_error_std) {
                row.push(m.to_string());
                row.push(s.to_string());
            }
            row
        }),
    )
    .map_err(core_fail)?;
    ctx.track(&agg_path)?;

    if ctx.svg {
        let curves: Vec<(PosteriorVariant, Vec<f64>, Vec<f64>)> = cfg
            .run
            .variants
            .iter()
            .map(|v| {
                let pts: Vec<&AggregateRow> = aggregate.iter().filter(|a| a.variant == *v).collect();
                (
                    *v,
                    pts.iter().map(|a| a.sigma).collect(),
                    pts.iter().map(|a| a.relative_error_mean).collect(),
                )
            })
            .collect();
        let series = curves
            .iter()
            .map(|(v, x, y)| svg::Series { label: v.name(), x, y })
            .collect();
        ctx.write_svg(
            ctx.out.join("relative_error.svg"),
            svg::Chart {
                title: "relative error of the posterior mean",
                x_label: "sigma",
                y_label: "relative error",
                series,
                bands: vec![],
            },
        )?;
    }

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "error: sigma {} trial {} {}: {}",
            r.sigma,
            r.trial,
            r.variant.name(),
            r.error.as_deref().unwrap_or("")
        );
    }
    let summary = SweepSummary {
        command: "sweep",
        seed: cfg.run.seed,
        trials: cfg.run.trials,
        probes,
        aggregate,
        failures,
        complete: failures == 0,
    };
    ctx.finish(&summary, failures == 0)
}

#[derive(Debug, Serialize)]
struct MaskSummary {
    command: &'static str,
    seed: u64,
    sigma: f64,
    sigma2_hat: f64,
    lambda_hat: f64,
    tau: f64,
    epsilon: f64,
    edges: Vec<usize>,
    zeros: Vec<usize>,
}

pub fn run_mask(mut ctx: RunContext) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg.clone();
    let (problem, sigmas) = problem_of(&cfg)?;
    let sigma = sigmas[0];
    let prep = prepare(&problem, &cfg, sigma, data_seed(cfg.run.seed, 0, 0), true).map_err(run_fail)?;
    let art = prep.mask.as_ref().expect("mask requested");
    let n = problem.grid.n();
    let i = idx(n);

    write_truth(&mut ctx, &problem)?;
    let mut header = vec!["i".to_string()];
    header.extend((0..art.p.j()).map(|j| format!("p_{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let p_path = ctx.out.join("joint_sparsity.csv");
    write_csv(
        &p_path,
        &header_refs,
        (0..n).map(|r| {
            std::iter::once(r.to_string())
                .chain(art.p.0.row(r).iter().map(|v| v.to_string()))
                .collect()
        }),
    )
    .map_err(core_fail)?;
    ctx.track(&p_path)?;

    let m = &art.mask;
    let mask: Vec<f64> = m.diag.iter().map(|b| f64::from(u8::from(*b))).collect();
    for (file, col, data) in [
        ("variance.csv", "v", &m.v),
        ("weights.csv", "w", &m.w),
        ("mask.csv", "mask", &mask),
    ] {
        let path = ctx.out.join(file);
        write_columns(&path, &[("i", &i), (col, data)]).map_err(core_fail)?;
        ctx.track(&path)?;
    }
    if !prep.cv_trace.is_empty() {
        write_cv_trace(&mut ctx, &prep.cv_trace)?;
    }

    let s = problem.grid.points();
    ctx.write_svg(
        ctx.out.join("variance.svg"),
        svg::Chart {
            title: "spatial variance of the joint-sparsity matrix",
            x_label: "s",
            y_label: "v",
            series: vec![svg::Series {
                label: "v",
                x: &s,
                y: &m.v,
            }],
            bands: vec![],
        },
    )?;
    let scaled: Vec<f64> = {
        let peak = problem.x_true.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
        mask.iter().map(|v| v * peak).collect()
    };
    ctx.write_svg(
        ctx.out.join("mask.svg"),
        svg::Chart {
            title: "mask (scaled to signal peak) and truth",
            x_label: "s",
            y_label: "x",
            series: vec![
                svg::Series {
                    label: "truth",
                    x: &s,
                    y: &problem.x_true,
                },
                svg::Series {
                    label: "mask",
                    x: &s,
                    y: &scaled,
                },
            ],
            bands: vec![],
        },
    )?;

    let summary = MaskSummary {
        command: "mask",
        seed: cfg.run.seed,
        sigma,
        sigma2_hat: prep.sigma2,
        lambda_hat: prep.lambda_hat,
        tau: cfg.tau(),
        epsilon: cfg.mask.epsilon,
        edges: problem.edges.clone(),
        zeros: m.zeros().collect(),
    };
    ctx.finish(&summary, true)
}

#[derive(Debug, Serialize)]
struct CvSummary {
    command: &'static str,
    seed: u64,
    sigma: f64,
    sigma2_hat: f64,
    k: usize,
    m_train: usize,
    lambda_hat: f64,
    best: CvRecord,
}

pub fn run_cv(mut ctx: RunContext) -> Result<Outcome, Failure> {
    let mut cfg = ctx.cfg.clone();
    cfg.cv.lambda_hat = None;
    cfg.validate().map_err(config_fail)?;
    let (problem, sigmas) = problem_of(&cfg)?;
    let sigma = sigmas[0];
    let ds = data_seed(cfg.run.seed, 0, 0);
    let prep = prepare(&problem, &cfg, sigma, ds, false).map_err(run_fail)?;
    write_cv_trace(&mut ctx, &prep.cv_trace)?;
    let best = *prep
        .cv_trace
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .ok_or_else(|| Failure::Run("cross-validation produced no records".into()))?;

    if ctx.svg {
        let lambdas: Vec<f64> = prep.cv_trace.iter().map(|r| r.lambda).collect();
        let errors: Vec<f64> = prep.cv_trace.iter().map(|r| r.error).collect();
        let mut order: Vec<usize> = (0..lambdas.len()).collect();
        order.sort_by(|a, b| lambdas[*a].total_cmp(&lambdas[*b]));
        let xs: Vec<f64> = order.iter().map(|i| lambdas[*i]).collect();
        let ys: Vec<f64> = order.iter().map(|i| errors[*i]).collect();
        ctx.write_svg(
            ctx.out.join("cv.svg"),
            svg::Chart {
                title: "cross-validation error",
                x_label: "lambda",
                y_label: "mean MSE",
                series: vec![svg::Series {
                    label: "candidates",
                    x: &xs,
                    y: &ys,
                }],
                bands: vec![],
            },
        )?;
    }

    let summary = CvSummary {
        command: "cv",
        seed: cfg.run.seed,
        sigma,
        sigma2_hat: prep.sigma2,
        k: cfg.cv.k,
        m_train: cfg.cv.m_train,
        lambda_hat: prep.lambda_hat,
        best,
    };
    ctx.finish(&summary, true)
}

#[derive(Debug, Serialize)]
struct DiagnoseSummary {
    command: &'static str,
    chain: String,
    n: usize,
    n_iter: usize,
    burn_in: usize,
    eta: f64,
    acceptance_post_burn_in: f64,
    acceptance_running_final: f64,
    mean_width: f64,
    probes: Vec<usize>,
}

pub fn run_diagnose(mut ctx: RunContext, args: &DiagnoseArgs) -> Result<Outcome, Failure> {
    let prefix = args.chain.to_string_lossy().to_string();
    let states = PathBuf::from(format!("{prefix}_states.csv"));
    let meta = PathBuf::from(format!("{prefix}_chain.json"));
    let chain = read_chain(&states, &meta).map_err(|e| match e {
        sparse_uq::Error::Io(io) => Failure::Io(format!("{}: {io}", states.display())),
        other => Failure::Config(format!("invalid chain {prefix}: {other}")),
    })?;
    let eta = args.eta.unwrap_or(ctx.cfg.sampler.eta);
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Failure::Config(format!(
            "invalid config: --eta must lie in (0, 1), got {eta}"
        )));
    }
    let max_lag = args.max_lag.unwrap_or(ctx.cfg.run.max_lag);
    let probes = args.probes.clone().unwrap_or_else(|| ctx.cfg.probes());
    if let Some(p) = probes.iter().find(|p| **p >= chain.n()) {
        return Err(Failure::Config(format!(
            "invalid config: probe {p} outside chain dimension {}",
            chain.n()
        )));
    }

    let band = chain_credibility(&chain, eta).map_err(run_fail)?;
    let mean = posterior_mean(&chain);
    let widths = band.widths();
    let path = ctx.out.join("band.csv");
    write_columns(
        &path,
        &[
            ("i", &idx(chain.n())),
            ("mean", &mean),
            ("lower", &band.lower),
            ("upper", &band.upper),
            ("width", &widths),
        ],
    )
    .map_err(core_fail)?;
    ctx.track(&path)?;
    let out = ctx.out.clone();
    write_chain_diagnostics(&mut ctx, &out, &chain, &probes, max_lag)?;

    let summary = DiagnoseSummary {
        command: "diagnose",
        chain: prefix,
        n: chain.n(),
        n_iter: chain.n_iter(),
        burn_in: chain.burn_in,
        eta,
        acceptance_post_burn_in: chain.post_burn_in_acceptance(),
        acceptance_running_final: acceptance_ratio_series(&chain).last().copied().unwrap_or(0.0),
        mean_width: band.mean_width(),
        probes,
    };
    ctx.finish(&summary, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Config(String::new()).exit_code(), 2);
        assert_eq!(Failure::Run(String::new()).exit_code(), 3);
        assert_eq!(Outcome { complete: true }.exit_code(), 0);
        assert_eq!(Outcome { complete: false }.exit_code(), 3);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from([
            "sparse-uq",
            "mask",
            "--seed",
            "4",
            "--svg",
            "--out",
            "x",
            "--threads",
            "2",
        ])
        .unwrap();
        assert_eq!(cli.global.seed, Some(4));
        assert!(cli.global.svg);
        assert_eq!(cli.global.threads, Some(2));
        let cli = Cli::try_parse_from(["sparse-uq", "diagnose", "--chain", "a/b", "--probes", "1,2"]).unwrap();
        match cli.command {
            Command::Diagnose(a) => assert_eq!(a.probes, Some(vec![1, 2])),
            _ => panic!("wrong subcommand"),
        }
    }
}
