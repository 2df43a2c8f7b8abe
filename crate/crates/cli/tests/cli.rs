use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use serde_json::Value;
use sparse_uq::io::{read_json, Manifest};

const SMALL: &str = r#"
[signal]
n = 32
[noise]
j = 6
sigmas = [0.8, 0.4]
[cv]
k = 3
m_train = 3
[sampler]
n_iter = 600
"#;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_sparse-uq"))
        .current_dir(dir)
        .args(args)
        .stderr(Stdio::null())
        .status()
        .expect("binary runs");
    status.code().expect("exit code")
}

fn with_config(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), format!("{SMALL}{extra}")).unwrap();
    dir
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn invalid_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("unknown.toml"), "colour = 1\n").unwrap();
    fs::write(dir.path().join("range.toml"), "[sampler]\neta = 1.5\n").unwrap();
    fs::write(dir.path().join("variant.toml"), "[run]\nvariants = [\"gibbs\"]\n").unwrap();
    for file in ["unknown.toml", "range.toml", "variant.toml", "missing.toml"] {
        assert_eq!(
            run(dir.path(), &["recover", "--config", file, "--out", "o"]),
            2,
            "{file}"
        );
    }
    assert_eq!(run(dir.path(), &["mask", "--threads", "0", "--out", "o"]), 2);
}

#[test]
fn recover_is_reproducible_across_thread_counts() {
    let dir = with_config("");
    let p = dir.path();
    assert_eq!(
        run(
            p,
            &[
                "recover",
                "--config",
                "c.toml",
                "--seed",
                "5",
                "--out",
                "a",
                "--threads",
                "1"
            ]
        ),
        0
    );
    assert_eq!(
        run(
            p,
            &[
                "recover",
                "--config",
                "c.toml",
                "--seed",
                "5",
                "--out",
                "b",
                "--threads",
                "3"
            ]
        ),
        0
    );
    for f in ["summary.json", "manifest.json", "laplace_l1/laplace_l1_states.csv"] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest: Manifest = read_json(p.join("a/manifest.json")).unwrap();
    assert!(manifest.complete);
    assert!(manifest.verify(&p.join("a")).unwrap().is_empty());
    assert!(manifest.files.contains_key("masked_l2/band.csv"));

    assert_eq!(
        run(p, &["recover", "--config", "c.toml", "--seed", "6", "--out", "c"]),
        0
    );
    assert_ne!(
        fs::read(p.join("a/summary.json")).unwrap(),
        fs::read(p.join("c/summary.json")).unwrap()
    );
}

#[test]
fn unmasked_run_writes_no_mask_files() {
    let dir = with_config("[run]\nvariants = [\"laplace_l1\"]\n");
    let p = dir.path();
    assert_eq!(run(p, &["recover", "--config", "c.toml", "--out", "o", "--svg"]), 0);
    let out = p.join("o");
    assert!(!out.join("mask.csv").exists());
    assert!(!out.join("masked_l1").exists());
    assert!(out.join("laplace_l1/band.svg").exists());
    let summary: Value = read_json(out.join("summary.json")).unwrap();
    assert!(summary["mask_zeros"].is_null());
    assert_eq!(summary["variants"].as_array().unwrap().len(), 1);
    assert_eq!(rows(&out.join("laplace_l1/band.csv")), 32);
    assert_eq!(rows(&out.join("laplace_l1/acceptance.csv")), 600);
}

#[test]
fn mask_outputs_have_one_row_per_grid_point() {
    let dir = with_config("");
    let p = dir.path();
    assert_eq!(run(p, &["mask", "--config", "c.toml", "--out", "o"]), 0);
    for f in [
        "truth.csv",
        "joint_sparsity.csv",
        "variance.csv",
        "weights.csv",
        "mask.csv",
    ] {
        assert_eq!(rows(&p.join("o").join(f)), 32, "{f}");
    }
    let header = fs::read_to_string(p.join("o/joint_sparsity.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 1 + 6);
}

#[test]
fn noiseless_mask_keeps_every_row() {
    let dir = with_config("");
    let p = dir.path();
    let text = fs::read_to_string(p.join("c.toml"))
        .unwrap()
        .replace("sigmas = [0.8, 0.4]", "sigmas = [0.0]");
    fs::write(p.join("c.toml"), text).unwrap();
    assert_eq!(run(p, &["mask", "--config", "c.toml", "--out", "o"]), 0);
    let mask = fs::read_to_string(p.join("o/mask.csv")).unwrap();
    assert!(mask.lines().skip(1).all(|l| l.ends_with(",1")));
}

#[test]
fn sweep_aggregates_by_decreasing_sigma() {
    let dir = with_config("[run]\ntrials = 2\nvariants = [\"laplace_l1\", \"plain_l2\"]\n");
    let p = dir.path();
    assert_eq!(run(p, &["sweep", "--config", "c.toml", "--out", "o"]), 0);
    assert_eq!(rows(&p.join("o/sweep_trials.csv")), 2 * 2 * 2);
    let agg = fs::read_to_string(p.join("o/sweep_summary.csv")).unwrap();
    let sigmas: Vec<f64> = agg
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(sigmas, vec![0.8, 0.8, 0.4, 0.4]);
    assert!(agg.lines().skip(1).all(|l| l.split(',').nth(3) == Some("2")));
}

#[test]
fn cv_and_diagnose_round_trip() {
    let dir = with_config("[run]\nvariants = [\"plain_l2\"]\n");
    let p = dir.path();
    assert_eq!(run(p, &["cv", "--config", "c.toml", "--out", "cv"]), 0);
    let cv: Value = read_json(p.join("cv/summary.json")).unwrap();
    assert_eq!(cv["best"]["lambda"], cv["lambda_hat"]);
    assert_eq!(rows(&p.join("cv/cv_trace.csv")), 3 * 3);

    assert_eq!(run(p, &["recover", "--config", "c.toml", "--out", "rec"]), 0);
    let args = [
        "diagnose",
        "--config",
        "c.toml",
        "--chain",
        "rec/plain_l2/plain_l2",
        "--probes",
        "0,31",
        "--out",
        "dg",
    ];
    assert_eq!(run(p, &args), 0);
    let band_rec = fs::read_to_string(p.join("rec/summary.json")).unwrap();
    let rec: Value = serde_json::from_str(&band_rec).unwrap();
    let dg: Value = read_json(p.join("dg/summary.json")).unwrap();
    assert_eq!(dg["mean_width"], rec["variants"][0]["result"]["mean_width"]);
    assert_eq!(rows(&p.join("dg/histograms.csv")) % 2, 0);

    assert_eq!(
        run(
            p,
            &[
                "diagnose",
                "--chain",
                "rec/plain_l2/plain_l2",
                "--probes",
                "99",
                "--out",
                "x"
            ]
        ),
        2
    );
    assert_eq!(run(p, &["diagnose", "--chain", "nowhere/x", "--out", "x"]), 1);
}
