//! On-disk formats.
//!
//! - Ensembles: `<name>.csv` with columns `i,j,re,im` (one row per entry of
//!   `Y`) and a `<name>.json` sidecar with the shape and provenance.
//! - Chains: `<name>_states.csv` with columns `t,x_0,..,x_{n-1}` (one row
//!   per iteration) and `<name>_chain.json` with the bookkeeping.
//! - Manifest: `manifest.json` mapping every written file (relative to the
//!   output directory) to its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{MeasurementEnsemble, OperatorKind};
use crate::mcmc::Chain;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Write a header row plus numeric rows. Floats use Rust's shortest
/// round-trip representation, so reading back is exact.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of equal length written side by side.
pub fn write_columns<P: AsRef<Path>>(path: P, columns: &[(&str, &[f64])]) -> Result<()> {
    let len = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            got: columns.iter().map(|c| c.1.len()).find(|l| *l != len).unwrap_or(len),
        });
    }
    let header: Vec<&str> = columns.iter().map(|c| c.0).collect();
    write_csv(
        path,
        &header,
        (0..len).map(|r| columns.iter().map(|c| c.1[r].to_string()).collect()),
    )
}

/// Header and rows of a CSV file, parsed as `f64`.
pub fn read_numeric_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Pretty JSON; struct fields keep declaration order and maps are sorted.
pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<P: AsRef<Path>, T: for<'de> Deserialize<'de>>(path: P) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub n: usize,
    pub j: usize,
    pub sigma_true: f64,
    pub seed: u64,
    pub operator: OperatorKind,
}

pub fn write_ensemble(dir: &Path, name: &str, ens: &MeasurementEnsemble) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));
    let (n, j) = ens.y.shape();
    write_csv(
        &csv_path,
        &["i", "j", "re", "im"],
        (0..j).flat_map(|c| {
            (0..n).map(move |r| {
                let v = ens.y[(r, c)];
                vec![r.to_string(), c.to_string(), v.re.to_string(), v.im.to_string()]
            })
        }),
    )?;
    let meta = EnsembleMeta {
        n,
        j,
        sigma_true: ens.sigma_true,
        seed: ens.seed,
        operator: ens.operator,
    };
    write_json(&json_path, &meta)?;
    Ok(vec![csv_path, json_path])
}

pub fn read_ensemble(csv_path: &Path, json_path: &Path) -> Result<MeasurementEnsemble> {
    let meta: EnsembleMeta = read_json(json_path)?;
    let (_, rows) = read_numeric_csv(csv_path)?;
    if rows.len() != meta.n * meta.j {
        return Err(Error::Dimension {
            expected: meta.n * meta.j,
            got: rows.len(),
        });
    }
    let mut y = DMatrix::from_element(meta.n, meta.j, Complex64::new(f64::NAN, f64::NAN));
    for row in rows {
        let [i, j, re, im] = row[..] else {
            return Err(Error::Format("ensemble rows need 4 fields".into()));
        };
        let (i, j) = (i as usize, j as usize);
        if i >= meta.n || j >= meta.j {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                len: meta.n.max(meta.j),
            });
        }
        y[(i, j)] = Complex64::new(re, im);
    }
    if y.iter().any(|c| c.re.is_nan()) {
        return Err(Error::Format("ensemble file is missing entries".into()));
    }
    Ok(MeasurementEnsemble {
        y,
        sigma_true: meta.sigma_true,
        seed: meta.seed,
        operator: meta.operator,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub n: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub sigma_q: f64,
    pub sigma_q_history: Vec<(usize, f64)>,
    pub proposals_per_iter: u32,
    pub acceptance_ratio: f64,
    pub component_accepts: Vec<u64>,
    pub component_proposals: Vec<u64>,
    pub accepted: Vec<u32>,
    pub x0: Vec<f64>,
}

pub fn write_chain(dir: &Path, name: &str, chain: &Chain) -> Result<Vec<PathBuf>> {
    let states_path = dir.join(format!("{name}_states.csv"));
    let meta_path = dir.join(format!("{name}_chain.json"));
    let n = chain.n();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &states_path,
        &header_refs,
        (0..chain.n_iter()).map(|t| {
            std::iter::once((t + 1).to_string())
                .chain(chain.states.column(t).iter().map(|v| v.to_string()))
                .collect()
        }),
    )?;
    let meta = ChainMeta {
        n,
        n_iter: chain.n_iter(),
        burn_in: chain.burn_in,
        seed: chain.seed,
        sigma_q: chain.sigma_q,
        sigma_q_history: chain.sigma_q_history.clone(),
        proposals_per_iter: chain.proposals_per_iter,
        acceptance_ratio: chain.acceptance_ratio(),
        component_accepts: chain.component_accepts.clone(),
        component_proposals: chain.component_proposals.clone(),
        accepted: chain.accepted.clone(),
        x0: chain.x0.clone(),
    };
    write_json(&meta_path, &meta)?;
    Ok(vec![states_path, meta_path])
}

pub fn read_chain(states_path: &Path, meta_path: &Path) -> Result<Chain> {
    let meta: ChainMeta = read_json(meta_path)?;
    let (_, rows) = read_numeric_csv(states_path)?;
    if rows.len() != meta.n_iter {
        return Err(Error::Dimension {
            expected: meta.n_iter,
            got: rows.len(),
        });
    }
    let mut states = DMatrix::zeros(meta.n, meta.n_iter);
    for (t, row) in rows.iter().enumerate() {
        if row.len() != meta.n + 1 {
            return Err(Error::Dimension {
                expected: meta.n + 1,
                got: row.len(),
            });
        }
        for i in 0..meta.n {
            states[(i, t)] = row[i + 1];
        }
    }
    if meta.burn_in >= meta.n_iter || meta.accepted.len() != meta.n_iter {
        return Err(Error::Format("inconsistent chain metadata".into()));
    }
    Ok(Chain {
        states,
        x0: meta.x0,
        burn_in: meta.burn_in,
        accepted: meta.accepted,
        proposals_per_iter: meta.proposals_per_iter,
        component_accepts: meta.component_accepts,
        component_proposals: meta.component_proposals,
        seed: meta.seed,
        sigma_q: meta.sigma_q,
        sigma_q_history: meta.sigma_q_history,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files of one run, keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub complete: bool,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            complete: false,
            files: BTreeMap::new(),
        }
    }

    /// Hash `path` (inside `root`) and record it.
    pub fn add(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        self.files.insert(key, sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }

    /// Paths whose current content no longer matches the recorded hash.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for (rel, hash) in &self.files {
            match fs::read(root.join(rel)) {
                Ok(bytes) if sha256_hex(&bytes) == *hash => {}
                _ => stale.push(rel.clone()),
            }
        }
        Ok(stale)
    }
}
