//! Variance-based joint sparsity: locate the shared support of the MMV data
//! in the sparse (edge) domain and turn it into a binary prior mask.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::forward::{ForwardOperator, MeasurementEnsemble};
use crate::inference::{MapSolver, Penalty};
use crate::pa::PaTransform;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// `P = [L x~_1 | ... | L x~_J]`, one sparse-domain column per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSparsityMatrix(pub DMatrix<f64>);

impl JointSparsityMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn j(&self) -> usize {
        self.0.ncols()
    }
}

/// Build `P` from per-measurement signal estimates `x~_j`.
pub fn joint_sparsity_from_estimates(estimates: &[Vec<f64>], l: &PaTransform) -> Result<JointSparsityMatrix> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData("no signal estimates".into()));
    }
    let n = l.n();
    let mut p = DMatrix::zeros(n, estimates.len());
    for (j, x) in estimates.iter().enumerate() {
        let col = l.apply(x)?;
        p.set_column(j, &nalgebra::DVector::from_vec(col));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(invalid("P", "non-finite entry in joint sparsity matrix"));
    }
    Ok(JointSparsityMatrix(p))
}

/// `P` from the direct inversions `x~_j = Re(A^{-1} y_j)`.
pub fn approximate_joint_sparsity(
    ens: &MeasurementEnsemble,
    op: &ForwardOperator,
    l: &PaTransform,
) -> Result<JointSparsityMatrix> {
    check_len(op.n(), ens.n())?;
    check_len(l.n(), ens.n())?;
    let estimates = (0..ens.j())
        .map(|j| Ok(op.inverse(&ens.column(j))?.into_iter().map(|c| c.re).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    joint_sparsity_from_estimates(&estimates, l)
}

/// How the per-measurement signal estimates `x~_j` behind `P` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsityEstimate {
    /// `x~_j = Re(A^{-1} y_j)`. Linear, so additive white noise produces a
    /// spatially flat variance profile.
    Inverse,
    /// `x~_j` is the l1 MAP estimate of `y_j` with `T = L`, so the variance
    /// concentrates where the estimates disagree about jumps.
    Map,
}

/// `P` from per-measurement l1 MAP estimates with prior strength `lambda`.
pub fn map_joint_sparsity(
    ens: &MeasurementEnsemble,
    solver: &MapSolver,
    l: &PaTransform,
    lambda: f64,
    sigma2: f64,
) -> Result<JointSparsityMatrix> {
    check_len(l.n(), ens.n())?;
    let estimates = (0..ens.j())
        .into_par_iter()
        .map(|j| Ok(solver.solve(&ens.column(j), lambda, Penalty::L1, sigma2)?.x))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    joint_sparsity_from_estimates(&estimates, l)
}

/// Row-wise `(1/J) sum_j P_ij^2 - ((1/J) sum_j P_ij)^2`.
pub fn spatial_variance(p: &JointSparsityMatrix) -> Result<Vec<f64>> {
    let j = p.j();
    if j < 2 {
        return Err(Error::InsufficientData(format!(
            "spatial variance needs J >= 2, got {j}"
        )));
    }
    let jf = j as f64;
    Ok(p.0
        .row_iter()
        .map(|row| {
            let mean = row.sum() / jf;
            let second = row.iter().map(|v| v * v).sum::<f64>() / jf;
            // Cancellation can leave a tiny negative value for constant rows.
            (second - mean * mean).max(0.0)
        })
        .collect())
}

/// `w_i = 1 / (v_i + epsilon)`.
pub fn vbjs_weights(v: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    if let Some(bad) = v.iter().find(|x| !(**x >= 0.0)) {
        return Err(invalid("v", format!("variances must be >= 0, got {bad}")));
    }
    Ok(v.iter().map(|vi| 1.0 / (vi + epsilon)).collect())
}

/// `m_i = 1` where `w_i >= tau`, else 0.
pub fn compute_mask(w: &[f64], tau: f64) -> Result<Vec<bool>> {
    if !(tau > 0.0) {
        return Err(invalid("tau", format!("must be > 0, got {tau}")));
    }
    Ok(w.iter().map(|wi| *wi >= tau).collect())
}

/// `sum_i w_i |p_i|`.
pub fn weighted_l1_norm(p: &[f64], w: &[f64]) -> Result<f64> {
    check_len(p.len(), w.len())?;
    Ok(p.iter().zip(w).map(|(pi, wi)| wi * pi.abs()).sum())
}

/// Diagonal binary mask plus the variance and weights it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMask {
    pub diag: Vec<bool>,
    pub tau: f64,
    pub epsilon: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl SupportMask {
    /// Variance -> weights -> thresholded mask.
    pub fn from_variance(v: Vec<f64>, epsilon: f64, tau: f64) -> Result<Self> {
        let w = vbjs_weights(&v, epsilon)?;
        let diag = compute_mask(&w, tau)?;
        Ok(Self {
            diag,
            tau,
            epsilon,
            v,
            w,
        })
    }

    /// All-ones mask: the prior applies everywhere.
    pub fn identity(n: usize) -> Self {
        Self {
            diag: vec![true; n],
            tau: f64::NAN,
            epsilon: f64::NAN,
            v: vec![0.0; n],
            w: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn zeros(&self) -> impl Iterator<Item = usize> + '_ {
        self.diag.iter().enumerate().filter(|(_, m)| !**m).map(|(i, _)| i)
    }

    pub fn is_identity(&self) -> bool {
        self.diag.iter().all(|m| *m)
    }

    /// `M L` as a dense matrix: rows of `L` where the mask is 0 are cleared.
    pub fn apply_rows(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n(), l.nrows())?;
        let mut out = l.clone();
        for i in self.zeros() {
            out.row_mut(i).fill(0.0);
        }
        Ok(out)
    }
}
