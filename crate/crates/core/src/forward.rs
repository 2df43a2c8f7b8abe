//! Forward operator, complex Gaussian noise and multi-measurement ensembles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `A = I`; used for analytic checks.
    Identity,
    /// DFT scaled by `1/sqrt(n)` so that `A^H A = I`.
    UnitaryDft,
}

/// Dense linear forward operator `x -> A x` from real signals to complex data.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    kind: OperatorKind,
    matrix: DMatrix<Complex64>,
}

impl ForwardOperator {
    pub fn new(kind: OperatorKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "operator dimension must be positive"));
        }
        let matrix = match kind {
            OperatorKind::Identity => DMatrix::identity(n, n),
            OperatorKind::UnitaryDft => {
                let scale = 1.0 / (n as f64).sqrt();
                DMatrix::from_fn(n, n, |k, l| {
                    // Reduce k*l mod n first so the phase stays accurate for large n.
                    let phase = -2.0 * PI * ((k * l) % n) as f64 / n as f64;
                    Complex64::from_polar(scale, phase)
                })
            }
        };
        Ok(Self { kind, matrix })
    }

    pub fn dft(n: usize) -> Result<Self> {
        Self::new(OperatorKind::UnitaryDft, n)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(OperatorKind::Identity, n)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        check_len(self.n(), x.len())?;
        let xc = DVector::from_iterator(x.len(), x.iter().map(|&v| Complex64::new(v, 0.0)));
        Ok((&self.matrix * xc).iter().copied().collect())
    }

    pub fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len(self.matrix.nrows(), y.len())?;
        let yv = DVector::from_column_slice(y);
        Ok((self.matrix.adjoint() * yv).iter().copied().collect())
    }

    /// `A^{-1} y`. Both supported operators are unitary, so this is the adjoint.
    pub fn inverse(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.adjoint(y)
    }

    /// `Re(A^H A)`: the quadratic form of `||y - A x||^2` restricted to real `x`.
    /// Both supported operators are unitary, so this is exactly the identity.
    pub fn real_gram(&self) -> DMatrix<f64> {
        match self.kind {
            OperatorKind::Identity | OperatorKind::UnitaryDft => DMatrix::identity(self.n(), self.n()),
        }
    }

    /// `Re(A^H y)`: the linear term of `||y - A x||^2` for real `x`.
    pub fn real_adjoint(&self, y: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.adjoint(y)?.into_iter().map(|c| c.re).collect())
    }

    /// `[Re A; Im A]`, the `2n x n` real system equivalent to `A x = y` for real `x`.
    pub fn stacked_real(&self) -> DMatrix<f64> {
        let (m, n) = self.matrix.shape();
        DMatrix::from_fn(2 * m, n, |r, c| {
            if r < m {
                self.matrix[(r, c)].re
            } else {
                self.matrix[(r - m, c)].im
            }
        })
    }
}

/// `||a||_2` for complex vectors.
pub fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `J` noisy measurements `y_j = A x + e_j`, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    pub y: DMatrix<Complex64>,
    pub sigma_true: f64,
    pub seed: u64,
    pub operator: OperatorKind,
}

impl MeasurementEnsemble {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn j(&self) -> usize {
        self.y.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        self.y.column(j).iter().copied().collect()
    }

    /// `(1/J) sum_j y_j`.
    pub fn mean_observation(&self) -> Vec<Complex64> {
        let jf = self.j() as f64;
        self.y.row_iter().map(|r| r.iter().sum::<Complex64>() / jf).collect()
    }

    /// Mean of `|Y_ij|^2` over every entry (received power, noise included).
    pub fn mean_power(&self) -> f64 {
        self.y.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.y.len() as f64
    }
}

/// Draw `J` measurement vectors with circularly-symmetric complex Gaussian
/// noise of total variance `sigma^2` (`sigma^2 / 2` per real component).
pub fn generate_mmv(op: &ForwardOperator, x: &[f64], j: usize, sigma: f64, seed: u64) -> Result<MeasurementEnsemble> {
    if j == 0 {
        return Err(invalid("J", "need at least one measurement"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    let clean = op.apply(x)?;
    let n = clean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let component = Normal::new(0.0, sigma / 2f64.sqrt()).map_err(|e| invalid("sigma", e.to_string()))?;
    let mut y = DMatrix::zeros(n, j);
    for col in 0..j {
        for row in 0..n {
            let e = Complex64::new(component.sample(&mut rng), component.sample(&mut rng));
            y[(row, col)] = clean[row] + e;
        }
    }
    Ok(MeasurementEnsemble {
        y,
        sigma_true: sigma,
        seed,
        operator: op.kind(),
    })
}

/// Average over rows of the across-measurement sample variance,
/// `(1/n) sum_i [ (1/J) sum_j |Y_ij|^2 - |(1/J) sum_j Y_ij|^2 ]`.
pub fn estimate_noise_variance(y: &DMatrix<Complex64>) -> Result<f64> {
    let (n, j) = y.shape();
    if j < 2 {
        return Err(Error::InsufficientData(format!(
            "noise variance needs at least 2 measurements, got {j}"
        )));
    }
    let jf = j as f64;
    let total: f64 = y
        .row_iter()
        .map(|row| {
            let second = row.iter().map(|c| c.norm_sqr()).sum::<f64>() / jf;
            let mean = row.iter().sum::<Complex64>() / jf;
            (second - mean.norm_sqr()).max(0.0)
        })
        .sum();
    Ok(total / n as f64)
}

/// `10 log10(mean_power / sigma2)`.
pub fn snr_db(mean_power: f64, sigma2: f64) -> Result<f64> {
    if !(mean_power > 0.0) {
        return Err(invalid("mean_power", format!("must be > 0, got {mean_power}")));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("sigma2", format!("must be > 0, got {sigma2}")));
    }
    Ok(10.0 * (mean_power / sigma2).log10())
}

/// Mean power `(1/n) ||A x||^2` of the noiseless data `E[Y] = A x`.
pub fn clean_power(op: &ForwardOperator, x: &[f64]) -> Result<f64> {
    let ax = op.apply(x)?;
    Ok(ax.iter().map(|c| c.norm_sqr()).sum::<f64>() / ax.len() as f64)
}

/// Noise level giving the requested SNR (dB) for signal `x`, using
/// [`clean_power`] as the signal power.
pub fn sigma_for_snr(op: &ForwardOperator, x: &[f64], snr: f64) -> Result<f64> {
    let p = clean_power(op, x)?;
    if !(p > 0.0) {
        return Err(invalid("x", "signal has zero power"));
    }
    Ok((p / 10f64.powf(snr / 10.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
    }

    #[test]
    fn zero_maps_to_zero() {
        let op = ForwardOperator::dft(8).unwrap();
        assert!(op.apply(&[0.0; 8]).unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn delta_has_constant_modulus() {
        let op = ForwardOperator::dft(4).unwrap();
        let y = op.apply(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for c in y {
            assert!((c.norm() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn unitary_and_invertible() {
        let op = ForwardOperator::dft(80).unwrap();
        let x = random_vec(80, 3);
        let y = op.apply(&x).unwrap();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm2(&y) - nx).abs() < 1e-10 * nx);
        let back = op.inverse(&y).unwrap();
        let err = back.iter().zip(&x).map(|(b, a)| (b - a).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-10 * nx);
    }

    #[test]
    fn gram_is_identity_for_dft() {
        let op = ForwardOperator::dft(16).unwrap();
        let g = (op.matrix().adjoint() * op.matrix()).map(|c| c.re);
        assert!((g - DMatrix::<f64>::identity(16, 16)).amax() < 1e-12);
    }

    #[test]
    fn dimension_checked() {
        let op = ForwardOperator::dft(4).unwrap();
        assert!(matches!(op.apply(&[1.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn noiseless_columns_equal_clean_data() {
        let op = ForwardOperator::dft(10).unwrap();
        let x = random_vec(10, 1);
        let ens = generate_mmv(&op, &x, 3, 0.0, 7).unwrap();
        let ax = op.apply(&x).unwrap();
        for j in 0..3 {
            assert_eq!(ens.column(j), ax);
        }
        assert_eq!(estimate_noise_variance(&ens.y).unwrap(), 0.0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let op = ForwardOperator::dft(12).unwrap();
        let x = random_vec(12, 2);
        let a = generate_mmv(&op, &x, 4, 3.0, 99).unwrap();
        let b = generate_mmv(&op, &x, 4, 3.0, 99).unwrap();
        assert_eq!(a.y, b.y);
        let c = generate_mmv(&op, &x, 4, 3.0, 100).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn noise_variance_recovered() {
        let op = ForwardOperator::dft(80).unwrap();
        let x = random_vec(80, 5);
        let estimates: Vec<f64> = (0..40)
            .map(|seed| estimate_noise_variance(&generate_mmv(&op, &x, 20, 10.0, seed).unwrap().y).unwrap())
            .collect();
        // The 1/J estimator has mean (J-1)/J * sigma^2 = 95 and sd ~2.4 here.
        let mean = estimates.iter().sum::<f64>() / 40.0;
        assert!((mean - 95.0).abs() < 1.5, "mean {mean}");
        let within = estimates.iter().filter(|e| (*e - 100.0).abs() < 10.0).count();
        assert!(within >= 36, "{within}/40 within 10%: {estimates:?}");
    }

    #[test]
    fn two_point_variance() {
        // One row [c, c + 2]; the rest identical: (|c|^2 + |c+2|^2)/2 - |c+1|^2 = 1.
        let c = Complex64::new(0.3, -1.2);
        let mut y = DMatrix::from_element(4, 2, Complex64::new(1.0, 1.0));
        y[(2, 0)] = c;
        y[(2, 1)] = c + 2.0;
        assert!((estimate_noise_variance(&y).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn noise_estimator_needs_two_columns() {
        let y = DMatrix::from_element(4, 1, Complex64::new(1.0, 0.0));
        assert!(matches!(estimate_noise_variance(&y), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr_db(100.0, 100.0).unwrap(), 0.0);
        assert!((snr_db(100.0, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(snr_db(0.0, 1.0).is_err());
        assert!(snr_db(1.0, -1.0).is_err());
    }

    #[test]
    fn sigma_for_snr_inverts_snr() {
        let op = ForwardOperator::dft(20).unwrap();
        let x = random_vec(20, 11);
        let s = sigma_for_snr(&op, &x, 3.0).unwrap();
        let p = clean_power(&op, &x).unwrap();
        assert!((snr_db(p, s * s).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn stacked_real_matches_complex_apply() {
        let op = ForwardOperator::dft(6).unwrap();
        let x = random_vec(6, 4);
        let y = op.apply(&x).unwrap();
        let ys = op.stacked_real() * DVector::from_column_slice(&x);
        for k in 0..6 {
            assert!((ys[k] - y[k].re).abs() < 1e-12);
            assert!((ys[k + 6] - y[k].im).abs() < 1e-12);
        }
    }
}
