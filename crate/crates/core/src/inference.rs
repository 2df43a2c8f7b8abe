//! Log-posteriors, MAP estimation and K-fold cross-validation of the prior
//! strength.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::forward::{ForwardOperator, MeasurementEnsemble};
use crate::vbjs::SupportMask;

/// Which prior enters the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorVariant {
    /// `exp(-lambda ||L x||_1)`.
    LaplaceL1,
    /// `exp(-lambda ||M L x||_1)`, the support-informed sparsity prior.
    MaskedL1,
    /// `exp(-lambda/2 ||L x||_2^2)`.
    PlainL2,
    /// `exp(-lambda/2 ||M L x||_2^2)`.
    MaskedL2,
}

impl PosteriorVariant {
    pub const ALL: [PosteriorVariant; 4] = [
        PosteriorVariant::LaplaceL1,
        PosteriorVariant::MaskedL1,
        PosteriorVariant::PlainL2,
        PosteriorVariant::MaskedL2,
    ];

    pub fn is_masked(self) -> bool {
        matches!(self, PosteriorVariant::MaskedL1 | PosteriorVariant::MaskedL2)
    }

    pub fn penalty(self) -> Penalty {
        match self {
            PosteriorVariant::LaplaceL1 | PosteriorVariant::MaskedL1 => Penalty::L1,
            PosteriorVariant::PlainL2 | PosteriorVariant::MaskedL2 => Penalty::L2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PosteriorVariant::LaplaceL1 => "laplace_l1",
            PosteriorVariant::MaskedL1 => "masked_l1",
            PosteriorVariant::PlainL2 => "plain_l2",
            PosteriorVariant::MaskedL2 => "masked_l2",
        }
    }
}

impl std::str::FromStr for PosteriorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosteriorVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid("variant", format!("unknown posterior variant `{s}`")))
    }
}

/// `nu` in `(lambda/nu) ||T x||_nu^nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    L1,
    L2,
}

impl Penalty {
    /// `(1/nu) ||v||_nu^nu`.
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            Penalty::L1 => v.iter().map(|t| t.abs()).sum(),
            Penalty::L2 => 0.5 * v.iter().map(|t| t * t).sum::<f64>(),
        }
    }

    pub fn scalar(self, t: f64) -> f64 {
        match self {
            Penalty::L1 => t.abs(),
            Penalty::L2 => 0.5 * t * t,
        }
    }
}

/// One of the four unnormalized posteriors
/// `-lambda/nu ||T x||_nu^nu - 1/(2 sigma^2) ||y - A x||^2` with `T = L` or `M L`.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub variant: PosteriorVariant,
    pub lambda_hat: f64,
    pub sigma2: f64,
    y: Vec<Complex64>,
    op: ForwardOperator,
    transform: DMatrix<f64>,
    gram: DMatrix<f64>,
    data_adjoint: Vec<f64>,
    y_norm2: f64,
}

impl PosteriorSpec {
    /// `l` is the unmasked sparsifying transform; masked variants need `mask`.
    pub fn new(
        variant: PosteriorVariant,
        lambda_hat: f64,
        sigma2: f64,
        y: Vec<Complex64>,
        op: ForwardOperator,
        l: &DMatrix<f64>,
        mask: Option<&SupportMask>,
    ) -> Result<Self> {
        let n = op.n();
        check_len(n, y.len())?;
        check_len(n, l.ncols())?;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid("sigma2", format!("must be > 0, got {sigma2}")));
        }
        if !(lambda_hat >= 0.0 && lambda_hat.is_finite()) {
            return Err(invalid("lambda_hat", format!("must be >= 0, got {lambda_hat}")));
        }
        let transform = match (variant.is_masked(), mask) {
            (true, Some(m)) => m.apply_rows(l)?,
            (true, None) => return Err(invalid("mask", format!("{} needs a support mask", variant.name()))),
            (false, _) => l.clone(),
        };
        let gram = op.real_gram();
        let data_adjoint = op.real_adjoint(&y)?;
        let y_norm2 = y.iter().map(|c| c.norm_sqr()).sum();
        Ok(Self {
            variant,
            lambda_hat,
            sigma2,
            y,
            op,
            transform,
            gram,
            data_adjoint,
            y_norm2,
        })
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn y(&self) -> &[Complex64] {
        &self.y
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.op
    }

    /// `T`, i.e. `L` or `M L`.
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// `Re(A^H A)`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Re(A^H y)`.
    pub fn data_adjoint(&self) -> &[f64] {
        &self.data_adjoint
    }

    pub fn y_norm2(&self) -> f64 {
        self.y_norm2
    }

    /// `||y - A x||^2`.
    pub fn misfit(&self, x: &[f64]) -> Result<f64> {
        let ax = self.op.apply(x)?;
        Ok(ax.iter().zip(&self.y).map(|(a, b)| (b - a).norm_sqr()).sum())
    }

    /// `(1/nu) ||T x||_nu^nu`.
    pub fn prior_term(&self, x: &[f64]) -> Result<f64> {
        check_len(self.n(), x.len())?;
        let tx = &self.transform * DVector::from_column_slice(x);
        Ok(self.variant.penalty().eval(tx.as_slice()))
    }

    /// Log of the unnormalized posterior; the normalizing constant is dropped.
    pub fn log_posterior(&self, x: &[f64]) -> Result<f64> {
        let prior = self.prior_term(x)?;
        let misfit = self.misfit(x)?;
        Ok(-self.lambda_hat * prior - misfit / (2.0 * self.sigma2))
    }
}

/// `log_unnormalized_posterior(spec, x)`.
pub fn log_unnormalized_posterior(spec: &PosteriorSpec, x: &[f64]) -> Result<f64> {
    spec.log_posterior(x)
}

/// `(1/n) sum_i |a_i - b_i|^2`.
pub fn mse(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InsufficientData("mse of empty vectors".into()));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>() / a.len() as f64)
}

/// `(lambda/nu) ||T x||_nu^nu + 1/(2 sigma^2) ||y - A x||^2`.
pub fn map_objective(
    op: &ForwardOperator,
    t: &DMatrix<f64>,
    y: &[Complex64],
    x: &[f64],
    lambda: f64,
    penalty: Penalty,
    sigma2: f64,
) -> Result<f64> {
    check_len(t.ncols(), x.len())?;
    let tx = t * DVector::from_column_slice(x);
    let ax = op.apply(x)?;
    let misfit: f64 = ax.iter().zip(y).map(|(a, b)| (b - a).norm_sqr()).sum();
    Ok(lambda * penalty.eval(tx.as_slice()) + misfit / (2.0 * sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `false` when ADMM hit its iteration cap; `x` is then the last iterate.
    pub converged: bool,
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Dense ADMM iteration matrices with `M = Re(A^H A) + rho T^T T`:
/// `x = M^{-1} b + P w` and `T x = T M^{-1} b + Q w` for `w = z - u`.
#[derive(Debug, Clone)]
struct AdmmMatrices {
    m_inv: DMatrix<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    t_m_inv: DMatrix<f64>,
    tt: DMatrix<f64>,
}

/// MAP solver for a fixed operator and transform. The ADMM x-update matrix
/// is inverted once, so repeated solves over many data vectors and prior
/// strengths (cross-validation) share the work.
#[derive(Debug, Clone)]
pub struct MapSolver {
    op: ForwardOperator,
    t: DMatrix<f64>,
    gram: DMatrix<f64>,
    stacked: DMatrix<f64>,
    admm: Option<AdmmMatrices>,
    settings: AdmmSettings,
}

impl MapSolver {
    pub fn new(op: ForwardOperator, t: DMatrix<f64>, settings: AdmmSettings) -> Result<Self> {
        check_len(op.n(), t.ncols())?;
        if !(settings.rho > 0.0) {
            return Err(invalid("rho", format!("must be > 0, got {}", settings.rho)));
        }
        let gram = op.real_gram();
        let stacked = op.stacked_real();
        let tt = t.transpose();
        let admm = Cholesky::new(&gram + settings.rho * &tt * &t).map(|f| {
            let m_inv = f.inverse();
            let p = settings.rho * &m_inv * &tt;
            AdmmMatrices {
                q: &t * &p,
                t_m_inv: &t * &m_inv,
                m_inv,
                p,
                tt,
            }
        });
        Ok(Self {
            op,
            t,
            gram,
            stacked,
            admm,
            settings,
        })
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn solve(&self, y: &[Complex64], lambda: f64, penalty: Penalty, sigma2: f64) -> Result<MapSolution> {
        check_len(self.op.n(), y.len())?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be >= 0, got {lambda}")));
        }
        if !(sigma2 > 0.0) {
            return Err(invalid("sigma2", format!("must be > 0, got {sigma2}")));
        }
        match penalty {
            Penalty::L2 => self.solve_l2(y, lambda, sigma2),
            Penalty::L1 => self.solve_l1(y, lambda, sigma2),
        }
    }

    /// Normal equations of the stacked real system:
    /// `(As^T As / sigma^2 + lambda T^T T) x = As^T ys / sigma^2`.
    fn solve_l2(&self, y: &[Complex64], lambda: f64, sigma2: f64) -> Result<MapSolution> {
        let m = y.len();
        let ys = DVector::from_iterator(2 * m, y.iter().map(|c| c.re).chain(y.iter().map(|c| c.im)));
        let lhs = self.stacked.transpose() * &self.stacked / sigma2 + lambda * self.t.transpose() * &self.t;
        let rhs = self.stacked.transpose() * ys / sigma2;
        let x = match Cholesky::new(lhs.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => lhs.lu().solve(&rhs).ok_or(Error::Singular)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(MapSolution {
            x: x.iter().copied().collect(),
            iterations: 1,
            converged: true,
        })
    }

    /// ADMM on the `sigma^2`-scaled problem
    /// `min kappa ||z||_1 + 1/2 ||y - A x||^2  s.t.  z = T x`, `kappa = lambda sigma^2`.
    fn solve_l1(&self, y: &[Complex64], lambda: f64, sigma2: f64) -> Result<MapSolution> {
        let mats = self.admm.as_ref().ok_or(Error::Singular)?;
        let AdmmSettings { rho, tol, max_iter } = self.settings;
        let kappa = lambda * sigma2;
        let b = DVector::from_vec(self.op.real_adjoint(y)?);
        let y_norm2: f64 = y.iter().map(|c| c.norm_sqr()).sum();
        let scaled_objective = |x: &DVector<f64>, tx: &DVector<f64>| {
            let quad = x.dot(&(&self.gram * x)) - 2.0 * b.dot(x) + y_norm2;
            kappa * tx.abs().sum() + 0.5 * quad
        };

        let c = &mats.m_inv * &b;
        let tc = &mats.t_m_inv * &b;
        let mut tx = tc.clone();
        let mut z = tx.map(|v| soft_threshold(v, kappa / rho));
        let mut u = &tx - &z;
        let mut w = &z - &u;
        let mut z_prev = z.clone();
        let mut dz = DVector::zeros(self.t.ncols());
        // Residuals are compared against tol relative to the data scale.
        let scale = b.norm().max(1.0);

        for it in 1..=max_iter {
            w.copy_from(&z);
            w -= &u;
            tx.copy_from(&tc);
            tx.gemv(1.0, &mats.q, &w, 1.0);
            std::mem::swap(&mut z, &mut z_prev);
            for i in 0..z.len() {
                z[i] = soft_threshold(tx[i] + u[i], kappa / rho);
                u[i] += tx[i] - z[i];
            }
            let primal = (&tx - &z).norm();
            dz.gemv(rho, &mats.tt, &(&z - &z_prev), 0.0);
            if primal < tol * scale && dz.norm() < tol * scale {
                let mut x = c.clone();
                x.gemv(1.0, &mats.p, &w, 1.0);
                let x = self.polish(&b, kappa, &z, &x, &scaled_objective);
                return Ok(MapSolution {
                    x: x.iter().copied().collect(),
                    iterations: it,
                    converged: true,
                });
            }
        }
        let mut x = c;
        x.gemv(1.0, &mats.p, &w, 1.0);
        Ok(MapSolution {
            x: x.iter().copied().collect(),
            iterations: max_iter,
            converged: false,
        })
    }

    /// Refine a converged ADMM iterate by solving the equality-constrained
    /// quadratic that the sign pattern of `z` identifies: rows of `T` with
    /// `z_i = 0` become constraints `T_i x = 0`, the rest contribute the
    /// linear term `kappa sign(z_i) T_i x`. The refined point is kept only if
    /// it is consistent with that pattern and does not raise the objective.
    fn polish(
        &self,
        b: &DVector<f64>,
        kappa: f64,
        z: &DVector<f64>,
        x_admm: &DVector<f64>,
        objective: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
    ) -> DVector<f64> {
        let n = x_admm.len();
        let zero_rows: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 0.0).collect();
        let nz = zero_rows.len();
        let mut kkt = DMatrix::zeros(n + nz, n + nz);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.gram);
        let mut rhs = DVector::zeros(n + nz);
        let mut lin = b.clone();
        for i in 0..z.len() {
            if z[i] != 0.0 {
                lin -= kappa * z[i].signum() * self.t.row(i).transpose();
            }
        }
        rhs.rows_mut(0, n).copy_from(&lin);
        for (k, &i) in zero_rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + k, c)] = self.t[(i, c)];
                kkt[(c, n + k)] = self.t[(i, c)];
            }
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return x_admm.clone();
        };
        let x = sol.rows(0, n).into_owned();
        if x.iter().any(|v| !v.is_finite()) {
            return x_admm.clone();
        }
        let tx = &self.t * &x;
        let consistent = (0..z.len()).all(|i| z[i] == 0.0 || tx[i] * z[i] > 0.0);
        let tx_admm = &self.t * x_admm;
        if consistent && objective(&x, &tx) <= objective(x_admm, &tx_admm) {
            x
        } else {
            x_admm.clone()
        }
    }
}

/// Solve `argmin (lambda/nu) ||T x||_nu^nu + 1/(2 sigma^2) ||y - A x||^2`.
pub fn map_estimate(
    op: &ForwardOperator,
    y: &[Complex64],
    lambda: f64,
    penalty: Penalty,
    t: &DMatrix<f64>,
    sigma2: f64,
) -> Result<MapSolution> {
    MapSolver::new(op.clone(), t.clone(), AdmmSettings::default())?.solve(y, lambda, penalty, sigma2)
}

/// One `(trial, training vector)` evaluation from cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub trial: usize,
    /// Column of the ensemble used as the training vector.
    pub column: usize,
    pub lambda: f64,
    pub error: f64,
}

/// Point estimate of the prior strength with the full cross-validation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub lambda_hat: f64,
    pub trace: Vec<CvRecord>,
}

/// K-fold cross-validation for `lambda_hat`.
///
/// Each of the `k` trials randomly splits the `J` columns into `m_train`
/// training and `J - m_train` testing vectors. Every training vector gets a
/// candidate `lambda ~ U[0, 1]`, an l1 MAP estimate with `T = L`, and is
/// scored by the mean MSE of its forward projection against all testing
/// vectors. The candidate with the smallest score wins.
///
/// Trial `k` draws from its own ChaCha stream, so the result does not
/// depend on how trials are scheduled across threads.
pub fn kfold_cv(
    ens: &MeasurementEnsemble,
    solver: &MapSolver,
    sigma2: f64,
    k: usize,
    m_train: usize,
    seed: u64,
) -> Result<HyperPrior> {
    let j = ens.j();
    if k == 0 || m_train == 0 {
        return Err(invalid("K", "K and M_train must both be positive"));
    }
    if m_train >= j {
        return Err(invalid("M_train", format!("need M_train < J, got {m_train} >= {j}")));
    }
    check_len(solver.op.n(), ens.n())?;
    let columns: Vec<Vec<Complex64>> = (0..j).map(|c| ens.column(c)).collect();

    let trials: Vec<Vec<CvRecord>> = (0..k)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let mut order: Vec<usize> = (0..j).collect();
            order.shuffle(&mut rng);
            let (train, test) = order.split_at(m_train);
            train
                .iter()
                .map(|&col| {
                    let lambda: f64 = rng.random();
                    let sol = solver.solve(&columns[col], lambda, Penalty::L1, sigma2)?;
                    let y_hat = solver.op.apply(&sol.x)?;
                    let error =
                        test.iter().map(|&l| mse(&y_hat, &columns[l])).sum::<Result<f64>>()? / test.len() as f64;
                    Ok(CvRecord {
                        trial,
                        column: col,
                        lambda,
                        error,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let trace: Vec<CvRecord> = trials.into_iter().flatten().collect();
    let best = trace
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .expect("at least one CV record");
    Ok(HyperPrior {
        lambda_hat: best.lambda,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::generate_mmv;
    use crate::pa::build_pa_matrix;
    use crate::signals::{sample_signal, Grid, SignalSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn real_data(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&r| Complex64::new(r, 0.0)).collect()
    }

    fn random(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    /// Subgradient descent with diminishing steps, keeping the best iterate.
    /// Slow but independent of the ADMM splitting.
    fn subgradient_oracle(
        op: &ForwardOperator,
        t: &DMatrix<f64>,
        y: &[Complex64],
        lambda: f64,
        sigma2: f64,
        iters: usize,
    ) -> (Vec<f64>, f64) {
        let n = t.ncols();
        let a = op.stacked_real();
        let ys = DVector::from_iterator(2 * n, y.iter().map(|c| c.re).chain(y.iter().map(|c| c.im)));
        let obj = |x: &DVector<f64>| {
            let r = &ys - &a * x;
            lambda * (t * x).abs().sum() + r.norm_squared() / (2.0 * sigma2)
        };
        let mut x = a.transpose() * &ys;
        let mut best = (obj(&x), x.clone());
        for k in 1..=iters {
            let g = lambda * t.transpose() * (t * &x).map(f64::signum) - a.transpose() * (&ys - &a * &x) / sigma2;
            let step = 0.5 * sigma2 / (k as f64).sqrt();
            x -= step * g;
            let f = obj(&x);
            if f < best.0 {
                best = (f, x.clone());
            }
        }
        (best.1.iter().copied().collect(), best.0)
    }

    #[test]
    fn soft_threshold_closed_form() {
        let n = 12;
        let op = ForwardOperator::identity(n).unwrap();
        let t = DMatrix::identity(n, n);
        let yv = random(n, 1, 3.0);
        let (lambda, sigma2) = (0.7, 1.3);
        let sol = map_estimate(&op, &real_data(&yv), lambda, Penalty::L1, &t, sigma2).unwrap();
        assert!(sol.converged);
        for (x, y) in sol.x.iter().zip(&yv) {
            let expect = y.signum() * (y.abs() - lambda * sigma2).max(0.0);
            assert!((x - expect).abs() < 1e-10, "{x} vs {expect}");
        }
    }

    #[test]
    fn ridge_closed_form() {
        let n = 12;
        let op = ForwardOperator::identity(n).unwrap();
        let t = DMatrix::identity(n, n);
        let yv = random(n, 2, 3.0);
        let (lambda, sigma2) = (0.4, 2.0);
        let sol = map_estimate(&op, &real_data(&yv), lambda, Penalty::L2, &t, sigma2).unwrap();
        for (x, y) in sol.x.iter().zip(&yv) {
            assert!((x - y / (1.0 + lambda * sigma2)).abs() < 1e-10);
        }
    }

    #[test]
    fn admm_matches_subgradient_oracle() {
        let n = 16;
        let g = Grid::unit(n).unwrap();
        let op = ForwardOperator::dft(n).unwrap();
        let t = build_pa_matrix(1, &g, true).unwrap().into_matrix();
        let x_true: Vec<f64> = (0..n).map(|i| if (4..10).contains(&i) { 3.0 } else { 0.0 }).collect();
        let ens = generate_mmv(&op, &x_true, 1, 0.5, 4).unwrap();
        let y = ens.column(0);
        let (lambda, sigma2) = (0.8, 0.25);
        let sol = map_estimate(&op, &y, lambda, Penalty::L1, &t, sigma2).unwrap();
        assert!(sol.converged);
        let f_admm = map_objective(&op, &t, &y, &sol.x, lambda, Penalty::L1, sigma2).unwrap();
        let (_, f_oracle) = subgradient_oracle(&op, &t, &y, lambda, sigma2, 400_000);
        let rel = (f_admm - f_oracle).abs() / f_oracle.abs();
        assert!(rel < 1e-4, "admm {f_admm} oracle {f_oracle}");
    }

    #[test]
    fn l2_normal_equation_residual() {
        let n = 20;
        let g = Grid::unit(n).unwrap();
        let op = ForwardOperator::dft(n).unwrap();
        let t = build_pa_matrix(3, &g, true).unwrap().into_matrix();
        let ens = generate_mmv(&op, &random(n, 3, 5.0), 1, 1.0, 5).unwrap();
        let y = ens.column(0);
        let (lambda, sigma2) = (0.3, 1.5);
        let sol = map_estimate(&op, &y, lambda, Penalty::L2, &t, sigma2).unwrap();
        let a = op.stacked_real();
        let ys = DVector::from_iterator(2 * n, y.iter().map(|c| c.re).chain(y.iter().map(|c| c.im)));
        let lhs = a.transpose() * &a / sigma2 + lambda * t.transpose() * &t;
        let rhs = a.transpose() * ys / sigma2;
        let resid = (lhs * DVector::from_column_slice(&sol.x) - &rhs).norm();
        assert!(resid < 1e-8 * rhs.norm());
    }

    #[test]
    fn l2_singular_system_reported() {
        // A with a zero column (A = diag(1, 0)) and lambda = 0 cannot be solved.
        let op = ForwardOperator::identity(2).unwrap();
        let solver = MapSolver::new(op, DMatrix::identity(2, 2), AdmmSettings::default()).unwrap();
        let mut s = solver.clone();
        s.stacked[(1, 1)] = 0.0;
        let y = real_data(&[1.0, 1.0]);
        assert!(matches!(s.solve(&y, 0.0, Penalty::L2, 1.0), Err(Error::Singular)));
    }

    #[test]
    fn l1_map_is_locally_optimal() {
        let n = 40;
        let g = Grid::unit(n).unwrap();
        let op = ForwardOperator::dft(n).unwrap();
        let t = build_pa_matrix(3, &g, true).unwrap().into_matrix();
        let x = sample_signal(&SignalSpec::PiecewiseExample, &g).unwrap();
        let y = generate_mmv(&op, &x, 1, 5.5, 6).unwrap().column(0);
        let (lambda, sigma2) = (0.5, 30.0);
        let sol = map_estimate(&op, &y, lambda, Penalty::L1, &t, sigma2).unwrap();
        let f0 = map_objective(&op, &t, &y, &sol.x, lambda, Penalty::L1, sigma2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let xp: Vec<f64> = sol.x.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            let f = map_objective(&op, &t, &y, &xp, lambda, Penalty::L1, sigma2).unwrap();
            assert!(f0 <= f + 1e-9 * f0.abs(), "{f0} > {f}");
        }
    }

    #[test]
    fn mse_examples() {
        let a = real_data(&[1.0, 2.0, 3.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = real_data(&[0.0, 1.0, 2.0]);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert!(mse(&a, &b[..2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<Complex64> = (0..50).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let q: Vec<Complex64> = (0..50).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let mut naive = 0.0;
        for i in 0..50 {
            let d = p[i] - q[i];
            naive += d.re * d.re + d.im * d.im;
        }
        assert!((mse(&p, &q).unwrap() - naive / 50.0).abs() < 1e-12);
    }

    fn example_setup(sigma: f64, seed: u64) -> (MeasurementEnsemble, MapSolver, f64) {
        let g = Grid::unit(80).unwrap();
        let op = ForwardOperator::dft(80).unwrap();
        let l = build_pa_matrix(3, &g, true).unwrap().into_matrix();
        let x = sample_signal(&SignalSpec::PiecewiseExample, &g).unwrap();
        let ens = generate_mmv(&op, &x, 20, sigma, seed).unwrap();
        let sigma2 = crate::forward::estimate_noise_variance(&ens.y).unwrap();
        let solver = MapSolver::new(op, l, AdmmSettings::default()).unwrap();
        (ens, solver, sigma2)
    }

    #[test]
    fn cv_is_deterministic_and_bounded() {
        let (ens, solver, sigma2) = example_setup(5.5, 1);
        let a = kfold_cv(&ens, &solver, sigma2, 4, 5, 77).unwrap();
        let b = kfold_cv(&ens, &solver, sigma2, 4, 5, 77).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.lambda_hat));
        assert_eq!(a.trace.len(), 20);
        assert!(a.trace.iter().all(|r| (0.0..=1.0).contains(&r.lambda)));
        let min = a.trace.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
        assert!(a.trace.iter().any(|r| r.lambda == a.lambda_hat && r.error == min));
    }

    #[test]
    fn cv_shrinks_less_at_low_noise() {
        // Median of the effective soft threshold lambda_hat * sigma^2.
        let median = |sigma: f64| {
            let mut l: Vec<f64> = (0..20)
                .map(|seed| {
                    let (ens, solver, sigma2) = example_setup(sigma, 300 + seed);
                    kfold_cv(&ens, &solver, sigma2, 4, 5, seed).unwrap().lambda_hat * sigma2
                })
                .collect();
            l.sort_by(f64::total_cmp);
            (l[9] + l[10]) / 2.0
        };
        let (low, high) = (median(1.0), median(10.0));
        assert!(low < high, "{low} vs {high}");
    }

    #[test]
    fn cv_rejects_bad_partitions() {
        let (ens, solver, sigma2) = example_setup(5.5, 1);
        assert!(kfold_cv(&ens, &solver, sigma2, 2, 20, 0).is_err());
        assert!(kfold_cv(&ens, &solver, sigma2, 0, 5, 0).is_err());
        assert!(kfold_cv(&ens, &solver, sigma2, 2, 0, 0).is_err());
    }

    #[test]
    fn identity_mask_matches_unmasked() {
        let n = 16;
        let g = Grid::unit(n).unwrap();
        let op = ForwardOperator::dft(n).unwrap();
        let l = build_pa_matrix(3, &g, true).unwrap().into_matrix();
        let y = generate_mmv(&op, &random(n, 8, 4.0), 1, 1.0, 2).unwrap().column(0);
        let id = SupportMask::identity(n);
        let mk = |v| PosteriorSpec::new(v, 0.6, 2.0, y.clone(), op.clone(), &l, Some(&id)).unwrap();
        let (lap, msk, pl2, ml2) = (
            mk(PosteriorVariant::LaplaceL1),
            mk(PosteriorVariant::MaskedL1),
            mk(PosteriorVariant::PlainL2),
            mk(PosteriorVariant::MaskedL2),
        );
        for s in 0..10 {
            let x = random(n, 100 + s, 10.0);
            assert_eq!(lap.log_posterior(&x).unwrap(), msk.log_posterior(&x).unwrap());
            assert_eq!(pl2.log_posterior(&x).unwrap(), ml2.log_posterior(&x).unwrap());
        }
    }

    #[test]
    fn posterior_special_cases() {
        let n = 8;
        let g = Grid::unit(n).unwrap();
        let op = ForwardOperator::dft(n).unwrap();
        let l = build_pa_matrix(1, &g, true).unwrap().into_matrix();
        let x = random(n, 5, 3.0);
        let y_exact = op.apply(&x).unwrap();

        let zero_prior = PosteriorSpec::new(
            PosteriorVariant::LaplaceL1,
            0.0,
            2.0,
            y_exact.clone(),
            op.clone(),
            &l,
            None,
        )
        .unwrap();
        let other = random(n, 6, 3.0);
        let misfit = zero_prior.misfit(&other).unwrap();
        assert!((zero_prior.log_posterior(&other).unwrap() + misfit / 4.0).abs() < 1e-12);

        let fit = PosteriorSpec::new(PosteriorVariant::LaplaceL1, 1.0, 2.0, y_exact, op.clone(), &l, None).unwrap();
        let lx: f64 = (&l * DVector::from_column_slice(&x)).abs().sum();
        assert!((fit.log_posterior(&x).unwrap() + lx).abs() < 1e-10);

        assert!(PosteriorSpec::new(
            PosteriorVariant::MaskedL1,
            1.0,
            2.0,
            vec![Complex64::default(); n],
            op.clone(),
            &l,
            None
        )
        .is_err());
        assert!(PosteriorSpec::new(
            PosteriorVariant::LaplaceL1,
            1.0,
            0.0,
            vec![Complex64::default(); n],
            op.clone(),
            &l,
            None
        )
        .is_err());
        assert!(fit.log_posterior(&[0.0; 3]).is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in PosteriorVariant::ALL {
            assert_eq!(v.name().parse::<PosteriorVariant>().unwrap(), v);
        }
        assert!("gibbs".parse::<PosteriorVariant>().is_err());
    }

    proptest! {
        #[test]
        fn log_posterior_decreases_in_lambda(seed in 0u64..1000, l1 in 0.0f64..1.0, dl in 0.01f64..1.0) {
            let n = 10;
            let g = Grid::unit(n).unwrap();
            let op = ForwardOperator::dft(n).unwrap();
            let l = build_pa_matrix(2, &g, true).unwrap().into_matrix();
            let x = random(n, seed, 5.0);
            let y = op.apply(&random(n, seed + 1, 5.0)).unwrap();
            for v in [PosteriorVariant::LaplaceL1, PosteriorVariant::PlainL2] {
                let lo = PosteriorSpec::new(v, l1, 1.0, y.clone(), op.clone(), &l, None).unwrap();
                let hi = PosteriorSpec::new(v, l1 + dl, 1.0, y.clone(), op.clone(), &l, None).unwrap();
                prop_assume!(lo.prior_term(&x).unwrap() > 1e-9);
                prop_assert!(hi.log_posterior(&x).unwrap() < lo.log_posterior(&x).unwrap());
            }
        }
    }
}
