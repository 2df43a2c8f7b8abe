//! Polynomial annihilation (PA) edge-detection transform.
//!
//! Row `r` of `L^m` applies the `m + 1` point annihilation stencil that
//! starts at column `r - floor(m/2)` and divides by the normalization factor
//! `q`, so that `(L^m f)_r` approximates the jump `f(x_r^+) - f(x_r^-)`
//! across the cell `[x_r, x_{r+1})` (up to a fixed sign convention).
//!
//! With the stencil split after the row node, `q` is the sum of the
//! coefficients at stencil points at or left of `x_r`. This orientation
//! gives exactly the familiar banded matrices, e.g. for `m = 1` each row is
//! `[1, -1]` on the diagonal and superdiagonal, and for `m = 3` the first
//! periodic row is `[3, -3, 1, 0, ..., 0, -1] / 2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Error, Result};
use crate::signals::Grid;

/// Coefficients `c_j = m! / (prod_{k != j} (j - k) dx)` for `j = 1..=m+1`.
pub fn pa_coefficients(m: usize, dx: f64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::UnsupportedOrder(0));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(invalid("dx", format!("must be positive, got {dx}")));
    }
    let m_fact: f64 = (1..=m).map(|k| k as f64).product();
    Ok((1..=m + 1)
        .map(|j| {
            let denom: f64 = (1..=m + 1).filter(|&k| k != j).map(|k| j as f64 - k as f64).product();
            m_fact / (denom * dx)
        })
        .collect())
}

/// Normalization factor for a stencil at locations `stencil` evaluated at
/// `x_center`: the sum of `coeffs[j]` over stencil points `<= x_center`.
///
/// Because the coefficients sum to zero this equals minus the sum over the
/// points to the right of `x_center`.
pub fn normalization_factor(coeffs: &[f64], stencil: &[f64], x_center: f64) -> Result<f64> {
    check_len(coeffs.len(), stencil.len())?;
    let spacing = stencil
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(f64::INFINITY, f64::min);
    let slack = if spacing.is_finite() { 1e-9 * spacing } else { 0.0 };
    let q: f64 = coeffs
        .iter()
        .zip(stencil)
        .filter(|(_, &s)| s <= x_center + slack)
        .map(|(c, _)| c)
        .sum();
    let scale = coeffs.iter().map(|c| c.abs()).sum::<f64>();
    if q.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateStencil);
    }
    Ok(q)
}

/// The dense order-`m` PA matrix together with its construction parameters.
#[derive(Debug, Clone)]
pub struct PaTransform {
    m: usize,
    periodic: bool,
    dx: f64,
    matrix: DMatrix<f64>,
}

impl PaTransform {
    pub fn order(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `L^m x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n(), x.len())?;
        Ok((&self.matrix * DVector::from_column_slice(x)).iter().copied().collect())
    }
}

/// Build `L^m` on `grid`. Periodic transforms are circulant; otherwise the
/// stencils are shifted to stay inside the grid near both boundaries.
pub fn build_pa_matrix(m: usize, grid: &Grid, periodic: bool) -> Result<PaTransform> {
    let n = grid.n();
    if m == 0 {
        return Err(Error::UnsupportedOrder(0));
    }
    if m >= n {
        return Err(Error::OrderTooLarge { order: m, n });
    }
    let dx = grid.dx();
    let coeffs = pa_coefficients(m, dx)?;
    let half = m / 2;
    let mut matrix = DMatrix::zeros(n, n);

    // Stencil offsets relative to its first point, in units of dx.
    let offsets: Vec<f64> = (0..=m).map(|j| j as f64).collect();

    for r in 0..n {
        let (start, split) = if periodic {
            (r as isize - half as isize, half)
        } else {
            // One-sided near the ends; the split point (last node on the
            // left of the cell) is kept strictly inside the stencil so q != 0.
            let start = r.saturating_sub(half).min(n - 1 - m);
            let split = (r - start).min(m - 1);
            (start as isize, split)
        };
        let q = normalization_factor(&coeffs, &offsets, split as f64)?;
        for (j, c) in coeffs.iter().enumerate() {
            let col = (start + j as isize).rem_euclid(n as isize) as usize;
            matrix[(r, col)] += c / q;
        }
    }
    Ok(PaTransform {
        m,
        periodic,
        dx,
        matrix,
    })
}

/// `I_n` wrapped as a transform, for signals that are sparse themselves.
pub fn identity_transform(n: usize) -> PaTransform {
    PaTransform {
        m: 0,
        periodic: true,
        dx: 1.0,
        matrix: DMatrix::identity(n, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: solve the moment system sum_j c_j p_l(j) = p_l^{(m)}
    /// for the monomial basis p_l(s) = s^l on nodes 1..=m+1 (dx = 1).
    fn moment_oracle(m: usize) -> Vec<f64> {
        let size = m + 1;
        let mut a = DMatrix::zeros(size, size);
        let mut b = DVector::zeros(size);
        for l in 0..size {
            for j in 0..size {
                a[(l, j)] = ((j + 1) as f64).powi(l as i32);
            }
        }
        // m-th derivative of s^m is m!, lower monomials vanish.
        b[m] = (1..=m).map(|k| k as f64).product();
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn coefficients_small_orders() {
        assert_eq!(pa_coefficients(1, 1.0).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(pa_coefficients(2, 1.0).unwrap(), vec![1.0, -2.0, 1.0]);
        assert_eq!(pa_coefficients(3, 1.0).unwrap(), vec![-1.0, 3.0, -3.0, 1.0]);
        assert!(matches!(pa_coefficients(0, 1.0), Err(Error::UnsupportedOrder(0))));
    }

    #[test]
    fn coefficients_match_moment_system() {
        for m in 1..=6 {
            let c = pa_coefficients(m, 1.0).unwrap();
            let o = moment_oracle(m);
            for (a, b) in c.iter().zip(&o) {
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "m={m}: {c:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn dx_rescaling_cancels_in_rows() {
        let g1 = Grid::new(12, 0.0, 1.0).unwrap();
        let g2 = Grid::new(12, -std::f64::consts::PI, std::f64::consts::PI).unwrap();
        for m in 1..=4 {
            let a = build_pa_matrix(m, &g1, true).unwrap();
            let b = build_pa_matrix(m, &g2, true).unwrap();
            assert!((a.matrix() - b.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn normalization_orientation() {
        let c = pa_coefficients(1, 1.0).unwrap();
        assert_eq!(normalization_factor(&c, &[0.0, 1.0], 0.0).unwrap(), -1.0);
        let c3 = pa_coefficients(3, 1.0).unwrap();
        assert_eq!(normalization_factor(&c3, &[-1.0, 0.0, 1.0, 2.0], 0.0).unwrap(), 2.0);
        // Every point on one side: q is the full (zero) sum.
        assert!(matches!(
            normalization_factor(&c, &[0.0, 1.0], 5.0),
            Err(Error::DegenerateStencil)
        ));
    }

    #[test]
    fn l1_periodic_matrix() {
        let g = Grid::unit(5).unwrap();
        let l = build_pa_matrix(1, &g, true).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 5, &[
             1.0, -1.0,  0.0,  0.0,  0.0,
             0.0,  1.0, -1.0,  0.0,  0.0,
             0.0,  0.0,  1.0, -1.0,  0.0,
             0.0,  0.0,  0.0,  1.0, -1.0,
            -1.0,  0.0,  0.0,  0.0,  1.0,
        ]);
        assert!((l.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn l3_periodic_first_row() {
        let g = Grid::unit(6).unwrap();
        let l = build_pa_matrix(3, &g, true).unwrap();
        let row: Vec<f64> = l.matrix().row(0).iter().copied().collect();
        let expected = [1.5, -1.5, 0.5, 0.0, 0.0, -0.5];
        for (a, b) in row.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn rows_sum_to_zero_and_circulant() {
        let g = Grid::unit(20).unwrap();
        for m in 1..=4 {
            let l = build_pa_matrix(m, &g, true).unwrap();
            let mat = l.matrix();
            for r in 0..20 {
                assert!(mat.row(r).sum().abs() < 1e-12);
                for c in 0..20 {
                    assert!((mat[(r, c)] - mat[(0, (c + 20 - r) % 20)]).abs() < 1e-12);
                }
            }
            let lnp = build_pa_matrix(m, &g, false).unwrap();
            for r in 0..20 {
                assert!(lnp.matrix().row(r).sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn annihilates_linear_polynomial() {
        let g = Grid::unit(80).unwrap();
        let l = build_pa_matrix(2, &g, false).unwrap();
        let p: Vec<f64> = g.points().iter().map(|s| 5.0 * s + 2.0).collect();
        let out = l.apply(&p).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-10), "{out:?}");
    }

    #[test]
    fn order_checks() {
        let g = Grid::unit(4).unwrap();
        assert!(matches!(build_pa_matrix(4, &g, true), Err(Error::OrderTooLarge { .. })));
        assert!(matches!(build_pa_matrix(0, &g, true), Err(Error::UnsupportedOrder(0))));
        assert!(build_pa_matrix(3, &g, false).is_ok());
    }

    #[test]
    fn step_response() {
        let n = 20;
        let g = Grid::unit(n).unwrap();
        let step: Vec<f64> = (0..n).map(|i| if i < n / 2 { 0.0 } else { 1.0 }).collect();

        let l1 = build_pa_matrix(1, &g, true).unwrap().apply(&step).unwrap();
        let nonzero: Vec<_> = l1.iter().enumerate().filter(|(_, v)| v.abs() > 1e-12).collect();
        assert_eq!(nonzero.len(), 2);
        assert!(nonzero.iter().all(|(_, v)| (v.abs() - 1.0).abs() < 1e-12));

        let l3 = build_pa_matrix(3, &g, true).unwrap().apply(&step).unwrap();
        // Upward jump between 9 and 10, downward wraparound jump between 19 and 0.
        assert!((l3[n / 2 - 1] + 1.0).abs() < 1e-12);
        assert!((l3[n - 1] - 1.0).abs() < 1e-12);
        assert!(l3.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        assert!(l3[n / 2 - 3].abs() < 1e-12);
        assert!(l3[n / 2 + 2].abs() < 1e-12);
        for m in 1..=4 {
            let out = build_pa_matrix(m, &g, false).unwrap().apply(&step).unwrap();
            let peak = out.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!((0.9..=1.1).contains(&peak), "m={m}: {peak}");
        }
    }

    #[test]
    fn constant_goes_to_zero() {
        let g = Grid::unit(9).unwrap();
        let l = build_pa_matrix(3, &g, false).unwrap();
        assert!(l.apply(&[4.2; 9]).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(l.apply(&[1.0; 8]), Err(Error::Dimension { .. })));
    }
}
