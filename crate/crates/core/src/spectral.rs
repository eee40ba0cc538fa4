//! Eigenvalue bounds for the problem matrix and the choice of `rho`.
//!
//! Gershgorin discs give the certified bounds used to decide whether a `rho`
//! is admissible; power iteration only sharpens the estimates.

use serde::{Deserialize, Serialize};

use crate::model::{asymmetry, Matrix, Vector, SYMMETRY_TOL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBounds {
    /// Certified lower bound for the smallest eigenvalue.
    pub lambda_min_lb: f64,
    /// Certified upper bound for the largest eigenvalue.
    pub lambda_max_ub: f64,
    pub lambda_min_est: f64,
    pub lambda_max_est: f64,
    /// False when the estimates are the bounds themselves.
    pub converged: bool,
}

impl SpectralBounds {
    /// Upper bound on the spectral norm of a symmetric matrix.
    pub fn norm_ub(&self) -> f64 {
        self.lambda_min_lb.abs().max(self.lambda_max_ub.abs())
    }
}

/// DC decomposition for which `rho` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// `Q1 = rho I`, `Q2 = rho I - Q`; needs `rho > lambda_max(Q)`.
    A,
    /// `Q1 = Q + rho I`, `Q2 = rho I`; needs `rho > -lambda_min(Q)`.
    B,
}

impl Scheme {
    pub fn letter(self) -> char {
        match self {
            Self::A => 'A',
            Self::B => 'B',
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// `(A + A^T) / 2`.
pub fn symmetric_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Gershgorin bounds; the estimate fields repeat the bounds.
pub fn gershgorin_bounds(q: &Matrix) -> SpectralBounds {
    let n = q.nrows();
    let mut lb = f64::INFINITY;
    let mut ub = f64::NEG_INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)].abs()).sum();
        lb = lb.min(q[(i, i)] - radius);
        ub = ub.max(q[(i, i)] + radius);
    }
    SpectralBounds {
        lambda_min_lb: lb,
        lambda_max_ub: ub,
        lambda_min_est: lb,
        lambda_max_est: ub,
        converged: false,
    }
}

/// Deterministic start vector: all ones, tilted by index so that it is not
/// orthogonal to eigenvectors of symmetric sign patterns.
fn start_vector(n: usize) -> Vector {
    let v = Vector::from_fn(n, |i, _| 1.0 + 0.5 * (i + 1) as f64 / (n + 1) as f64);
    let norm = v.norm();
    v / norm
}

/// Dominant eigenvalue of a positive semidefinite matrix by power iteration.
fn dominant_psd(b: &Matrix, tol: f64, max_iter: usize) -> (f64, bool) {
    let mut v = start_vector(b.nrows());
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let w = b * &v;
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return (0.0, true);
        }
        if (rq - prev).abs() <= tol * (1.0 + rq.abs()) {
            return (rq, true);
        }
        prev = rq;
        v = w / norm;
    }
    (prev, false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub converged: bool,
}

/// Estimates the extreme eigenvalues of a symmetric matrix by power iteration
/// on `Q - lb I` and `ub I - Q`. Without convergence the Gershgorin bounds
/// are returned and `converged` is false.
pub fn power_iteration_extremes(q: &Matrix, tol: f64, max_iter: usize) -> PowerEstimate {
    let g = gershgorin_bounds(q);
    let (lb, ub) = (g.lambda_min_lb, g.lambda_max_ub);
    let n = q.nrows();
    let shifted_up = q - Matrix::identity(n, n) * lb;
    let shifted_down = Matrix::identity(n, n) * ub - q;
    let (top, ok_top) = dominant_psd(&shifted_up, tol, max_iter);
    let (bottom, ok_bottom) = dominant_psd(&shifted_down, tol, max_iter);
    if !(ok_top && ok_bottom) {
        return PowerEstimate {
            lambda_min: lb,
            lambda_max: ub,
            converged: false,
        };
    }
    let lambda_max = (top + lb).clamp(lb, ub);
    let lambda_min = (ub - bottom).clamp(lb, lambda_max);
    PowerEstimate {
        lambda_min,
        lambda_max,
        converged: true,
    }
}

/// Certified bounds plus refined estimates.
pub fn spectral_bounds(q: &Matrix) -> SpectralBounds {
    let g = gershgorin_bounds(q);
    let est = power_iteration_extremes(q, 1e-12, 10_000);
    SpectralBounds {
        lambda_min_est: est.lambda_min,
        lambda_max_est: est.lambda_max,
        converged: est.converged,
        ..g
    }
}

/// Upper bound on `||M||_2`. Symmetric input uses the Gershgorin bounds;
/// otherwise `min(||M||_F, sqrt(||M||_1 ||M||_inf))`.
pub fn norm2_upper(m: &Matrix) -> f64 {
    if asymmetry(m) <= SYMMETRY_TOL {
        return gershgorin_bounds(m).norm_ub();
    }
    let frob = m.norm();
    let col_sum = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_sum = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    frob.min((col_sum * row_sum).sqrt())
}

/// Relative default slack `1e-3 (1 + |bound|)`.
pub fn default_margin(bound: f64) -> f64 {
    1e-3 * (1.0 + bound.abs())
}

/// The certified threshold `rho` must exceed: `max(lambda_max_ub, 0)` for A,
/// `max(-lambda_min_lb, 0)` for B.
pub fn rho_threshold(q: &Matrix, scheme: Scheme) -> f64 {
    let g = gershgorin_bounds(q);
    match scheme {
        Scheme::A => g.lambda_max_ub.max(0.0),
        Scheme::B => (-g.lambda_min_lb).max(0.0),
    }
}

/// `rho = threshold + margin`; the margin defaults to [`default_margin`].
pub fn choose_rho(q: &Matrix, scheme: Scheme, margin: Option<f64>) -> f64 {
    let g = gershgorin_bounds(q);
    let bound = match scheme {
        Scheme::A => g.lambda_max_ub,
        Scheme::B => -g.lambda_min_lb,
    };
    let margin = margin.unwrap_or_else(|| default_margin(bound));
    bound.max(0.0) + margin
}

/// Whether `rho` satisfies the scheme's condition against the certified bound.
pub fn certify_rho(q: &Matrix, scheme: Scheme, rho: f64) -> bool {
    rho.is_finite() && rho > 0.0 && rho > rho_threshold(q, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(n: usize, xs: &[f64]) -> Matrix {
        Matrix::from_row_slice(n, n, xs)
    }

    #[test]
    fn gershgorin_examples() {
        let g = gershgorin_bounds(&m(2, &[0.0, 2.0, 2.0, 0.0]));
        assert_eq!((g.lambda_min_lb, g.lambda_max_ub), (-2.0, 2.0));
        let g = gershgorin_bounds(&Matrix::identity(3, 3));
        assert_eq!((g.lambda_min_lb, g.lambda_max_ub), (1.0, 1.0));
        let g = gershgorin_bounds(&m(2, &[-3.0, 0.0, 0.0, 5.0]));
        assert_eq!((g.lambda_min_lb, g.lambda_max_ub), (-3.0, 5.0));
    }

    #[test]
    fn power_iteration_examples() {
        // characteristic polynomial l^2 - 4 has roots +-2
        let e = power_iteration_extremes(&m(2, &[0.0, 2.0, 2.0, 0.0]), 1e-10, 1000);
        assert!(e.converged);
        assert_abs_diff_eq!(e.lambda_min, -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.lambda_max, 2.0, epsilon = 1e-9);

        let e = power_iteration_extremes(&Matrix::identity(2, 2), 1e-10, 1000);
        assert_eq!((e.lambda_min, e.lambda_max), (1.0, 1.0));

        let e = power_iteration_extremes(&m(2, &[-3.0, 0.0, 0.0, 5.0]), 1e-10, 1000);
        assert_abs_diff_eq!(e.lambda_min, -3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.lambda_max, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn power_iteration_fallback_is_flagged() {
        // eigenvalues 1, 0.999 of the shifted matrix converge too slowly for 3 iterations
        let q = m(3, &[1.0, 0.0, 0.0, 0.0, 0.999, 0.0, 0.0, 0.0, 0.0]);
        let e = power_iteration_extremes(&q, 1e-14, 3);
        assert!(!e.converged);
        assert_eq!((e.lambda_min, e.lambda_max), (0.0, 1.0));
    }

    #[test]
    fn choose_rho_examples() {
        assert_eq!(choose_rho(&m(1, &[-1.0]), Scheme::A, Some(1.0)), 1.0);
        let q = m(2, &[0.0, 2.0, 2.0, 0.0]);
        assert_eq!(choose_rho(&q, Scheme::A, Some(0.5)), 2.5);
        assert_eq!(choose_rho(&q, Scheme::B, Some(0.5)), 2.5);
        assert!(choose_rho(&m(1, &[-1.0]), Scheme::A, None) > 0.0);
    }

    #[test]
    fn certification() {
        let q = m(2, &[0.0, 2.0, 2.0, 0.0]);
        assert!(certify_rho(&q, Scheme::A, 2.5));
        assert!(!certify_rho(&q, Scheme::A, 2.0));
        assert!(!certify_rho(&q, Scheme::B, 1.9));
        assert!(!certify_rho(&m(1, &[-1.0]), Scheme::A, 0.0));
        assert!(certify_rho(&m(1, &[-1.0]), Scheme::A, 0.1));
    }

    #[test]
    fn nonsymmetric_norm_bound() {
        let a = m(2, &[0.0, 1.0, 2.0, 0.0]);
        // singular values are 2 and 1
        assert!(norm2_upper(&a) >= 2.0);
        assert!(norm2_upper(&a) <= a.norm());
    }
}
