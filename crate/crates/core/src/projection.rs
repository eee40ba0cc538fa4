//! Metric projection `P_C` onto each constraint set variant.
//!
//! Boxes, balls and `[-1, 1]` have closed forms. Polyhedra are handled by a
//! primal active-set method for `min 1/2 ||x - u||^2 s.t. A x <= b`, started
//! from the stored feasible point with an empty working set, or from a
//! [`WarmStart`] left by a previous nearby projection.

use nalgebra::linalg::Cholesky;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Matrix, Polyhedron, Vector, MEMBERSHIP_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub point: Vector,
    /// Working set at termination (polyhedra only).
    pub active_set: Vec<usize>,
    /// Largest violated optimality condition of the inner solve; zero for
    /// the closed-form variants.
    pub kkt_residual: f64,
}

/// Working set of a previous nearby solve.
///
/// Sequences of nearby active-set solves (integrator stages, DCA iterates)
/// first try the previous working set: solve the equality-constrained
/// problem it defines and accept the answer if it is feasible with
/// nonnegative multipliers. Otherwise they fall back to a cold start. Each
/// accepted answer is computed from the current data alone, so no error
/// accumulates across the sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    pub(crate) working: Option<Vec<usize>>,
}

impl WarmStart {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.working = None;
    }

    pub(crate) fn store(&mut self, working: &[usize]) {
        match &mut self.working {
            Some(w) => {
                w.clear();
                w.extend_from_slice(working);
            }
            slot => *slot = Some(working.to_vec()),
        }
    }
}

/// Primal violation accepted for a warm-start guess, relative to the data
/// scale; a cold solve reaches the same level through rounding.
pub(crate) const WARM_START_TOL: f64 = 1e-14;

fn check_input(set: &ConstraintSet, u: &Vector) -> Result<()> {
    if u.len() != set.dim() {
        return Err(Error::Dimension {
            expected: set.dim(),
            got: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    Ok(())
}

/// `argmin_{x in C} ||x - u||`.
pub fn project(set: &ConstraintSet, u: &Vector) -> Result<ProjectionResult> {
    check_input(set, u)?;
    if let ConstraintSet::Polyhedron(p) = set {
        return project_polyhedron(p, u);
    }
    let mut point = u.clone();
    project_closed_form(set, &mut point);
    Ok(ProjectionResult {
        point,
        active_set: Vec::new(),
        kkt_residual: 0.0,
    })
}

/// Projection returning only the point.
pub fn project_point(set: &ConstraintSet, u: &Vector) -> Result<Vector> {
    check_input(set, u)?;
    match set {
        ConstraintSet::Polyhedron(p) => project_polyhedron(p, u).map(|r| r.point),
        _ => {
            let mut point = u.clone();
            project_closed_form(set, &mut point);
            Ok(point)
        }
    }
}

/// Projects `x` onto the set, overwriting it.
pub fn project_in_place(set: &ConstraintSet, x: &mut Vector) -> Result<()> {
    check_input(set, x)?;
    match set {
        ConstraintSet::Polyhedron(p) => {
            let r = project_polyhedron(p, x)?;
            x.copy_from(&r.point);
        }
        _ => project_closed_form(set, x),
    }
    Ok(())
}

/// As [`project_point`], first trying the working set in `warm` for
/// polyhedra. `warm` is left unchanged.
pub fn project_point_with(set: &ConstraintSet, u: &Vector, warm: &WarmStart) -> Result<Vector> {
    check_input(set, u)?;
    if let (ConstraintSet::Polyhedron(p), Some(w)) = (set, warm.working.as_deref()) {
        if p.max_violation(u) > 0.0 {
            if let Some(r) = guess_polyhedron(p, u, w) {
                return Ok(r.point);
            }
        }
    }
    project_point(set, u)
}

/// As [`project_in_place`], starting a polyhedral solve from `warm` and
/// leaving the new solution there. Other variants ignore `warm`.
pub fn project_in_place_warm(set: &ConstraintSet, x: &mut Vector, warm: &mut WarmStart) -> Result<()> {
    check_input(set, x)?;
    match set {
        ConstraintSet::Polyhedron(p) => {
            let r = match warm.working.as_deref().and_then(|w| guess_polyhedron(p, x, w)) {
                Some(r) => r,
                None => project_polyhedron(p, x)?,
            };
            warm.store(&r.active_set);
            x.copy_from(&r.point);
        }
        _ => project_closed_form(set, x),
    }
    Ok(())
}

fn project_closed_form(set: &ConstraintSet, x: &mut Vector) {
    match set {
        ConstraintSet::Box(b) => {
            for ((v, lo), hi) in x.iter_mut().zip(b.lo().iter()).zip(b.hi().iter()) {
                *v = v.clamp(*lo, *hi);
            }
        }
        ConstraintSet::Ball(b) => {
            let dist = x.metric_distance(b.center());
            // on the sphere exactly, u is returned unchanged
            if dist > b.radius() {
                let scale = b.radius() / dist;
                for (v, c) in x.iter_mut().zip(b.center().iter()) {
                    *v = c + scale * (*v - c);
                }
            }
        }
        ConstraintSet::UnitInterval => {
            let u = x[0];
            x[0] = if u < -1.0 {
                -1.0
            } else if u > 1.0 {
                1.0
            } else {
                u
            };
        }
        ConstraintSet::Polyhedron(_) => unreachable!("polyhedra have no closed form"),
    }
}

/// `dist(x, C) = ||x - P_C(x)||`.
pub fn distance_to_set(set: &ConstraintSet, x: &Vector) -> Result<f64> {
    Ok((x - project_point(set, x)?).norm())
}

/// `||P_C(u) - P_C(v)|| <= ||u - v|| + 1e-10`.
pub fn nonexpansiveness_check(set: &ConstraintSet, u: &Vector, v: &Vector) -> bool {
    match (project_point(set, u), project_point(set, v)) {
        (Ok(pu), Ok(pv)) => (pu - pv).norm() <= (u - v).norm() + 1e-10,
        _ => false,
    }
}

/// Multipliers of the working set: solves `(A_W A_W^T) lambda = rhs`.
fn working_multipliers(aw: &Matrix, rhs: &Vector) -> Vector {
    let gram = aw * aw.transpose();
    match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(rhs),
        None => gram
            .svd(true, true)
            .solve(rhs, 1e-14)
            .unwrap_or_else(|_| Vector::zeros(rhs.len())),
    }
}

fn rows(a: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)])
}

/// Projection onto `{A_W x = b_W}` for the working set `w`, returned only if
/// it is optimal for the polyhedron as well.
fn guess_polyhedron(poly: &Polyhedron, u: &Vector, w: &[usize]) -> Option<ProjectionResult> {
    if w.is_empty() || w.iter().any(|&i| i >= poly.n_constraints()) {
        return None;
    }
    let scale = 1.0 + u.norm() + poly.feasible_point().norm();
    let aw = rows(poly.a(), w);
    let bw = Vector::from_fn(w.len(), |k, _| poly.b()[w[k]]);
    let lam = working_multipliers(&aw, &(&aw * u - bw));
    if lam.iter().any(|l| *l < -1e-12 * scale) {
        return None;
    }
    let x = u - aw.transpose() * &lam;
    if poly.max_violation(&x) > WARM_START_TOL * scale {
        return None;
    }
    Some(certify(poly, u, x, w.to_vec(), &lam))
}

fn project_polyhedron(poly: &Polyhedron, u: &Vector) -> Result<ProjectionResult> {
    let a = poly.a();
    let b = poly.b();
    let m = poly.n_constraints();
    let n = u.len();

    if poly.max_violation(u) <= 0.0 {
        return Ok(ProjectionResult {
            point: u.clone(),
            active_set: Vec::new(),
            kkt_residual: 0.0,
        });
    }

    let scale = 1.0 + u.norm() + poly.feasible_point().norm();
    let step_tol = 1e-13 * scale;
    let mult_tol = 1e-12 * scale;
    let guard = 20 * (m + n) + 100;

    let mut x = poly.feasible_point().clone();
    let mut working: Vec<usize> = Vec::new();
    // after a full unblocked step x is the projection onto the working
    // subspace; the next direction is rounding noise and must not be followed
    let mut subspace_min = false;

    for _ in 0..guard {
        let g = &x - u;
        let (p, lam) = if working.is_empty() {
            (-&g, Vector::zeros(0))
        } else {
            let aw = rows(a, &working);
            let lam = working_multipliers(&aw, &(-(&aw * &g)));
            let p = -&g - aw.transpose() * &lam;
            (p, lam)
        };

        if subspace_min || p.norm() <= step_tol {
            // Bland-style: drop the lowest-index constraint with a negative multiplier
            let drop = working
                .iter()
                .zip(lam.iter())
                .filter(|(_, l)| **l < -mult_tol)
                .map(|(i, _)| *i)
                .min();
            match drop {
                None => return Ok(certify(poly, u, x, working, &lam)),
                Some(j) => {
                    working.retain(|&i| i != j);
                    subspace_min = false;
                    continue;
                }
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        let ap = a * &p;
        let ax = a * &x;
        for i in 0..m {
            if working.contains(&i) || ap[i] <= 0.0 {
                continue;
            }
            let ratio = ((b[i] - ax[i]) / ap[i]).max(0.0);
            if ratio < alpha {
                alpha = ratio;
                blocking = Some(i);
            }
        }
        x.axpy(alpha, &p, 1.0);
        subspace_min = blocking.is_none();
        if let Some(j) = blocking {
            let pos = working.partition_point(|&i| i < j);
            working.insert(pos, j);
        }
    }
    Err(Error::CycleGuard { iterations: guard })
}

fn certify(
    poly: &Polyhedron,
    u: &Vector,
    x: Vector,
    working: Vec<usize>,
    lambda: &Vector,
) -> ProjectionResult {
    let primal = poly.max_violation(&x);
    let mut stationarity = &x - u;
    for (k, &i) in working.iter().enumerate() {
        stationarity += poly.a().row(i).transpose() * lambda[k];
    }
    let dual = lambda.iter().fold(0.0f64, |acc, l| acc.max(-l));
    // <u - x, y - x> <= 0 at the stored feasible point
    let variational = (u - &x).dot(&(poly.feasible_point() - &x)).max(0.0);
    let kkt_residual = primal.max(stationarity.norm()).max(dual).max(variational);
    ProjectionResult {
        point: x,
        active_set: working,
        kkt_residual,
    }
}

/// Membership check for a projection result (variant-specific, 1e-10).
pub fn is_member(set: &ConstraintSet, x: &Vector) -> bool {
    set.violation(x) <= MEMBERSHIP_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    /// `{x1 + x2 <= 1, x >= 0}`
    fn simplex() -> ConstraintSet {
        ConstraintSet::polyhedron(
            Matrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            v(&[1.0, 0.0, 0.0]),
            v(&[0.25, 0.25]),
        )
        .unwrap()
    }

    #[test]
    fn ball_radial_scaling() {
        let ball = ConstraintSet::ball(v(&[0.0, 0.0]), 1.0).unwrap();
        let p = project(&ball, &v(&[3.0, 4.0])).unwrap().point;
        assert_abs_diff_eq!(p, v(&[0.6, 0.8]), epsilon = 1e-15);
    }

    #[test]
    fn ball_boundary_returns_input() {
        let ball = ConstraintSet::ball(v(&[0.0, 0.0]), 5.0).unwrap();
        let u = v(&[3.0, 4.0]);
        assert_eq!(project_point(&ball, &u).unwrap(), u);
    }

    #[test]
    fn unit_interval_branches() {
        let c = ConstraintSet::UnitInterval;
        assert_eq!(project_point(&c, &v(&[1.125])).unwrap()[0], 1.0);
        assert_eq!(project_point(&c, &v(&[-7.0])).unwrap()[0], -1.0);
        assert_eq!(project_point(&c, &v(&[0.3])).unwrap()[0], 0.3);
    }

    /// Brute force over a fine grid of the feasible triangle.
    fn grid_projection(u: &Vector) -> Vector {
        let steps = 400;
        let mut best = (f64::INFINITY, v(&[0.0, 0.0]));
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let x = v(&[i as f64 / steps as f64, j as f64 / steps as f64]);
                let d = (&x - u).norm();
                if d < best.0 {
                    best = (d, x);
                }
            }
        }
        best.1
    }

    #[test]
    fn polyhedron_simplex_corner_case() {
        let u = v(&[1.0, 1.0]);
        let grid = grid_projection(&u);
        assert_abs_diff_eq!(grid, v(&[0.5, 0.5]), epsilon = 1e-12);
        let r = project(&simplex(), &u).unwrap();
        assert_abs_diff_eq!(r.point, v(&[0.5, 0.5]), epsilon = 1e-12);
        assert_eq!(r.active_set, vec![0]);
        assert!(r.kkt_residual <= 1e-12);
    }

    #[test]
    fn polyhedron_matches_grid_at_vertex_regions() {
        for u in [
            v(&[-1.0, -2.0]),
            v(&[3.0, -0.5]),
            v(&[0.2, 5.0]),
            v(&[0.1, 0.2]),
        ] {
            let exact = project_point(&simplex(), &u).unwrap();
            let grid = grid_projection(&u);
            assert!((&exact - &grid).norm() <= 1.0 / 400.0, "u = {u}");
            assert!((&exact - &u).norm() <= (&grid - &u).norm() + 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let c = ConstraintSet::UnitInterval;
        assert!(matches!(
            project(&c, &v(&[f64::NAN])),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            project(&c, &v(&[0.0, 1.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn nonexpansive_examples() {
        let ball = ConstraintSet::ball(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(nonexpansiveness_check(
            &ball,
            &v(&[3.0, 4.0]),
            &v(&[0.0, 0.0])
        ));
        let c = ConstraintSet::UnitInterval;
        assert!(nonexpansiveness_check(&c, &v(&[2.0]), &v(&[-2.0])));
    }

    #[test]
    fn unit_interval_agrees_with_box() {
        let bx = ConstraintSet::boxed(v(&[-1.0]), v(&[1.0])).unwrap();
        for i in -40..=40 {
            let u = v(&[i as f64 * 0.0731]);
            assert_eq!(
                project_point(&ConstraintSet::UnitInterval, &u).unwrap(),
                project_point(&bx, &u).unwrap()
            );
        }
    }

    #[test]
    fn degenerate_vertex_with_redundant_constraints() {
        // square [0,1]^2 written with a duplicated facet and a redundant diagonal through (1,1)
        let a = Matrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
        let b = v(&[1.0, 1.0, 1.0, 2.0, 0.0]);
        let set = ConstraintSet::polyhedron(a, b, v(&[0.5, 0.5])).unwrap();
        let r = project(&set, &v(&[3.0, 2.0])).unwrap();
        assert_abs_diff_eq!(r.point, v(&[1.0, 1.0]), epsilon = 1e-12);
        assert!(r.kkt_residual <= 1e-10);
    }
}
