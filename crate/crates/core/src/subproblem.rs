//! Exact solvers for `min 1/2 y^T H y + g^T y` over a constraint set, with
//! `H` symmetric positive definite.
//!
//! Intervals use a clamp, boxes and polyhedra a primal active-set method
//! (Bland's rule for leaving constraints), and balls the secular equation
//! `||(H + mu I)^{-1} g_c|| = r` in the eigenbasis of `H`.

use nalgebra::linalg::SymmetricEigen;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Matrix, Vector};
use crate::projection::{WarmStart, WARM_START_TOL};

/// Reusable factorisations for one Hessian and set.
#[derive(Clone, Debug)]
pub struct StronglyConvexQp {
    hessian: Matrix,
    set: ConstraintSet,
    /// `A y <= b` form of a box or polyhedron.
    inequalities: Option<(Matrix, Vector)>,
    eigen: Option<SymmetricEigen<f64, nalgebra::Dyn>>,
}

impl StronglyConvexQp {
    /// `hessian` must be symmetric positive definite; this is the caller's
    /// responsibility (a Cholesky check rejects obvious failures).
    pub fn new(hessian: Matrix, set: ConstraintSet) -> Result<Self> {
        if hessian.nrows() != set.dim() {
            return Err(Error::Dimension {
                expected: set.dim(),
                got: hessian.nrows(),
            });
        }
        if hessian.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig(
                "subproblem Hessian is not positive definite".into(),
            ));
        }
        let n = set.dim();
        let inequalities = match &set {
            ConstraintSet::Box(b) => {
                let mut a = Matrix::zeros(2 * n, n);
                let mut rhs = Vector::zeros(2 * n);
                for i in 0..n {
                    a[(2 * i, i)] = 1.0;
                    rhs[2 * i] = b.hi()[i];
                    a[(2 * i + 1, i)] = -1.0;
                    rhs[2 * i + 1] = -b.lo()[i];
                }
                Some((a, rhs))
            }
            ConstraintSet::Polyhedron(p) => Some((p.a().clone(), p.b().clone())),
            _ => None,
        };
        let eigen =
            matches!(set, ConstraintSet::Ball(_)).then(|| hessian.clone().symmetric_eigen());
        Ok(Self {
            hessian,
            set,
            inequalities,
            eigen,
        })
    }

    /// Minimiser for the linear term `g`.
    pub fn solve(&self, g: &Vector) -> Result<Vector> {
        self.solve_from(g, None)
    }

    /// As [`solve`](Self::solve); boxes and polyhedra start the active-set
    /// iteration at `hint` when it lies in the set.
    pub fn solve_from(&self, g: &Vector, hint: Option<&Vector>) -> Result<Vector> {
        if g.len() != self.set.dim() {
            return Err(Error::Dimension {
                expected: self.set.dim(),
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subproblem data"));
        }
        match &self.set {
            ConstraintSet::UnitInterval => Ok(Vector::from_element(
                1,
                (-g[0] / self.hessian[(0, 0)]).clamp(-1.0, 1.0),
            )),
            ConstraintSet::Ball(b) => Ok(self.solve_ball(g, b.center(), b.radius())),
            ConstraintSet::Box(_) | ConstraintSet::Polyhedron(_) => {
                let (a, rhs) = self.inequalities.as_ref().expect("built in new");
                let start = self.start_point(hint);
                self.active_set(a, rhs, g, start, Vec::new()).map(|(x, _)| x)
            }
        }
    }

    /// As [`solve_from`](Self::solve_from), first trying the working set in
    /// `warm` (boxes and polyhedra) and storing the final one there.
    pub fn solve_warm(&self, g: &Vector, hint: Option<&Vector>, warm: &mut WarmStart) -> Result<Vector> {
        let Some((a, rhs)) = self.inequalities.as_ref() else {
            return self.solve_from(g, hint);
        };
        if let Some(x) = warm.working.as_deref().and_then(|w| self.guess(a, rhs, g, w)) {
            return Ok(x);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subproblem data"));
        }
        let start = self.start_point(hint);
        let (x, working) = self.active_set(a, rhs, g, start, Vec::new())?;
        warm.store(&working);
        Ok(x)
    }

    /// `hint` if it lies in the set (clamped into a box), else the set's
    /// reference point.
    fn start_point(&self, hint: Option<&Vector>) -> Vector {
        let n = self.set.dim();
        match (hint, &self.set) {
            (Some(x), _) if x.len() == n && self.set.violation(x) <= 0.0 => x.clone(),
            (Some(x), ConstraintSet::Box(b)) if x.len() == n => {
                Vector::from_fn(n, |i, _| x[i].clamp(b.lo()[i], b.hi()[i]))
            }
            _ => self.set.reference_point(),
        }
    }

    /// Minimiser on `{A_W y = b_W}`, returned only if it is feasible with
    /// nonnegative multipliers, i.e. optimal for the full problem.
    fn guess(&self, a: &Matrix, b: &Vector, g: &Vector, w: &[usize]) -> Option<Vector> {
        let n = a.ncols();
        if g.len() != n || w.iter().any(|&i| i >= a.nrows()) {
            return None;
        }
        let (kkt, rhs) = self.kkt_system(a, w, &(-g));
        let bw_rows = Vector::from_fn(w.len(), |k, _| b[w[k]]);
        let mut rhs = rhs;
        rhs.rows_mut(n, w.len()).copy_from(&bw_rows);
        let sol = kkt.lu().solve(&rhs)?;
        let x = sol.rows(0, n).into_owned();
        let scale = 1.0 + g.norm() + self.hessian.norm() * (1.0 + x.norm());
        if sol.rows(n, w.len()).iter().any(|l| *l < -1e-12 * scale) {
            return None;
        }
        let violation = (a * &x - b).max();
        if !(violation <= WARM_START_TOL * scale) {
            return None;
        }
        Some(x)
    }

    /// `[H A_W^T; A_W 0]` with right-hand side `(top, 0)`.
    fn kkt_system(&self, a: &Matrix, working: &[usize], top: &Vector) -> (Matrix, Vector) {
        let n = a.ncols();
        let k = working.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.hessian);
        for (r, &i) in working.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
        }
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(top);
        (kkt, rhs)
    }

    fn solve_ball(&self, g: &Vector, center: &Vector, radius: f64) -> Vector {
        let eigen = self.eigen.as_ref().expect("built in new");
        // z = y - c minimises 1/2 z^T H z + (g + H c)^T z over ||z|| <= r
        let gc = g + &self.hessian * center;
        let ghat = eigen.eigenvectors.transpose() * gc;
        let lambdas = &eigen.eigenvalues;
        let norm_at = |mu: f64| -> f64 {
            ghat.iter()
                .zip(lambdas.iter())
                .map(|(gi, li)| (gi / (li + mu)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let z_of = |mu: f64| -> Vector {
            let coeffs = Vector::from_fn(ghat.len(), |i, _| -ghat[i] / (lambdas[i] + mu));
            &eigen.eigenvectors * coeffs
        };
        if norm_at(0.0) <= radius {
            return center + z_of(0.0);
        }
        // phi(mu) = 1/r - 1/||z(mu)|| is decreasing and nearly linear, so
        // Newton converges fast; bisection guards the bracket [lo, hi].
        let mut lo = 0.0;
        let mut hi = ghat.norm() / radius;
        let mut mu = 0.0;
        for _ in 0..200 {
            let s = norm_at(mu);
            let phi = 1.0 / radius - 1.0 / s;
            if phi.abs() <= 1e-15 / radius {
                break;
            }
            if phi > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            // d||z||/dmu = -sum g_i^2 / (l_i + mu)^3 / ||z||
            let ds = -ghat
                .iter()
                .zip(lambdas.iter())
                .map(|(gi, li)| gi * gi / (li + mu).powi(3))
                .sum::<f64>()
                / s;
            let dphi = ds / (s * s);
            let mut next = mu - phi / dphi;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - mu).abs() <= 1e-16 * (1.0 + mu) {
                mu = next;
                break;
            }
            mu = next;
        }
        let z = z_of(mu);
        // land exactly on the sphere to absorb the last rounding
        let nz = z.norm();
        center + if nz > radius { z * (radius / nz) } else { z }
    }

    /// Primal active-set iteration from the feasible `start`, whose working
    /// set `working` must hold constraints tight at `start` with linearly
    /// independent rows.
    fn active_set(
        &self,
        a: &Matrix,
        b: &Vector,
        g: &Vector,
        start: Vector,
        mut working: Vec<usize>,
    ) -> Result<(Vector, Vec<usize>)> {
        let (m, n) = (a.nrows(), a.ncols());
        let h = &self.hessian;
        let scale = 1.0 + g.norm() + h.norm() * (1.0 + start.norm());
        let step_tol = 1e-14 * scale;
        let mult_tol = 1e-12 * scale;
        let guard = 20 * (m + n) + 100;
        let mut x = start;
        // after a full unblocked step x minimises over the working subspace;
        // the next direction is rounding noise and must not be followed
        let mut subspace_min = false;
        for _ in 0..guard {
            let grad = h * &x + g;
            let (kkt, rhs) = self.kkt_system(a, &working, &(-&grad));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or(Error::NonFinite("active-set KKT system"))?;
            let p = sol.rows(0, n).into_owned();
            if subspace_min || p.norm() <= step_tol {
                let drop = working
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| sol[n + r] < -mult_tol)
                    .map(|(_, &i)| i)
                    .min();
                match drop {
                    None => return Ok((x, working)),
                    Some(j) => {
                        working.retain(|&i| i != j);
                        subspace_min = false;
                        continue;
                    }
                }
            }
            let ap = a * &p;
            let ax = a * &x;
            let mut alpha = 1.0;
            let mut blocking = None;
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
}
