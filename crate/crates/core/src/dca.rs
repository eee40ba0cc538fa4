//! DCA iteration schemes for indefinite quadratic programs.
//!
//! Scheme A is the explicit projection step `x <- P_C(x - (Qx + q)/rho)`.
//! Scheme B replaces it with the solution `F_C(x)` of the strongly convex
//! program `min 1/2 y^T Q y + q^T y + rho/2 ||y - x||^2` over `C`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{
    AviProblem, ConstraintSet, Matrix, QuadraticProblem, SolveTrace, SolverConfig, Termination,
    Vector,
};
use crate::projection::{project_in_place, project_point, project_point_with, WarmStart};
use crate::spectral::{self, gershgorin_bounds, norm2_upper, symmetric_part, Scheme};
use crate::subproblem::StronglyConvexQp;

/// Natural residual `||x - P_C(x - (Qx + q))||` with unit step.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct KktResidual(pub f64);

impl KktResidual {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `||x - P_C(x - step (M x + q))||`.
pub fn natural_residual(
    matrix: &Matrix,
    linear: &Vector,
    set: &ConstraintSet,
    x: &Vector,
    step: f64,
) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residual point"));
    }
    let mut u = x - (matrix * x + linear) * step;
    project_in_place(set, &mut u)?;
    Ok((x - u).norm())
}

pub fn kkt_residual(p: &QuadraticProblem, x: &Vector) -> Result<KktResidual> {
    natural_residual(p.hessian(), p.linear(), p.set(), x, 1.0).map(KktResidual)
}

/// Same residual for an affine variational inequality.
pub fn avi_residual(p: &AviProblem, x: &Vector) -> Result<f64> {
    natural_residual(p.matrix(), p.linear(), p.set(), x, 1.0)
}

/// `P_C(x - (Qx + q)/rho)`.
pub fn scheme_a_step(p: &QuadraticProblem, rho: f64, x: &Vector) -> Result<Vector> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rho must be positive, got {rho}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("iterate"));
    }
    let mut u = x - p.gradient(x) / rho;
    project_in_place(p.set(), &mut u)?;
    Ok(u)
}

/// The map `u -> F_C(u)`: unique solution of
/// `<M x + q + rho (x - u), y - x> >= 0` for all `y in C`, which for symmetric
/// `M` is the minimizer of the strongly convex subproblem.
///
/// For symmetric `M` the subproblem is solved exactly (see
/// [`StronglyConvexQp`]). Otherwise projected gradient runs with the fixed
/// step `mu / L^2`, where `mu = rho + lb` is the strong monotonicity modulus
/// and `L` bounds the operator norm of `M + rho I`.
#[derive(Clone, Debug)]
pub struct ProximalMap {
    problem: AviProblem,
    rho: f64,
    step: f64,
    modulus: f64,
    operator_norm: f64,
    lipschitz: f64,
    max_iter: usize,
    exact: Option<StronglyConvexQp>,
}

impl ProximalMap {
    pub fn new(problem: AviProblem, rho: f64) -> Result<Self> {
        let sym = problem.is_symmetric();
        let bounds = if sym {
            gershgorin_bounds(problem.matrix())
        } else {
            gershgorin_bounds(&symmetric_part(problem.matrix()))
        };
        let modulus = rho + bounds.lambda_min_lb;
        if !(rho > 0.0 && modulus > 0.0) {
            return Err(Error::RhoNotCertified {
                rho,
                scheme: 'B',
                bound: (-bounds.lambda_min_lb).max(0.0),
            });
        }
        let (step, operator_norm) = if sym {
            let l = bounds.lambda_max_ub + rho;
            (1.0 / l, l.max(modulus))
        } else {
            let l = norm2_upper(problem.matrix()) + rho;
            (modulus / (l * l), l)
        };
        let lipschitz = (rho + bounds.lambda_max_ub.max(0.0)) / modulus;
        let exact = if sym {
            let n = problem.dim();
            let hessian = problem.matrix() + Matrix::identity(n, n) * rho;
            Some(StronglyConvexQp::new(hessian, problem.set().clone())?)
        } else {
            None
        };
        Ok(Self {
            exact,
            problem,
            rho,
            step,
            modulus,
            operator_norm,
            lipschitz,
            max_iter: 200_000,
        })
    }

    pub fn for_problem(p: &QuadraticProblem, rho: f64) -> Result<Self> {
        Self::new(p.to_avi(), rho)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Strong monotonicity modulus `rho + lambda_min_lb`.
    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    /// Lipschitz constant `(rho + max(lambda_max_ub, 0)) / (rho + lambda_min_lb)`
    /// used for `F_C`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn subgradient(&self, x: &Vector, u: &Vector) -> Vector {
        self.problem.operator(x) + (x - u) * self.rho
    }

    /// Exact solve (symmetric `M`) or projected gradient until the step
    /// displacement is at most `tol`, followed by a variational certificate
    /// at sampled points of `C`.
    pub fn eval(&self, u: &Vector, tol: f64) -> Result<Vector> {
        self.eval_inner(u, tol, None)
    }

    /// As [`eval`](Self::eval), with the exact solver restarted from, and
    /// updating, `warm`. Results agree with `eval` to the solver tolerance.
    pub fn eval_warm(&self, u: &Vector, tol: f64, warm: &mut WarmStart) -> Result<Vector> {
        self.eval_inner(u, tol, Some(warm))
    }

    fn eval_inner(&self, u: &Vector, tol: f64, warm: Option<&mut WarmStart>) -> Result<Vector> {
        let set = self.problem.set();
        if u.len() != self.problem.dim() {
            return Err(Error::Dimension {
                expected: self.problem.dim(),
                got: u.len(),
            });
        }
        if let Some(qp) = &self.exact {
            let g = self.problem.linear() - u * self.rho;
            let x = match warm {
                Some(w) => {
                    let x = qp.solve_warm(&g, Some(u), w)?;
                    self.certify(&x, u, tol, w)?;
                    x
                }
                None => {
                    let x = qp.solve_from(&g, Some(u))?;
                    self.certify(&x, u, tol, &WarmStart::new())?;
                    x
                }
            };
            return Ok(x);
        }
        let mut x = project_point(set, u)?;
        let mut converged = false;
        for _ in 0..self.max_iter {
            let g = self.subgradient(&x, u);
            let mut next = &x - g * self.step;
            project_in_place(set, &mut next)?;
            let disp = (&next - &x).norm();
            x = next;
            if disp <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::MaxIter {
                what: "subproblem",
                max_iter: self.max_iter,
            });
        }
        self.certify(&x, u, tol, &WarmStart::new())?;
        Ok(x)
    }

    /// Checks `<grad, y - x> >= 0` (up to `tol`) at the reference point and
    /// two projections; `warm` is the solver's working set, which usually
    /// fits the projection of `x - grad` as well.
    fn certify(&self, x: &Vector, u: &Vector, tol: f64, warm: &WarmStart) -> Result<()> {
        let set = self.problem.set();
        let g = self.subgradient(x, u);
        let samples = [
            set.reference_point(),
            project_point_with(set, u, warm)?,
            project_point_with(set, &(x - &g), warm)?,
        ];
        let scale = 1.0 / self.step + self.operator_norm;
        // A solve in double precision is only accurate to about kappa * eps,
        // and an error delta in x or in a sampled projection moves the gap by
        // about ||g|| delta.
        let kappa = self.operator_norm / self.modulus;
        let slack = 10.0 * (tol + kappa * f64::EPSILON * (1.0 + x.norm()));
        let g_norm = g.norm();
        for y in &samples {
            let d = y - x;
            let gap = g.dot(&d);
            if gap < -slack * (1.0 + g_norm + scale * d.norm()) {
                return Err(Error::Certificate { gap });
            }
        }
        Ok(())
    }
}

/// `F_C(u)` for a quadratic problem; `rho` must be certified for scheme B.
pub fn solve_subproblem_fc(p: &QuadraticProblem, rho: f64, u: &Vector, tol: f64) -> Result<Vector> {
    if !spectral::certify_rho(p.hessian(), Scheme::B, rho) {
        return Err(Error::RhoNotCertified {
            rho,
            scheme: 'B',
            bound: spectral::rho_threshold(p.hessian(), Scheme::B),
        });
    }
    ProximalMap::for_problem(p, rho)?.eval(u, tol)
}

#[derive(Clone, Debug)]
pub struct DcaRun {
    pub scheme: Scheme,
    pub config: SolverConfig,
    pub trace: SolveTrace,
    pub final_point: Vector,
    pub rate_estimate: Option<f64>,
}

impl DcaRun {
    pub fn final_residual(&self) -> f64 {
        self.trace.final_residual().unwrap_or(f64::INFINITY)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip the certified-`rho` precondition. No convergence claim is made.
    pub unsafe_rho: bool,
}

/// Runs scheme A or B from `x0` until the KKT residual drops to
/// `config.residual_tol` or `config.max_iter` steps have been taken.
pub fn run_dca(
    p: &QuadraticProblem,
    scheme: Scheme,
    config: &SolverConfig,
    x0: &Vector,
    options: RunOptions,
) -> Result<DcaRun> {
    config.validate()?;
    if x0.len() != p.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: x0.len(),
        });
    }
    let distance = p.set().violation(x0);
    if !p.set().contains(x0) {
        return Err(Error::StartOutside { distance });
    }
    let rho = config.rho;
    if !options.unsafe_rho && !spectral::certify_rho(p.hessian(), scheme, rho) {
        return Err(Error::RhoNotCertified {
            rho,
            scheme: scheme.letter(),
            bound: spectral::rho_threshold(p.hessian(), scheme),
        });
    }
    let prox = match scheme {
        Scheme::A => None,
        Scheme::B => Some(ProximalMap::for_problem(p, rho)?),
    };

    let start = Instant::now();
    let guard = 1e6 * (1.0 + x0.norm());
    let mut iterates = Vec::new();
    let mut residuals = Vec::new();
    let mut x = x0.clone();
    let mut k = 0;
    let termination = loop {
        let r = kkt_residual(p, &x)?.value();
        iterates.push(x.clone());
        residuals.push(r);
        if r <= config.residual_tol {
            break Termination::ResidualTol;
        }
        if k == config.max_iter {
            break Termination::MaxIter;
        }
        let next = match &prox {
            None => scheme_a_step(p, rho, &x)?,
            Some(map) => map.eval(&x, config.inner_tol)?,
        };
        k += 1;
        if next.iter().any(|v| !v.is_finite()) || next.norm() > guard {
            let r = kkt_residual(p, &next).map_or(f64::INFINITY, |r| r.value());
            iterates.push(next);
            residuals.push(r);
            break Termination::DivergenceGuard;
        }
        x = next;
    };

    let final_point = iterates.last().cloned().expect("trace is never empty");
    let rate_estimate = estimate_r_linear_rate(&iterates, &final_point);
    Ok(DcaRun {
        scheme,
        config: config.clone(),
        trace: SolveTrace {
            iterates,
            times: None,
            residuals,
            termination,
            wall_time: start.elapsed().as_secs_f64(),
        },
        final_point,
        rate_estimate,
    })
}

/// Finite-sample proxy for `limsup ||x^k - xbar||^(1/k)`: the maximum over
/// the last `ceil(K/2)` iterates, skipping distances below `100 eps`.
/// Absent unless at least 10 tail iterates are usable.
pub fn estimate_r_linear_rate(iterates: &[Vector], xbar: &Vector) -> Option<f64> {
    const MIN_USABLE: usize = 10;
    let total = iterates.len();
    let first = (total - total.div_ceil(2)).max(1);
    let roots: Vec<f64> = iterates
        .get(first..)?
        .iter()
        .enumerate()
        .filter_map(|(offset, x)| {
            let k = first + offset;
            let d = (x - xbar).norm();
            (d > 100.0 * f64::EPSILON).then(|| d.powf(1.0 / k as f64))
        })
        .collect();
    if roots.len() < MIN_USABLE {
        return None;
    }
    roots.into_iter().reduce(f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(alpha: f64, beta: f64) -> QuadraticProblem {
        QuadraticProblem::new(
            Matrix::from_element(1, 1, alpha),
            Vector::from_element(1, beta),
            ConstraintSet::UnitInterval,
        )
        .unwrap()
    }

    fn s(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn scheme_a_hand_steps() {
        let p = scalar(-1.0, 0.0);
        assert_abs_diff_eq!(scheme_a_step(&p, 2.0, &s(0.5)).unwrap()[0], 0.75);
        assert_eq!(scheme_a_step(&p, 2.0, &s(0.75)).unwrap()[0], 1.0);
        assert_eq!(scheme_a_step(&p, 2.0, &s(1.0)).unwrap()[0], 1.0);
    }

    #[test]
    fn subproblem_closed_forms() {
        let p = scalar(-1.0, 0.0);
        // psi(x) = x^2/2 - x + 1/4 is minimized at 1
        assert_abs_diff_eq!(
            solve_subproblem_fc(&p, 2.0, &s(0.5), 1e-12).unwrap()[0],
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            solve_subproblem_fc(&p, 2.0, &s(0.0), 1e-12).unwrap()[0],
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            solve_subproblem_fc(&p, 2.0, &s(1.0), 1e-12).unwrap()[0],
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn subproblem_rejects_uncertified_rho() {
        let p = scalar(-1.0, 0.0);
        assert!(matches!(
            solve_subproblem_fc(&p, 0.5, &s(0.0), 1e-12),
            Err(Error::RhoNotCertified { .. })
        ));
    }

    #[test]
    fn kkt_residual_examples() {
        let p = scalar(-1.0, 0.0);
        assert_eq!(kkt_residual(&p, &s(0.0)).unwrap().value(), 0.0);
        assert_eq!(kkt_residual(&p, &s(1.0)).unwrap().value(), 0.0);
        assert_eq!(kkt_residual(&p, &s(0.5)).unwrap().value(), 0.5);
    }

    #[test]
    fn run_dca_hand_iteration() {
        let p = scalar(-1.0, 0.0);
        let cfg = SolverConfig::default().with_rho(2.0);
        let run = run_dca(&p, Scheme::A, &cfg, &s(0.5), RunOptions::default()).unwrap();
        let xs: Vec<f64> = run.trace.iterates.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.5, 0.75, 1.0]);
        assert_eq!(run.trace.termination, Termination::ResidualTol);
        assert_eq!(run.iterations(), 2);
        assert_eq!(run.final_residual(), 0.0);
        assert_eq!(run.rate_estimate, None);
    }

    #[test]
    fn run_dca_from_kkt_point() {
        let p = scalar(-1.0, 0.0);
        let cfg = SolverConfig::default().with_rho(2.0);
        for scheme in [Scheme::A, Scheme::B] {
            let run = run_dca(&p, scheme, &cfg, &s(1.0), RunOptions::default()).unwrap();
            assert_eq!(run.iterations(), 0);
            assert_eq!(run.final_residual(), 0.0);
        }
    }

    #[test]
    fn run_dca_guards() {
        let p = scalar(-1.0, 0.0);
        let cfg = SolverConfig::default().with_rho(0.5);
        assert!(matches!(
            run_dca(&p, Scheme::B, &cfg, &s(0.5), RunOptions::default()),
            Err(Error::RhoNotCertified { .. })
        ));
        assert!(matches!(
            run_dca(
                &p,
                Scheme::A,
                &SolverConfig::default(),
                &s(2.0),
                RunOptions::default()
            ),
            Err(Error::StartOutside { .. })
        ));
    }

    #[test]
    fn geometric_rate() {
        let xs: Vec<Vector> = (0..40).map(|k| s(0.5f64.powi(k))).collect();
        let rate = estimate_r_linear_rate(&xs, &s(0.0)).unwrap();
        assert_abs_diff_eq!(rate, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn rate_absent_without_tail() {
        let xs: Vec<Vector> = (0..20).map(|_| s(1.0)).collect();
        assert_eq!(estimate_r_linear_rate(&xs, &s(1.0)), None);
        let short: Vec<Vector> = (0..5).map(|k| s(0.5f64.powi(k))).collect();
        assert_eq!(estimate_r_linear_rate(&short, &s(0.0)), None);
        // 30 iterates, but only 9 of the last 15 are away from the limit
        let finite: Vec<Vector> = (0..30).map(|k| s(if k < 24 { 0.5 } else { 0.0 })).collect();
        assert_eq!(estimate_r_linear_rate(&finite, &s(0.0)), None);
    }

    #[test]
    fn proximal_lipschitz_covers_negative_spectrum() {
        // F_C(u) = P_C(2u) here, so the true constant is 2
        let map = ProximalMap::for_problem(&scalar(-1.0, 0.0), 2.0).unwrap();
        assert_eq!(map.lipschitz(), 2.0);
    }
}
