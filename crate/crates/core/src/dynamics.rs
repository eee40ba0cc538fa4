//! Projected dynamical systems and their numerical integration.
//!
//! System A: `x' = (P_C(x - (Mx + q)/rho) - x) / eta`.
//! System B: `x' = (F_C(x) - x) / eta` with `F_C` from [`ProximalMap`].
//!
//! States are never pulled back into `C`: the distance to the set is
//! recorded at every step so flow invariance can be measured.

use std::io::Write;

use crate::dca::ProximalMap;
use crate::error::{Error, Result};
use crate::model::{AviProblem, Vector};
use crate::projection::{project_in_place, project_in_place_warm, project_point, WarmStart};
use crate::spectral::norm2_upper;

/// Inner tolerance for `F_C` evaluations inside system B.
pub const SUBPROBLEM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    A,
    B,
}

#[derive(Clone, Debug)]
pub struct VectorField {
    kind: SystemKind,
    problem: AviProblem,
    rho: f64,
    eta: f64,
    operator_norm: f64,
    prox: Option<ProximalMap>,
}

impl VectorField {
    pub fn new(
        kind: SystemKind,
        problem: impl Into<AviProblem>,
        rho: f64,
        eta: f64,
    ) -> Result<Self> {
        let problem = problem.into();
        for (name, v) in [("rho", rho), ("eta", eta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let prox = match kind {
            SystemKind::A => None,
            SystemKind::B => Some(ProximalMap::new(problem.clone(), rho)?),
        };
        Ok(Self {
            kind,
            operator_norm: norm2_upper(problem.matrix()),
            problem,
            rho,
            eta,
            prox,
        })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn problem(&self) -> &AviProblem {
        &self.problem
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let mut out = Vector::zeros(x.len());
        let mut scratch = Vector::zeros(x.len());
        self.eval_into(x, &mut out, &mut scratch, &mut WarmStart::new())?;
        Ok(out)
    }

    /// Writes the field at `x` into `out`. `warm` carries active sets between
    /// the nearby evaluations of one integration.
    fn eval_into(
        &self,
        x: &Vector,
        out: &mut Vector,
        scratch: &mut Vector,
        warm: &mut WarmStart,
    ) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match &self.prox {
            None => {
                scratch.copy_from(self.problem.linear());
                scratch.gemv(1.0, self.problem.matrix(), x, 1.0);
                scratch.axpy(1.0, x, -1.0 / self.rho);
                project_in_place_warm(self.problem.set(), scratch, warm)?;
            }
            Some(map) => {
                let fc = map.eval_warm(x, SUBPROBLEM_TOL, warm)?;
                scratch.copy_from(&fc);
            }
        }
        out.copy_from(scratch);
        out.axpy(-1.0 / self.eta, x, 1.0 / self.eta);
        Ok(())
    }

    /// Global Lipschitz constant of the field: `(||M||/rho + 2)/eta` for
    /// system A, `(l + 1)/eta` for system B with `l` the constant of `F_C`.
    pub fn certified_lipschitz(&self) -> f64 {
        match &self.prox {
            None => (self.operator_norm / self.rho + 2.0) / self.eta,
            Some(map) => (map.lipschitz() + 1.0) / self.eta,
        }
    }

    /// Constants `(M, L)` with `||field(x)|| <= M + L ||x||` for all `x`,
    /// taken at the set's reference point `xbar`.
    ///
    /// System A: `M = (||xbar|| + 2||q||/rho)/eta`, `L = (2||M||/rho + 1)/eta`.
    /// System B: `M = (l ||xbar|| + ||F_C(xbar)||)/eta`, `L = (1 + l)/eta`.
    pub fn growth_constants(&self) -> Result<(f64, f64)> {
        let xbar = self.problem.set().reference_point();
        let eta = self.eta;
        match &self.prox {
            None => {
                let q = self.problem.linear().norm();
                let m = (xbar.norm() + 2.0 * q / self.rho) / eta;
                let l = (2.0 * self.operator_norm / self.rho + 1.0) / eta;
                Ok((m, l))
            }
            Some(map) => {
                let ell = map.lipschitz();
                let fc = map.eval(&xbar, SUBPROBLEM_TOL)?;
                Ok(((ell * xbar.norm() + fc.norm()) / eta, (1.0 + ell) / eta))
            }
        }
    }
}

/// Sampled RK4 trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    /// `dist(x(t), C)` at each sample.
    pub distances: Vec<f64>,
    /// Max of `dist(x, C)` over every integration step, not only samples.
    pub invariance_violation: f64,
    pub steps: usize,
    pub started_outside: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn final_point(&self) -> &Vector {
        self.points
            .last()
            .expect("trajectories hold the initial state")
    }

    /// CSV with header `t,x1,...,xn,dist_to_C`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.points.first().map_or(0, |p| p.len());
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",dist_to_C");
        writeln!(out, "{header}")?;
        for ((t, x), d) in self.times.iter().zip(&self.points).zip(&self.distances) {
            write!(out, "{t}")?;
            for v in x.iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationOptions {
    pub step: f64,
    pub horizon: f64,
    /// Keep every `stride`-th state (the final state is always kept).
    pub stride: usize,
}

impl IntegrationOptions {
    pub fn new(step: f64, horizon: f64) -> Self {
        Self {
            step,
            horizon,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }
}

fn distance_in_place(field: &VectorField, x: &Vector, buf: &mut Vector) -> Result<f64> {
    let set = field.problem.set();
    if set.violation(x) <= 0.0 {
        return Ok(0.0);
    }
    buf.copy_from(x);
    project_in_place(set, buf)?;
    Ok(x.metric_distance(buf))
}

/// Classical fixed-step RK4 on `[0, horizon]`. The number of steps is
/// `ceil(horizon / step)`, with the step shrunk to land on the horizon.
pub fn integrate(field: &VectorField, x0: &Vector, opts: IntegrationOptions) -> Result<Trajectory> {
    if x0.len() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    if !(opts.step > 0.0 && opts.step.is_finite() && opts.horizon > 0.0 && opts.horizon.is_finite())
    {
        return Err(Error::InvalidConfig(format!(
            "step and horizon must be positive, got {} and {}",
            opts.step, opts.horizon
        )));
    }
    let n_steps = ((opts.horizon / opts.step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = opts.horizon / n_steps as f64;
    let stride = opts.stride.max(1);
    let n = x0.len();

    let mut x = x0.clone();
    let mut k1 = Vector::zeros(n);
    let mut k2 = Vector::zeros(n);
    let mut k3 = Vector::zeros(n);
    let mut k4 = Vector::zeros(n);
    let mut stage = Vector::zeros(n);
    let mut scratch = Vector::zeros(n);
    let mut warm = WarmStart::new();

    let d0 = distance_in_place(field, &x, &mut scratch)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        points: vec![x.clone()],
        distances: vec![d0],
        invariance_violation: d0,
        steps: 0,
        started_outside: !field.problem.set().contains(x0),
    };

    for step in 1..=n_steps {
        field.eval_into(&x, &mut k1, &mut scratch, &mut warm)?;
        stage.copy_from(&x);
        stage.axpy(0.5 * h, &k1, 1.0);
        field.eval_into(&stage, &mut k2, &mut scratch, &mut warm)?;
        stage.copy_from(&x);
        stage.axpy(0.5 * h, &k2, 1.0);
        field.eval_into(&stage, &mut k3, &mut scratch, &mut warm)?;
        stage.copy_from(&x);
        stage.axpy(h, &k3, 1.0);
        field.eval_into(&stage, &mut k4, &mut scratch, &mut warm)?;

        x.axpy(h / 6.0, &k1, 1.0);
        x.axpy(h / 3.0, &k2, 1.0);
        x.axpy(h / 3.0, &k3, 1.0);
        x.axpy(h / 6.0, &k4, 1.0);
        traj.steps = step;

        let t = step as f64 * h;
        if x.iter().any(|v| !v.is_finite()) {
            traj.times.push(t);
            traj.points.push(x.clone());
            traj.distances.push(f64::NAN);
            return Err(Error::NonFiniteState(Box::new(traj)));
        }
        let d = distance_in_place(field, &x, &mut scratch)?;
        traj.invariance_violation = traj.invariance_violation.max(d);
        if step % stride == 0 || step == n_steps {
            traj.times.push(t);
            traj.points.push(x.clone());
            traj.distances.push(d);
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzCheck {
    pub observed: f64,
    pub certified: f64,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.observed <= self.certified + 1e-9
    }
}

/// Largest difference quotient over all pairs of distinct samples.
pub fn check_field_lipschitz(field: &VectorField, samples: &[Vector]) -> Result<LipschitzCheck> {
    let values = samples
        .iter()
        .map(|x| field.eval(x))
        .collect::<Result<Vec<_>>>()?;
    let mut observed = 0.0f64;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dx = samples[i].metric_distance(&samples[j]);
            if dx > 0.0 {
                observed = observed.max(values[i].metric_distance(&values[j]) / dx);
            }
        }
    }
    Ok(LipschitzCheck {
        observed,
        certified: field.certified_lipschitz(),
    })
}

/// Difference quotients over the given pairs only.
pub fn check_field_lipschitz_pairs(
    field: &VectorField,
    pairs: &[(Vector, Vector)],
) -> Result<LipschitzCheck> {
    let mut observed = 0.0f64;
    for (x, y) in pairs {
        let dx = x.metric_distance(y);
        if dx > 0.0 {
            observed = observed.max(field.eval(x)?.metric_distance(&field.eval(y)?) / dx);
        }
    }
    Ok(LipschitzCheck {
        observed,
        certified: field.certified_lipschitz(),
    })
}

/// Largest `||field(x)|| - (M + L ||x||)` over the samples.
pub fn growth_slack(field: &VectorField, samples: &[Vector]) -> Result<f64> {
    let (m, l) = field.growth_constants()?;
    let mut worst = f64::NEG_INFINITY;
    for x in samples {
        worst = worst.max(field.eval(x)?.norm() - (m + l * x.norm()));
    }
    Ok(worst)
}

/// `||field(x)|| <= M + L ||x|| + 1e-9` at every sample.
pub fn check_growth_bound(field: &VectorField, samples: &[Vector]) -> Result<bool> {
    Ok(growth_slack(field, samples)? <= 1e-9)
}

/// Mean of the last `window` samples when they are pairwise within `tol`.
pub fn detect_limit(traj: &Trajectory, window: usize, tol: f64) -> Option<Vector> {
    if window == 0 || traj.len() < window {
        return None;
    }
    let tail = &traj.points[traj.len() - window..];
    for i in 0..tail.len() {
        for j in (i + 1)..tail.len() {
            if tail[i].metric_distance(&tail[j]) > tol {
                return None;
            }
        }
    }
    let mut mean = Vector::zeros(tail[0].len());
    for p in tail {
        mean += p;
    }
    Some(mean / window as f64)
}

/// `dist(x, C)`.
pub fn distance_to_set(field: &VectorField, x: &Vector) -> Result<f64> {
    Ok(x.metric_distance(&project_point(field.problem.set(), x)?))
}
