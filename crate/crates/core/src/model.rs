//! Problem data, constraint sets, solver configuration, and traces.
//!
//! Every type here is validated at construction and immutable afterwards, so
//! the solver modules can rely on dimensions agreeing and sets being nonempty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Entrywise tolerance on `|Q - Q^T|` for quadratic problems.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Constraint violations up to this size count as feasible.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Largest entrywise asymmetry `max |M_ij - M_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// The box `{x : lo <= x <= hi}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    lo: Vector,
    hi: Vector,
}

impl BoxSet {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::InvalidSet("box of dimension zero".into()));
        }
        check_finite("box bounds", lo.as_slice())?;
        check_finite("box bounds", hi.as_slice())?;
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::InvalidSet(format!(
                "box lower bound exceeds upper bound at index {i}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }
}

/// The closed ball `{x : ||x - center|| <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSet {
    center: Vector,
    radius: f64,
}

impl BallSet {
    pub fn new(center: Vector, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidSet("ball of dimension zero".into()));
        }
        check_finite("ball center", center.as_slice())?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidSet(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// The polyhedron `{x : A x <= b}` together with a certified feasible point.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    a: Matrix,
    b: Vector,
    feasible_point: Vector,
}

impl Polyhedron {
    pub fn new(a: Matrix, b: Vector, feasible_point: Vector) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        check_dim(a.ncols(), feasible_point.len())?;
        if a.ncols() == 0 {
            return Err(Error::InvalidSet("polyhedron of dimension zero".into()));
        }
        check_finite("polyhedron matrix", a.as_slice())?;
        check_finite("polyhedron rhs", b.as_slice())?;
        check_finite("feasible point", feasible_point.as_slice())?;
        for i in 0..a.nrows() {
            if a.row(i).iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidSet(format!("constraint row {i} is zero")));
            }
        }
        let poly = Self {
            a,
            b,
            feasible_point,
        };
        let violation = poly.max_violation(&poly.feasible_point);
        if violation > MEMBERSHIP_TOL {
            return Err(Error::InvalidSet(format!(
                "stored feasible point violates A x <= b by {violation:e}"
            )));
        }
        Ok(poly)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn feasible_point(&self) -> &Vector {
        &self.feasible_point
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// `max_i (a_i x - b_i)`, clipped below at zero.
    pub fn max_violation(&self, x: &Vector) -> f64 {
        let ax = &self.a * x;
        ax.iter()
            .zip(self.b.iter())
            .map(|(l, r)| l - r)
            .fold(0.0, f64::max)
    }
}

/// A nonempty closed convex set.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintSet {
    Box(BoxSet),
    Ball(BallSet),
    Polyhedron(Polyhedron),
    /// The segment `[-1, 1]` of the real line.
    UnitInterval,
}

impl ConstraintSet {
    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        BoxSet::new(lo, hi).map(Self::Box)
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        BallSet::new(center, radius).map(Self::Ball)
    }

    pub fn polyhedron(a: Matrix, b: Vector, feasible_point: Vector) -> Result<Self> {
        Polyhedron::new(a, b, feasible_point).map(Self::Polyhedron)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box(s) => s.lo.len(),
            Self::Ball(s) => s.center.len(),
            Self::Polyhedron(p) => p.a.ncols(),
            Self::UnitInterval => 1,
        }
    }

    /// Variant-specific size of the constraint violation at `x` (zero inside).
    pub fn violation(&self, x: &Vector) -> f64 {
        match self {
            Self::Box(s) => x
                .iter()
                .zip(s.lo.iter().zip(s.hi.iter()))
                .map(|(v, (lo, hi))| (lo - v).max(v - hi))
                .fold(0.0, f64::max),
            Self::Ball(s) => ((x - &s.center).norm() - s.radius).max(0.0),
            Self::Polyhedron(p) => p.max_violation(x),
            Self::UnitInterval => (x[0].abs() - 1.0).max(0.0),
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim() && self.violation(x) <= MEMBERSHIP_TOL
    }

    /// A fixed point of the set: the stored feasible point for a polyhedron,
    /// the center of a ball, the midpoint of a box or of `[-1, 1]`.
    pub fn reference_point(&self) -> Vector {
        match self {
            Self::Box(s) => (&s.lo + &s.hi) * 0.5,
            Self::Ball(s) => s.center.clone(),
            Self::Polyhedron(p) => p.feasible_point.clone(),
            Self::UnitInterval => Vector::zeros(1),
        }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Self::Box(_) => ConstraintKind::Box,
            Self::Ball(_) => ConstraintKind::Ball,
            Self::Polyhedron(_) => ConstraintKind::Polyhedron,
            Self::UnitInterval => ConstraintKind::UnitInterval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Box,
    Ball,
    Polyhedron,
    UnitInterval,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Box => "box",
            Self::Ball => "ball",
            Self::Polyhedron => "polyhedron",
            Self::UnitInterval => "unit_interval",
        })
    }
}

impl std::str::FromStr for ConstraintKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "box" => Ok(Self::Box),
            "ball" => Ok(Self::Ball),
            "polyhedron" => Ok(Self::Polyhedron),
            "unit_interval" | "unit-interval" => Ok(Self::UnitInterval),
            other => Err(format!("unknown constraint kind `{other}`")),
        }
    }
}

/// `min { 1/2 x^T Q x + q^T x : x in C }` with symmetric `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProblem {
    hessian: Matrix,
    linear: Vector,
    set: ConstraintSet,
}

impl QuadraticProblem {
    pub fn new(hessian: Matrix, linear: Vector, set: ConstraintSet) -> Result<Self> {
        check_operator_dims(&hessian, &linear, &set)?;
        let asym = asymmetry(&hessian);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self {
            hessian,
            linear,
            set,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn linear(&self) -> &Vector {
        &self.linear
    }

    pub fn set(&self) -> &ConstraintSet {
        &self.set
    }

    /// `1/2 x^T Q x + q^T x`.
    pub fn objective_value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x))
    }

    /// `Q x + q`.
    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.hessian * x + &self.linear
    }

    pub fn to_avi(&self) -> AviProblem {
        AviProblem {
            matrix: self.hessian.clone(),
            linear: self.linear.clone(),
            set: self.set.clone(),
        }
    }
}

/// Find `x in C` with `<M x + q, y - x> >= 0` for all `y in C`; `M` is arbitrary.
#[derive(Clone, Debug, PartialEq)]
pub struct AviProblem {
    matrix: Matrix,
    linear: Vector,
    set: ConstraintSet,
}

impl AviProblem {
    pub fn new(matrix: Matrix, linear: Vector, set: ConstraintSet) -> Result<Self> {
        check_operator_dims(&matrix, &linear, &set)?;
        Ok(Self {
            matrix,
            linear,
            set,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn linear(&self) -> &Vector {
        &self.linear
    }

    pub fn set(&self) -> &ConstraintSet {
        &self.set
    }

    pub fn is_symmetric(&self) -> bool {
        asymmetry(&self.matrix) <= SYMMETRY_TOL
    }

    /// `M x + q`.
    pub fn operator(&self, x: &Vector) -> Vector {
        &self.matrix * x + &self.linear
    }
}

impl From<QuadraticProblem> for AviProblem {
    fn from(p: QuadraticProblem) -> Self {
        Self {
            matrix: p.hessian,
            linear: p.linear,
            set: p.set,
        }
    }
}

fn check_operator_dims(m: &Matrix, q: &Vector, set: &ConstraintSet) -> Result<()> {
    let n = q.len();
    if n == 0 {
        return Err(Error::InvalidSet("problem of dimension zero".into()));
    }
    check_dim(n, m.nrows())?;
    check_dim(n, m.ncols())?;
    check_dim(n, set.dim())?;
    check_finite("problem matrix", m.as_slice())?;
    check_finite("linear term", q.as_slice())?;
    Ok(())
}

/// Parameters shared by the iteration schemes and the integrators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub eta: f64,
    /// Fixed RK4 step.
    pub step: f64,
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Integration end time.
    pub horizon: f64,
    /// Tolerance for the strongly convex subproblem of scheme B.
    pub inner_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eta: 1.0,
            step: 1e-3,
            residual_tol: 1e-8,
            max_iter: 100_000,
            horizon: 50.0,
            inner_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("eta", self.eta),
            ("step", self.step),
            ("residual_tol", self.residual_tol),
            ("horizon", self.horizon),
            ("inner_tol", self.inner_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ResidualTol,
    MaxIter,
    MaxTime,
    DivergenceGuard,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ResidualTol => "residual_tol",
            Self::MaxIter => "max_iter",
            Self::MaxTime => "max_time",
            Self::DivergenceGuard => "divergence_guard",
        })
    }
}

/// History of an iterative solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveTrace {
    pub iterates: Vec<Vector>,
    /// Time stamps, present for sampled trajectories.
    pub times: Option<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub termination: Termination,
    pub wall_time: f64,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last_point(&self) -> Option<&Vector> {
        self.iterates.last()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_problem(q: &[f64], c: &[f64], x: &[f64]) -> f64 {
        let n = c.len();
        let p = QuadraticProblem::new(
            Matrix::from_row_slice(n, n, q),
            Vector::from_row_slice(c),
            ConstraintSet::boxed(Vector::from_element(n, -5.0), Vector::from_element(n, 5.0))
                .unwrap(),
        )
        .unwrap();
        p.objective_value(&Vector::from_row_slice(x)).unwrap()
    }

    #[test]
    fn objective_values() {
        assert_eq!(unit_problem(&[-1.0], &[0.0], &[1.0]), -0.5);
        assert_eq!(
            unit_problem(&[2.0, 0.0, 0.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]),
            0.0
        );
        // 1/2 (x1 (2 x2) + x2 (2 x1)) - x1 at (1, 1) expanded term by term
        let brute = 0.5 * (1.0 * (0.0 * 1.0 + 2.0 * 1.0) + 1.0 * (2.0 * 1.0 + 0.0 * 1.0)) - 1.0;
        let v = unit_problem(&[0.0, 2.0, 2.0, 0.0], &[-1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(v, brute);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn objective_rejects_wrong_dimension() {
        let p = QuadraticProblem::new(
            Matrix::from_element(1, 1, -1.0),
            Vector::zeros(1),
            ConstraintSet::UnitInterval,
        )
        .unwrap();
        assert!(matches!(
            p.objective_value(&Vector::zeros(2)),
            Err(Error::Dimension {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let q = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0 + 1e-9, 0.0]);
        let set = ConstraintSet::ball(Vector::zeros(2), 1.0).unwrap();
        assert!(matches!(
            QuadraticProblem::new(q.clone(), Vector::zeros(2), set.clone()),
            Err(Error::NotSymmetric { .. })
        ));
        // the same data is a valid AVI
        assert!(AviProblem::new(q, Vector::zeros(2), set).is_ok());

        let nearly = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0 + 1e-13, 0.0]);
        let set = ConstraintSet::ball(Vector::zeros(2), 1.0).unwrap();
        assert!(QuadraticProblem::new(nearly, Vector::zeros(2), set).is_ok());
    }

    #[test]
    fn set_invariants() {
        assert!(ConstraintSet::boxed(Vector::from_element(1, 1.0), Vector::zeros(1)).is_err());
        assert!(ConstraintSet::ball(Vector::zeros(2), 0.0).is_err());
        assert!(ConstraintSet::ball(Vector::zeros(2), -1.0).is_err());
        // x <= -1 and x >= 0 with a bogus "feasible" point
        let a = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = Vector::from_row_slice(&[-1.0, 0.0]);
        assert!(ConstraintSet::polyhedron(a, b, Vector::zeros(1)).is_err());
    }

    #[test]
    fn dimension_agreement() {
        let set = ConstraintSet::UnitInterval;
        assert!(QuadraticProblem::new(Matrix::identity(2, 2), Vector::zeros(2), set).is_err());
    }

    #[test]
    fn reference_points_are_members() {
        let sets = [
            ConstraintSet::boxed(
                Vector::from_row_slice(&[0.0]),
                Vector::from_row_slice(&[0.5]),
            )
            .unwrap(),
            ConstraintSet::ball(Vector::from_row_slice(&[1.0, 2.0]), 0.5).unwrap(),
            ConstraintSet::UnitInterval,
        ];
        for s in &sets {
            assert!(s.contains(&s.reference_point()));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig::default().with_rho(0.0).validate().is_err());
        let cfg = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
