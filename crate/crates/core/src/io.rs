//! JSON problem and result files.
//!
//! A problem file looks like
//!
//! ```json
//! { "n": 2, "Q": [[0, 2], [2, 0]], "q": [-1, 0],
//!   "C": { "type": "box", "lo": [-1, -1], "hi": [1, 1] } }
//! ```
//!
//! with `C` one of `box {lo, hi}`, `ball {a, r}`,
//! `polyhedron {A, b, feasible_point}`, or `unit_interval`. An optional
//! `"kind": "avi"` marks a (possibly nonsymmetric) affine variational
//! inequality instead of a quadratic program.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AviProblem, ConstraintSet, Matrix, QuadraticProblem, Termination, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetRecord {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        a: Vec<f64>,
        r: f64,
    },
    Polyhedron {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        feasible_point: Vec<f64>,
    },
    UnitInterval,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Qp,
    Avi,
}

impl ProblemKind {
    fn is_qp(&self) -> bool {
        *self == Self::Qp
    }
}

/// On-disk layout of a problem file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    #[serde(default, skip_serializing_if = "ProblemKind::is_qp")]
    pub kind: ProblemKind,
    pub n: usize,
    #[serde(rename = "Q")]
    pub q_matrix: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    #[serde(rename = "C")]
    pub set: SetRecord,
}

/// A validated problem read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Avi(AviProblem),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(p) => p.dim(),
            Self::Avi(p) => p.dim(),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Matrix> {
    for row in rows {
        if row.len() != ncols {
            return Err(Error::Dimension {
                expected: ncols,
                got: row.len(),
            });
        }
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SetRecord {
    pub fn to_set(&self, n: usize) -> Result<ConstraintSet> {
        match self {
            Self::Box { lo, hi } => {
                ConstraintSet::boxed(Vector::from_row_slice(lo), Vector::from_row_slice(hi))
            }
            Self::Ball { a, r } => ConstraintSet::ball(Vector::from_row_slice(a), *r),
            Self::Polyhedron {
                a,
                b,
                feasible_point,
            } => ConstraintSet::polyhedron(
                matrix_from_rows(a, n)?,
                Vector::from_row_slice(b),
                Vector::from_row_slice(feasible_point),
            ),
            Self::UnitInterval => Ok(ConstraintSet::UnitInterval),
        }
    }

    pub fn from_set(set: &ConstraintSet) -> Self {
        match set {
            ConstraintSet::Box(s) => Self::Box {
                lo: s.lo().iter().copied().collect(),
                hi: s.hi().iter().copied().collect(),
            },
            ConstraintSet::Ball(s) => Self::Ball {
                a: s.center().iter().copied().collect(),
                r: s.radius(),
            },
            ConstraintSet::Polyhedron(p) => Self::Polyhedron {
                a: rows_from_matrix(p.a()),
                b: p.b().iter().copied().collect(),
                feasible_point: p.feasible_point().iter().copied().collect(),
            },
            ConstraintSet::UnitInterval => Self::UnitInterval,
        }
    }
}

impl ProblemRecord {
    pub fn into_problem(self) -> Result<Problem> {
        let n = self.n;
        if self.q_matrix.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.q_matrix.len(),
            });
        }
        let m = matrix_from_rows(&self.q_matrix, n)?;
        let q = Vector::from_vec(self.q);
        let set = self.set.to_set(n)?;
        match self.kind {
            ProblemKind::Qp => QuadraticProblem::new(m, q, set).map(Problem::Quadratic),
            ProblemKind::Avi => AviProblem::new(m, q, set).map(Problem::Avi),
        }
    }

    pub fn from_problem(problem: &Problem) -> Self {
        let (kind, m, q, set) = match problem {
            Problem::Quadratic(p) => (ProblemKind::Qp, p.hessian(), p.linear(), p.set()),
            Problem::Avi(p) => (ProblemKind::Avi, p.matrix(), p.linear(), p.set()),
        };
        Self {
            kind,
            n: q.len(),
            q_matrix: rows_from_matrix(m),
            q: q.iter().copied().collect(),
            set: SetRecord::from_set(set),
        }
    }
}

pub fn parse_problem(json: &str) -> Result<Problem> {
    serde_json::from_str::<ProblemRecord>(json)?.into_problem()
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem> {
    parse_problem(&fs::read_to_string(path)?)
}

pub fn problem_to_json(problem: &Problem) -> String {
    serde_json::to_string_pretty(&ProblemRecord::from_problem(problem))
        .expect("problem records always serialize")
}

pub fn save_problem(problem: &Problem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, problem_to_json(problem) + "\n")?;
    Ok(())
}

/// Summary of a finished solve, written as a result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub method: String,
    pub point: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl SolveResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results always serialize")
    }
}
