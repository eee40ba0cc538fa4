//! Seeded random instances and batch comparison of the solvers.
//!
//! The generator draws from `Xoshiro256PlusPlus` seeded through SplitMix64
//! (`seed_from_u64`), one stream per spec, instance after instance, so a
//! seed reproduces the exact same problems in any implementation of those
//! two generators. Per instance the draw order is: the `n x n` matrix
//! `R` row-major (a density draw precedes each entry when `density < 1`),
//! then `q`, then the set data.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dca::{kkt_residual, run_dca, RunOptions};
use crate::dynamics::{integrate, IntegrationOptions, SystemKind, VectorField};
use crate::error::{Error, Result};
use crate::model::{
    ConstraintKind, ConstraintSet, Matrix, QuadraticProblem, SolverConfig, Termination, Vector,
};
use crate::spectral::{choose_rho, power_iteration_extremes, Scheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub constraint_kind: ConstraintKind,
    pub seed: u64,
    pub count: usize,
    /// Entries of `R` are uniform on `[-scale, scale]`.
    pub scale: f64,
    /// Entries of `q` are uniform on `[-q_scale, q_scale]`.
    pub q_scale: f64,
    /// Probability that an entry of `R` is kept.
    pub density: f64,
    /// Shift `Q` by the midpoint of its extreme eigenvalue estimates.
    pub indefinite: bool,
    /// Random rows of a polyhedron, before the `-1 <= x <= 1` rows.
    pub constraints: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n: 5,
            constraint_kind: ConstraintKind::Box,
            seed: 42,
            count: 10,
            scale: 1.0,
            q_scale: 1.0,
            density: 1.0,
            indefinite: true,
            constraints: 5,
        }
    }
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.constraint_kind == ConstraintKind::UnitInterval && self.n != 1 {
            return Err(Error::InvalidConfig(
                "unit_interval instances need n = 1".into(),
            ));
        }
        if !(self.scale.is_finite()
            && self.scale > 0.0
            && self.q_scale.is_finite()
            && self.q_scale >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "scales must be finite and positive".into(),
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig("density must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Xoshiro256PlusPlus, half_width: f64) -> f64 {
    rng.gen_range(-1.0..=1.0) * half_width
}

fn generate_one(spec: &InstanceSpec, rng: &mut Xoshiro256PlusPlus) -> Result<QuadraticProblem> {
    let n = spec.n;
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let keep = spec.density >= 1.0 || rng.gen::<f64>() < spec.density;
            let v = uniform(rng, spec.scale);
            if keep {
                r[(i, j)] = v;
            }
        }
    }
    let mut hessian = (&r + r.transpose()) * 0.5;
    if spec.indefinite {
        let est = power_iteration_extremes(&hessian, 1e-12, 10_000);
        let mid = 0.5 * (est.lambda_min + est.lambda_max);
        for i in 0..n {
            hessian[(i, i)] -= mid;
        }
    }
    let linear = Vector::from_fn(n, |_, _| uniform(rng, spec.q_scale));
    let set = match spec.constraint_kind {
        ConstraintKind::Box => {
            ConstraintSet::boxed(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0))?
        }
        ConstraintKind::Ball => ConstraintSet::ball(Vector::zeros(n), (n as f64).sqrt())?,
        ConstraintKind::UnitInterval => ConstraintSet::UnitInterval,
        ConstraintKind::Polyhedron => {
            let feasible = Vector::from_fn(n, |_, _| uniform(rng, 0.5));
            let m = spec.constraints;
            let mut a = Matrix::zeros(m + 2 * n, n);
            let mut b = Vector::zeros(m + 2 * n);
            for k in 0..m {
                let mut row = Vector::from_fn(n, |_, _| uniform(rng, 1.0));
                let norm = row.norm();
                if norm == 0.0 {
                    row[0] = 1.0;
                } else {
                    row /= norm;
                }
                let slack = rng.gen_range(0.05..=0.5);
                b[k] = row.dot(&feasible) + slack;
                a.row_mut(k).copy_from(&row.transpose());
            }
            for i in 0..n {
                a[(m + 2 * i, i)] = 1.0;
                a[(m + 2 * i + 1, i)] = -1.0;
                b[m + 2 * i] = 1.0;
                b[m + 2 * i + 1] = 1.0;
            }
            ConstraintSet::polyhedron(a, b, feasible)?
        }
    };
    QuadraticProblem::new(hessian, linear, set)
}

/// Deterministic instance stream for `spec`.
pub fn generate_instances(spec: &InstanceSpec) -> Result<Vec<QuadraticProblem>> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| generate_one(spec, &mut rng))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "a")]
    SchemeA,
    #[serde(rename = "b")]
    SchemeB,
    #[serde(rename = "ode-a")]
    OdeA,
    #[serde(rename = "ode-b")]
    OdeB,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::SchemeA, Self::SchemeB, Self::OdeA, Self::OdeB];

    pub fn name(self) -> &'static str {
        match self {
            Self::SchemeA => "a",
            Self::SchemeB => "b",
            Self::OdeA => "ode-a",
            Self::OdeB => "ode-b",
        }
    }

    /// The decomposition whose `rho` condition the method relies on.
    pub fn scheme(self) -> Scheme {
        match self {
            Self::SchemeA | Self::OdeA => Scheme::A,
            Self::SchemeB | Self::OdeB => Scheme::B,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected a, b, ode-a or ode-b)"))
    }
}

/// Final point and bookkeeping of one method on one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutcome {
    pub point: Vector,
    /// Iterations for the schemes, RK4 steps for the flows.
    pub iterations: usize,
    pub residual: f64,
    pub rate: Option<f64>,
    pub termination: Termination,
}

/// Runs `method` from `x0` with `config` (its `rho` is used as given).
/// Flows stop at `config.horizon`; their termination is `residual_tol`
/// when the final point meets the tolerance and `max_time` otherwise.
pub fn run_method(
    p: &QuadraticProblem,
    method: Method,
    config: &SolverConfig,
    x0: &Vector,
    options: RunOptions,
) -> Result<MethodOutcome> {
    match method {
        Method::SchemeA | Method::SchemeB => {
            let run = run_dca(p, method.scheme(), config, x0, options)?;
            Ok(MethodOutcome {
                iterations: run.iterations(),
                residual: run.final_residual(),
                rate: run.rate_estimate,
                termination: run.trace.termination,
                point: run.final_point,
            })
        }
        Method::OdeA | Method::OdeB => {
            config.validate()?;
            let kind = if method == Method::OdeA {
                SystemKind::A
            } else {
                SystemKind::B
            };
            let field = VectorField::new(kind, p.clone(), config.rho, config.eta)?;
            let traj = integrate(
                &field,
                x0,
                IntegrationOptions::new(config.step, config.horizon).with_stride(usize::MAX),
            )?;
            let point = traj.final_point().clone();
            let residual = kkt_residual(p, &point)?.value();
            Ok(MethodOutcome {
                iterations: traj.steps,
                residual,
                rate: None,
                termination: if residual <= config.residual_tol {
                    Termination::ResidualTol
                } else {
                    Termination::MaxTime
                },
                point,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// `rho` is overwritten per instance by [`choose_rho`].
    pub solver: SolverConfig,
    /// Absolute `rho` margin; `None` uses the relative default.
    pub margin: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: usize,
    pub method: Method,
    pub rho: f64,
    pub iterations: usize,
    pub time_s: f64,
    /// Recomputed from the returned point, not taken from the solver.
    pub residual: f64,
    pub rate: Option<f64>,
    pub termination: Option<Termination>,
    pub error: Option<String>,
}

impl BenchRow {
    pub fn converged(&self, tol: f64) -> bool {
        self.error.is_none() && self.residual <= tol
    }

    /// Same row with the timing zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            time_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub converged: usize,
    pub median_iterations: Option<f64>,
    pub median_time_s: Option<f64>,
    pub median_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub residual_tol: f64,
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<MethodSummary>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let k = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[k]
    } else {
        0.5 * (xs[k - 1] + xs[k])
    })
}

fn bench_one(index: usize, p: &QuadraticProblem, method: Method, config: &BenchConfig) -> BenchRow {
    let rho = choose_rho(p.hessian(), method.scheme(), config.margin);
    let solver = config.solver.clone().with_rho(rho);
    let x0 = p.set().reference_point();
    let start = Instant::now();
    let outcome = run_method(p, method, &solver, &x0, RunOptions::default());
    let time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => BenchRow {
            instance: index,
            method,
            rho,
            iterations: o.iterations,
            time_s,
            residual: kkt_residual(p, &o.point).map_or(f64::INFINITY, |r| r.value()),
            rate: o.rate,
            termination: Some(o.termination),
            error: None,
        },
        Err(e) => BenchRow {
            instance: index,
            method,
            rho,
            iterations: 0,
            time_s,
            residual: f64::INFINITY,
            rate: None,
            termination: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every method on every problem, in parallel over instances.
/// Failures become rows with an error message; rows are ordered by
/// instance, then by the order of `methods`.
pub fn run_benchmark_on(
    problems: &[QuadraticProblem],
    methods: &[Method],
    config: &BenchConfig,
) -> BenchReport {
    let rows: Vec<BenchRow> = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            methods
                .iter()
                .map(|&m| bench_one(i, p, m, config))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let tol = config.solver.residual_tol;
    let summaries = methods
        .iter()
        .map(|&method| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&&BenchRow> = mine.iter().filter(|r| r.error.is_none()).collect();
            MethodSummary {
                method,
                runs: mine.len(),
                converged: mine.iter().filter(|r| r.converged(tol)).count(),
                median_iterations: median(ok.iter().map(|r| r.iterations as f64).collect()),
                median_time_s: median(ok.iter().map(|r| r.time_s).collect()),
                median_residual: median(ok.iter().map(|r| r.residual).collect()),
            }
        })
        .collect();
    BenchReport {
        residual_tol: tol,
        rows,
        summaries,
    }
}

pub fn run_benchmark(
    spec: &InstanceSpec,
    methods: &[Method],
    config: &BenchConfig,
) -> Result<BenchReport> {
    Ok(run_benchmark_on(
        &generate_instances(spec)?,
        methods,
        config,
    ))
}

impl BenchReport {
    /// `instance,scheme,iters,time_s,residual,rate`; failed runs have an
    /// empty residual and the rate is empty when unavailable.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "instance,scheme,iters,time_s,residual,rate")?;
        for r in &self.rows {
            let residual = if r.error.is_none() {
                format!("{:e}", r.residual)
            } else {
                String::new()
            };
            let rate = r.rate.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.instance, r.method, r.iterations, r.time_s, residual, rate
            )?;
        }
        Ok(())
    }

    /// Summary JSON: tolerance and per-method medians.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            residual_tol: f64,
            methods: &'a [MethodSummary],
        }
        serde_json::to_string_pretty(&Summary {
            residual_tol: self.residual_tol,
            methods: &self.summaries,
        })
        .expect("summaries always serialize")
    }

    /// Rows with timings removed.
    pub fn deterministic_rows(&self) -> Vec<BenchRow> {
        self.rows.iter().map(BenchRow::without_timing).collect()
    }
}
