//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage errors (including an uncertified
//! `rho` without `--unsafe-rho`), 1 when a solver or I/O step fails.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    generate_instances, run_benchmark, run_method, BenchConfig, InstanceSpec, Method,
};
use crate::dca::{avi_residual, RunOptions};
use crate::dynamics::{integrate, IntegrationOptions, SystemKind, VectorField};
use crate::error::{Error, Result};
use crate::io::{load_problem, problem_to_json, save_problem, Problem, SolveResult};
use crate::model::{ConstraintKind, Matrix, SolverConfig, Termination, Vector};
use crate::scalar::{
    classify_spm, cone_membership_map, exact_trajectory, trajectory_limit_is_kkt, ScalarProblem,
};
use crate::spectral::{certify_rho, choose_rho, rho_threshold, symmetric_part};

#[derive(Debug, Parser)]
#[command(
    name = "iqp-flow",
    version,
    about = "Indefinite QPs via DCA and projected dynamical systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file with a DCA scheme or by integrating a flow.
    Solve(SolveArgs),
    /// Classify x -> alpha x + beta on [-1, 1].
    Classify {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
    },
    /// Write the (alpha, beta) cone membership grid as CSV.
    ConeMap(ConeMapArgs),
    /// Exact piecewise trajectory of the scalar flow.
    Traj1d(Traj1dArgs),
    /// Run methods on generated instances.
    Bench(BenchArgs),
    /// Write generated instances as problem files.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// a, b, ode-a or ode-b.
    #[arg(long)]
    pub method: Method,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Starting point, comma separated (defaults to the set's reference point).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Write the result JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trajectory CSV for ode methods.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Keep every k-th trajectory sample.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Fixed rho; chosen from the spectral bounds when absent.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Absolute margin above the rho threshold.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// RK4 step.
    #[arg(long = "step", default_value_t = 1e-3)]
    pub step: f64,
    /// Integration horizon.
    #[arg(long = "horizon", default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Run even if rho is not certified; no convergence claim is made.
    #[arg(long)]
    pub unsafe_rho: bool,
}

impl ConfigArgs {
    fn solver(&self, rho: f64) -> SolverConfig {
        SolverConfig {
            rho,
            eta: self.eta,
            step: self.step,
            residual_tol: self.tol,
            max_iter: self.max_iter,
            horizon: self.horizon,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ConeMapArgs {
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Traj1dArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: f64,
    /// Only segments starting before this time are written.
    #[arg(long = "horizon", short = 'T')]
    pub horizon: Option<f64>,
    /// Segment CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// box, ball, polyhedron or unit_interval.
    #[arg(long, default_value_t = ConstraintKind::Box)]
    pub kind: ConstraintKind,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Keep Q as drawn instead of centring its spectrum.
    #[arg(long)]
    pub no_shift: bool,
    /// Random polyhedron rows.
    #[arg(long, default_value_t = 5)]
    pub constraints: usize,
}

impl SpecArgs {
    fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            n: self.n,
            constraint_kind: self.kind,
            seed: self.seed,
            count: self.count,
            scale: self.scale,
            q_scale: self.q_scale,
            density: self.density,
            indefinite: !self.no_shift,
            constraints: self.constraints,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_delimiter = ',', default_value = "a,b")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long = "step", default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long = "horizon", default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Report CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON path.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Output directory for `instance_NNN.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::RhoNotCertified { .. }
                | Error::InvalidConfig(_)
                | Error::StartOutside { .. }
                | Error::Dimension { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn write_or_print(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Solve(args) => solve(args, out, err),
        Command::Classify { alpha, beta } => {
            let verdict = classify_spm(ScalarProblem::new(alpha, beta)?);
            writeln!(out, "{verdict}")?;
            Ok(())
        }
        Command::ConeMap(a) => {
            let map = cone_membership_map(
                (a.alpha_min, a.alpha_max),
                (a.beta_min, a.beta_max),
                a.resolution,
            )?;
            let text = csv_string(|w| map.write_csv(w))?;
            write_or_print(&a.out, &text, out)
        }
        Command::Traj1d(a) => {
            let sp = ScalarProblem::new(a.alpha, a.beta)?;
            let mut traj = exact_trajectory(sp, a.rho, a.eta, a.x0)?;
            if let Some(t) = a.horizon {
                traj.segments.retain(|s| s.t_start < t);
            }
            let check = trajectory_limit_is_kkt(sp, a.rho, a.eta, a.x0)?;
            if !check.hypotheses_hold {
                writeln!(
                    err,
                    "advisory: alpha > 0 with rho < alpha; convergence is not guaranteed"
                )?;
            }
            let text = csv_string(|w| traj.write_segments_csv(w))?;
            write_or_print(&a.out, &text, out)?;
            if a.out.is_some() {
                writeln!(out, "limit={} kkt={}", check.limit, check.is_kkt)?;
            }
            Ok(())
        }
        Command::Bench(a) => {
            let config = BenchConfig {
                solver: SolverConfig {
                    eta: a.eta,
                    step: a.step,
                    horizon: a.horizon,
                    residual_tol: a.tol,
                    max_iter: a.max_iter,
                    ..SolverConfig::default()
                },
                margin: a.margin,
            };
            config.solver.validate()?;
            let report = run_benchmark(&a.spec.spec(), &a.methods, &config)?;
            let text = csv_string(|w| report.write_csv(w))?;
            write_or_print(&a.out, &text, out)?;
            let summary = report.summary_json();
            match &a.summary {
                Some(p) => fs::write(p, summary + "\n")?,
                None if a.out.is_some() => writeln!(out, "{summary}")?,
                None => {}
            }
            Ok(())
        }
        Command::Gen(a) => {
            let problems = generate_instances(&a.spec.spec())?;
            fs::create_dir_all(&a.out)?;
            for (i, p) in problems.into_iter().enumerate() {
                let path = a.out.join(format!("instance_{i:03}.json"));
                save_problem(&Problem::Quadratic(p), &path)?;
                writeln!(out, "{}", path.display())?;
            }
            Ok(())
        }
    }
}

fn solve(args: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let problem = load_problem(&args.problem)?;
    let (matrix, set) = match &problem {
        Problem::Quadratic(p) => (p.hessian().clone(), p.set().clone()),
        Problem::Avi(p) => (symmetric_part(p.matrix()), p.set().clone()),
    };
    let scheme = args.method.scheme();
    let rho = args
        .config
        .rho
        .unwrap_or_else(|| choose_rho(&matrix, scheme, args.config.margin));
    if !certify_rho(&matrix, scheme, rho) {
        if !args.config.unsafe_rho {
            return Err(Error::RhoNotCertified {
                rho,
                scheme: scheme.letter(),
                bound: rho_threshold(&matrix, scheme),
            });
        }
        writeln!(
            err,
            "advisory: rho = {rho} is not certified for scheme {scheme}; results carry no convergence guarantee"
        )?;
    }
    let x0 = match &args.x0 {
        Some(v) => Vector::from_row_slice(v),
        None => set.reference_point(),
    };
    let config = args.config.solver(rho);
    let options = RunOptions {
        unsafe_rho: args.config.unsafe_rho,
    };

    let result = match (&problem, args.method, &args.trajectory) {
        (Problem::Quadratic(p), _, None) => {
            let o = run_method(p, args.method, &config, &x0, options)?;
            SolveResult {
                method: args.method.to_string(),
                point: o.point.iter().copied().collect(),
                residual: o.residual,
                iterations: o.iterations,
                termination: o.termination,
            }
        }
        (_, Method::SchemeA | Method::SchemeB, _) if matches!(problem, Problem::Avi(_)) => {
            return Err(Error::InvalidConfig(
                "schemes a and b need a quadratic program; use ode-a or ode-b".into(),
            ))
        }
        _ => integrate_problem(&problem, &args, &config, &x0)?,
    };
    let json = result.to_json();
    writeln!(out, "{json}")?;
    if let Some(path) = &args.out {
        fs::write(path, json + "\n")?;
    }
    Ok(())
}

/// Flows for AVI files, or any flow whose trajectory is requested.
fn integrate_problem(
    problem: &Problem,
    args: &SolveArgs,
    config: &SolverConfig,
    x0: &Vector,
) -> Result<SolveResult> {
    let avi = match problem {
        Problem::Quadratic(p) => p.to_avi(),
        Problem::Avi(p) => p.clone(),
    };
    let kind = match args.method {
        Method::OdeA => SystemKind::A,
        Method::OdeB => SystemKind::B,
        _ => {
            return Err(Error::InvalidConfig(
                "--trajectory is only available for ode-a and ode-b".into(),
            ))
        }
    };
    config.validate()?;
    let field = VectorField::new(kind, avi.clone(), config.rho, config.eta)?;
    let traj = integrate(
        &field,
        x0,
        IntegrationOptions::new(config.step, config.horizon).with_stride(args.stride),
    )?;
    if let Some(path) = &args.trajectory {
        fs::write(path, csv_string(|w| traj.write_csv(w))?)?;
    }
    let point = traj.final_point().clone();
    let residual = avi_residual(&avi, &point)?;
    Ok(SolveResult {
        method: args.method.to_string(),
        point: point.iter().copied().collect(),
        residual,
        iterations: traj.steps,
        termination: if residual <= config.residual_tol {
            Termination::ResidualTol
        } else {
            Termination::MaxTime
        },
    })
}

/// Problem JSON for a 1D `min alpha x^2/2 + beta x` over `[-1, 1]`.
pub fn scalar_problem_json(alpha: f64, beta: f64) -> String {
    let p = crate::model::QuadraticProblem::new(
        Matrix::from_element(1, 1, alpha),
        Vector::from_element(1, beta),
        crate::model::ConstraintSet::UnitInterval,
    )
    .expect("1x1 matrices are symmetric");
    problem_to_json(&Problem::Quadratic(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = dispatch(
            std::iter::once("iqp-flow").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn classify_prints_verdict() {
        let (code, out, _) = call(&["classify", "--alpha", "-1", "--beta", "2"]);
        assert_eq!(code, 0);
        assert_eq!(out, "strongly_pseudomonotone gamma=0.5\n");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(call(&["classify", "--alpha", "1"]).0, 2);
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(
            call(&["solve", "--problem", "x.json", "--method", "c"]).0,
            2
        );
    }

    #[test]
    fn solve_scalar_instance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        fs::write(&path, scalar_problem_json(-1.0, 0.0)).unwrap();
        let p = path.to_str().unwrap();
        for (x0, expected) in [("0.5", 1.0), ("-0.5", -1.0), ("0", 0.0)] {
            let (code, out, err) = call(&["solve", "--problem", p, "--method", "a", "--x0", x0]);
            assert_eq!(code, 0, "{err}");
            let r: SolveResult = serde_json::from_str(&out).unwrap();
            assert_eq!(r.point, vec![expected]);
            assert!(r.residual <= 1e-8);
        }
    }

    #[test]
    fn uncertified_rho_needs_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        fs::write(&path, scalar_problem_json(-1.0, 0.0)).unwrap();
        let p = path.to_str().unwrap();
        let (code, _, err) = call(&["solve", "--problem", p, "--method", "b", "--rho", "0.5"]);
        assert_eq!(code, 2);
        assert!(err.contains("not certified"));
        // scheme A with rho below the threshold runs with an advisory
        fs::write(&path, scalar_problem_json(2.0, 0.0)).unwrap();
        let (code, _, err) = call(&[
            "solve",
            "--problem",
            p,
            "--method",
            "a",
            "--rho",
            "0.5",
            "--max-iter",
            "10",
            "--unsafe-rho",
        ]);
        assert_eq!(code, 0);
        assert!(err.contains("advisory"));
    }

    #[test]
    fn missing_file_is_failure() {
        let (code, _, _) = call(&["solve", "--problem", "/nonexistent/p.json", "--method", "a"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn ode_solve_writes_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let csv = dir.path().join("t.csv");
        fs::write(&path, scalar_problem_json(-1.0, 0.0)).unwrap();
        let (code, out, err) = call(&[
            "solve",
            "--problem",
            path.to_str().unwrap(),
            "--method",
            "ode-a",
            "--rho",
            "2",
            "--x0",
            "-0.9",
            "--horizon",
            "20",
            "--trajectory",
            csv.to_str().unwrap(),
            "--stride",
            "1000",
        ]);
        assert_eq!(code, 0, "{err}");
        let r: SolveResult = serde_json::from_str(&out).unwrap();
        assert!((r.point[0] + 1.0).abs() <= 1e-6);
        let text = fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("t,x1,dist_to_C\n"));
        assert_eq!(text.lines().count(), 22);
    }

    #[test]
    fn traj1d_and_cone_map() {
        let (code, out, _) = call(&[
            "traj1d", "--alpha", "0", "--beta", "1", "--rho", "2", "--x0", "0.5",
        ]);
        assert_eq!(code, 0);
        assert_eq!(out, "t_start,t_end,region,limit\n0,2,M,-1\n2,inf,L,-1\n");
        let (code, out, _) = call(&["cone-map", "--resolution", "3"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 10);
        let (_, _, err) = call(&[
            "traj1d", "--alpha", "2", "--beta", "1", "--rho", "1", "--x0", "1",
        ]);
        assert!(err.contains("advisory"));
    }

    #[test]
    fn gen_and_bench() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, out, _) = call(&["gen", "--n", "2", "--count", "3", "--seed", "7", "--out", d]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 3);
        let first = dir.path().join("instance_000.json");
        assert!(load_problem(&first).is_ok());

        let (code, out, _) = call(&["bench", "--n", "2", "--count", "2", "--methods", "a,b"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("instance,scheme,iters,time_s,residual,rate\n"));
        assert_eq!(out.lines().count(), 5);
    }
}
