//! Exact analysis of the scalar family `F(x) = alpha x + beta` on `[-1, 1]`.
//!
//! Covers the strong pseudomonotonicity classification (with a grid
//! falsifier as an independent check), the KKT set of
//! `min { alpha x^2 / 2 + beta x : x in [-1, 1] }`, and a piecewise
//! closed-form solver for the projected flow
//! `x' = (P(x - (alpha x + beta)/rho) - x) / eta`.
//!
//! The flow has three regimes, decided by `s = (rho - alpha) x`:
//! `L` when `s < beta - rho` (the projection clips at -1), `R` when
//! `s > beta + rho` (clips at 1) and `M` otherwise.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarProblem {
    pub alpha: f64,
    pub beta: f64,
}

impl ScalarProblem {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::NonFinite("scalar problem"));
        }
        Ok(Self { alpha, beta })
    }

    /// `F(x) = alpha x + beta`.
    pub fn operator(&self, x: f64) -> f64 {
        self.alpha * x + self.beta
    }

    /// `alpha + beta > 0` or `alpha - beta > 0`.
    pub fn in_cone(&self) -> bool {
        in_cone(self.alpha, self.beta)
    }
}

pub fn in_cone(alpha: f64, beta: f64) -> bool {
    alpha + beta > 0.0 || alpha - beta > 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum SpmClass {
    StronglyMonotone { gamma: f64 },
    StronglyPseudomonotone { gamma: f64 },
    NotPseudomonotone { x: f64, y: f64 },
    IdenticallyZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpmVerdict {
    pub class: SpmClass,
    pub in_cone: bool,
}

impl SpmVerdict {
    /// Modulus when the operator is strongly (pseudo)monotone.
    pub fn gamma(&self) -> Option<f64> {
        match self.class {
            SpmClass::StronglyMonotone { gamma } | SpmClass::StronglyPseudomonotone { gamma } => {
                Some(gamma)
            }
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<(f64, f64)> {
        match self.class {
            SpmClass::NotPseudomonotone { x, y } => Some((x, y)),
            _ => None,
        }
    }
}

impl fmt::Display for SpmVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            SpmClass::StronglyMonotone { gamma } => write!(f, "strongly_monotone gamma={gamma}"),
            SpmClass::StronglyPseudomonotone { gamma } => {
                write!(f, "strongly_pseudomonotone gamma={gamma}")
            }
            SpmClass::NotPseudomonotone { x, y } => {
                write!(f, "not_pseudomonotone witness=({x},{y})")
            }
            SpmClass::IdenticallyZero => write!(f, "identically_zero"),
        }
    }
}

/// Exact classification of `x -> alpha x + beta` on `[-1, 1]`.
///
/// Strongly pseudomonotone exactly on the cone `alpha + beta > 0 or
/// alpha - beta > 0`; outside it a violating pair is returned.
pub fn classify_spm(sp: ScalarProblem) -> SpmVerdict {
    let ScalarProblem { alpha, beta } = sp;
    let class = if alpha == 0.0 && beta == 0.0 {
        SpmClass::IdenticallyZero
    } else if alpha == 0.0 {
        SpmClass::StronglyPseudomonotone {
            gamma: beta.abs() / 2.0,
        }
    } else if alpha > 0.0 {
        SpmClass::StronglyMonotone { gamma: alpha }
    } else if beta == 0.0 {
        SpmClass::NotPseudomonotone { x: -1.0, y: 1.0 }
    } else if beta > 0.0 {
        if alpha + beta > 0.0 {
            SpmClass::StronglyPseudomonotone {
                gamma: (alpha + beta) / 2.0,
            }
        } else if alpha + beta == 0.0 {
            SpmClass::NotPseudomonotone { x: 1.0, y: -1.0 }
        } else {
            SpmClass::NotPseudomonotone {
                x: -beta / alpha,
                y: 1.0,
            }
        }
    } else if alpha > beta {
        SpmClass::StronglyPseudomonotone {
            gamma: (alpha - beta) / 2.0,
        }
    } else {
        SpmClass::NotPseudomonotone {
            x: -beta / alpha,
            y: 1.0,
        }
    };
    SpmVerdict {
        class,
        in_cone: sp.in_cone(),
    }
}

/// `n` equally spaced nodes from `lo` to `hi`, endpoints exact.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "a grid needs at least two nodes");
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Searches the `grid_n x grid_n` grid on `[lo, hi]^2` for `x != y` with
/// `F(x)(y - x) >= 0` and `F(y)(y - x) <= 0`, which rules out strong
/// pseudomonotonicity. Pairs with a strictly negative conclusion are
/// preferred.
///
/// The sign of each product is the product of the signs, so the scan only
/// needs the sign of `F` at each node: a violation exists exactly when some
/// node with `F >= 0` precedes a node with `F <= 0` (for `y < x` swap the
/// roles). This makes the scan linear while visiting the same pairs.
pub fn falsify_on<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid_n: usize) -> Option<(f64, f64)> {
    let grid = uniform_grid(lo, hi, grid_n);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let first_nonneg = values.iter().position(|&v| v >= 0.0)?;
    let strict = values.iter().rposition(|&v| v < 0.0);
    if let Some(b) = strict.filter(|&b| b > first_nonneg) {
        return Some((grid[first_nonneg], grid[b]));
    }
    let weak = values.iter().rposition(|&v| v <= 0.0)?;
    (weak > first_nonneg).then(|| (grid[first_nonneg], grid[weak]))
}

/// [`falsify_on`] for `alpha x + beta` on `[-1, 1]`.
pub fn falsify_spm(alpha: f64, beta: f64, grid_n: usize) -> Option<(f64, f64)> {
    falsify_on(|x| alpha * x + beta, -1.0, 1.0, grid_n)
}

/// The literal quadratic scan over all ordered pairs, for cross-checking.
pub fn falsify_on_pairs<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    grid_n: usize,
) -> Option<(f64, f64)> {
    let grid = uniform_grid(lo, hi, grid_n);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut weak = None;
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            if i == j || values[i] * (y - x) < 0.0 {
                continue;
            }
            let conclusion = values[j] * (y - x);
            if conclusion < 0.0 {
                return Some((x, y));
            }
            if conclusion == 0.0 && weak.is_none() {
                weak = Some((x, y));
            }
        }
    }
    weak
}

/// Smallest `F(y)(y - x) / (y - x)^2` over grid pairs with
/// `F(x)(y - x) >= 0` and `|y - x| >= 1e-9`, clipped below at 0.
/// Infinite when no pair satisfies the premise.
pub fn estimate_gamma_on<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid_n: usize) -> f64 {
    let grid = uniform_grid(lo, hi, grid_n);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut best = f64::INFINITY;
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            let d = y - x;
            if d.abs() < 1e-9 || values[i] * d < 0.0 {
                continue;
            }
            best = best.min(values[j] / d);
        }
    }
    best.max(0.0)
}

/// [`estimate_gamma_on`] for `alpha x + beta` on `[-1, 1]`.
pub fn estimate_gamma(alpha: f64, beta: f64, grid_n: usize) -> f64 {
    estimate_gamma_on(|x| alpha * x + beta, -1.0, 1.0, grid_n)
}

/// Cone membership on a rectangular `(alpha, beta)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeMap {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `inside[i][j]` is the membership of `(alphas[i], betas[j])`.
    pub inside: Vec<Vec<bool>>,
}

impl ConeMap {
    /// Rows `alpha,beta,in_cone`, alpha-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alpha,beta,in_cone")?;
        for (a, row) in self.alphas.iter().zip(&self.inside) {
            for (b, inside) in self.betas.iter().zip(row) {
                writeln!(out, "{a},{b},{inside}")?;
            }
        }
        Ok(())
    }
}

pub fn cone_membership_map(
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    resolution: usize,
) -> Result<ConeMap> {
    let finite = [alpha_range.0, alpha_range.1, beta_range.0, beta_range.1]
        .iter()
        .all(|v| v.is_finite());
    if !finite || resolution < 2 {
        return Err(Error::InvalidConfig(
            "cone map needs finite ranges and resolution >= 2".into(),
        ));
    }
    let alphas = uniform_grid(alpha_range.0, alpha_range.1, resolution);
    let betas = uniform_grid(beta_range.0, beta_range.1, resolution);
    let inside = alphas
        .iter()
        .map(|&a| betas.iter().map(|&b| in_cone(a, b)).collect())
        .collect();
    Ok(ConeMap {
        alphas,
        betas,
        inside,
    })
}

/// KKT points of `min alpha x^2/2 + beta x` over `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarKktSet {
    /// Sorted, without duplicates. Empty when `whole_interval` is set.
    pub points: Vec<f64>,
    pub whole_interval: bool,
}

impl ScalarKktSet {
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        if self.whole_interval {
            return (-1.0 - tol..=1.0 + tol).contains(&x);
        }
        self.points.iter().any(|p| (p - x).abs() <= tol)
    }
}

/// `-1` is KKT iff `beta >= alpha`, `1` iff `alpha + beta <= 0`, and an
/// interior point only as the zero `-beta/alpha` of `F`.
pub fn scalar_kkt_set(sp: ScalarProblem) -> ScalarKktSet {
    let ScalarProblem { alpha, beta } = sp;
    if alpha == 0.0 && beta == 0.0 {
        return ScalarKktSet {
            points: Vec::new(),
            whole_interval: true,
        };
    }
    let mut points = Vec::new();
    if beta >= alpha {
        points.push(-1.0);
    }
    if alpha != 0.0 {
        let z = -beta / alpha;
        if (-1.0..=1.0).contains(&z) {
            points.push(z);
        }
    }
    if alpha + beta <= 0.0 {
        points.push(1.0);
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    ScalarKktSet {
        points,
        whole_interval: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    L,
    M,
    R,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::L => "L",
            Self::M => "M",
            Self::R => "R",
        };
        f.write_str(s)
    }
}

/// How the starting region is decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionTest {
    /// Compare `(rho - alpha) x` against `beta -+ rho` (no division).
    Scaled,
    /// Compare `x` against the boundary points `mu1`, `mu2`; falls back to
    /// [`RegionTest::Scaled`] when `rho == alpha`.
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Boundary {
    /// Between `L` and `M`: `(rho - alpha) x = beta - rho`.
    Low,
    /// Between `M` and `R`: `(rho - alpha) x = beta + rho`.
    High,
}

/// A piece of the trajectory governed by one closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    /// `f64::INFINITY` for the final segment.
    pub t_end: f64,
    pub region: Region,
    pub x_start: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactTrajectory {
    pub problem: ScalarProblem,
    pub rho: f64,
    pub eta: f64,
    pub segments: Vec<Segment>,
    /// Limit as `t -> infinity`.
    pub limit: f64,
    /// `(mu1, mu2) = ((beta - rho), (beta + rho)) / (rho - alpha)` when `rho != alpha`.
    pub mu: Option<(f64, f64)>,
}

/// Maximum number of region switches before giving up.
pub const SWITCH_GUARD: usize = 1000;

struct Dynamics {
    alpha: f64,
    beta: f64,
    rho: f64,
    eta: f64,
}

impl Dynamics {
    fn state(&self, region: Region, x_s: f64, tau: f64) -> f64 {
        let Self {
            alpha,
            beta,
            rho,
            eta,
        } = *self;
        match region {
            Region::L => (x_s + 1.0) * (-tau / eta).exp() - 1.0,
            Region::R => (x_s - 1.0) * (-tau / eta).exp() + 1.0,
            Region::M if alpha == 0.0 => x_s - beta * tau / (eta * rho),
            Region::M => {
                let c = -beta / alpha;
                c + (x_s - c) * (-alpha * tau / (eta * rho)).exp()
            }
        }
    }

    fn velocity(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::L => (-1.0 - x) / self.eta,
            Region::R => (1.0 - x) / self.eta,
            Region::M => -(self.alpha * x + self.beta) / (self.eta * self.rho),
        }
    }

    /// Where the closed form heads as `tau -> infinity` (may be infinite).
    fn terminal(&self, region: Region, x_s: f64) -> f64 {
        let v = self.velocity(region, x_s);
        if v == 0.0 {
            return x_s;
        }
        match region {
            Region::L => -1.0,
            Region::R => 1.0,
            Region::M if self.alpha > 0.0 => -self.beta / self.alpha,
            Region::M => v.signum() * f64::INFINITY,
        }
    }

    /// Time for the closed form started at `x_s` to reach `b`.
    fn hitting_time(&self, region: Region, x_s: f64, b: f64) -> f64 {
        let Self {
            alpha,
            beta,
            rho,
            eta,
        } = *self;
        match region {
            Region::L => eta * ((x_s + 1.0) / (b + 1.0)).ln(),
            Region::R => eta * ((x_s - 1.0) / (b - 1.0)).ln(),
            Region::M if alpha == 0.0 => (x_s - b) * eta * rho / beta,
            Region::M => {
                let c = -beta / alpha;
                eta * rho / alpha * ((x_s - c) / (b - c)).ln()
            }
        }
    }

    /// Region entered from `boundary` when moving with velocity sign `v`.
    fn region_leaving(&self, boundary: Boundary, v: f64) -> Region {
        let ds = (self.rho - self.alpha) * v;
        match boundary {
            Boundary::Low if ds < 0.0 => Region::L,
            Boundary::High if ds > 0.0 => Region::R,
            _ => Region::M,
        }
    }

    fn initial_region(&self, x: f64, test: RegionTest, mu: Option<(f64, f64)>) -> Region {
        let Self {
            alpha, beta, rho, ..
        } = *self;
        let k = rho - alpha;
        let (below_low, at_low, above_high, at_high) = match (test, mu) {
            (RegionTest::Mu, Some((mu1, mu2))) => {
                if k > 0.0 {
                    (x < mu1, x == mu1, x > mu2, x == mu2)
                } else {
                    (x > mu1, x == mu1, x < mu2, x == mu2)
                }
            }
            _ => {
                let s = k * x;
                (
                    s < beta - rho,
                    s == beta - rho,
                    s > beta + rho,
                    s == beta + rho,
                )
            }
        };
        if below_low {
            return Region::L;
        }
        if above_high {
            return Region::R;
        }
        // On a boundary the field is continuous; follow the direction of motion.
        let v = self.velocity(Region::M, x);
        if v != 0.0 {
            if at_low {
                return self.region_leaving(Boundary::Low, v);
            }
            if at_high {
                return self.region_leaving(Boundary::High, v);
            }
        }
        Region::M
    }
}

/// Closed-form trajectory from `x0`, region by region, up to `t -> infinity`.
pub fn exact_trajectory(sp: ScalarProblem, rho: f64, eta: f64, x0: f64) -> Result<ExactTrajectory> {
    exact_trajectory_with(sp, rho, eta, x0, RegionTest::Scaled)
}

pub fn exact_trajectory_with(
    sp: ScalarProblem,
    rho: f64,
    eta: f64,
    x0: f64,
    test: RegionTest,
) -> Result<ExactTrajectory> {
    if !(rho > 0.0 && rho.is_finite() && eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rho and eta must be positive, got {rho} and {eta}"
        )));
    }
    if !(-1.0..=1.0).contains(&x0) {
        return Err(Error::StartOutside {
            distance: (x0.abs() - 1.0).max(0.0),
        });
    }
    let dynamics = Dynamics {
        alpha: sp.alpha,
        beta: sp.beta,
        rho,
        eta,
    };
    let mu = (rho != sp.alpha).then(|| {
        let k = rho - sp.alpha;
        ((sp.beta - rho) / k, (sp.beta + rho) / k)
    });
    let boundaries: Vec<(f64, Boundary)> = match mu {
        Some((mu1, mu2)) => vec![(mu1, Boundary::Low), (mu2, Boundary::High)],
        None => Vec::new(),
    };

    let mut segments = Vec::new();
    let mut region = dynamics.initial_region(x0, test, mu);
    let mut x_s = x0;
    let mut t_s = 0.0;
    loop {
        if segments.len() >= SWITCH_GUARD {
            return Err(Error::SwitchGuard(SWITCH_GUARD));
        }
        let v = dynamics.velocity(region, x_s);
        let target = dynamics.terminal(region, x_s);
        let next = if v == 0.0 {
            None
        } else {
            boundaries
                .iter()
                .filter(|(b, _)| (b - x_s) * v > 0.0 && (target - b) * v > 0.0)
                .min_by(|a, b| (a.0 - x_s).abs().total_cmp(&(b.0 - x_s).abs()))
                .copied()
        };
        match next {
            None => {
                segments.push(Segment {
                    t_start: t_s,
                    t_end: f64::INFINITY,
                    region,
                    x_start: x_s,
                });
                return Ok(ExactTrajectory {
                    problem: sp,
                    rho,
                    eta,
                    segments,
                    limit: target,
                    mu,
                });
            }
            Some((b, kind)) => {
                let t_e = t_s + dynamics.hitting_time(region, x_s, b);
                segments.push(Segment {
                    t_start: t_s,
                    t_end: t_e,
                    region,
                    x_start: x_s,
                });
                region = dynamics.region_leaving(kind, v);
                x_s = b;
                t_s = t_e;
            }
        }
    }
}

impl ExactTrajectory {
    fn dynamics(&self) -> Dynamics {
        Dynamics {
            alpha: self.problem.alpha,
            beta: self.problem.beta,
            rho: self.rho,
            eta: self.eta,
        }
    }

    /// `x(t)` for `t >= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        let seg = self
            .segments
            .iter()
            .find(|s| t < s.t_end)
            .unwrap_or_else(|| self.segments.last().expect("at least one segment"));
        self.dynamics()
            .state(seg.region, seg.x_start, (t - seg.t_start).max(0.0))
    }

    pub fn final_segment(&self) -> &Segment {
        self.segments.last().expect("at least one segment")
    }

    /// A time after which `|x(t) - limit| <= tol`.
    pub fn settle_time(&self, tol: f64) -> f64 {
        let seg = self.final_segment();
        let gap = (seg.x_start - self.limit).abs();
        if gap <= tol {
            return seg.t_start;
        }
        let rate = match seg.region {
            Region::L | Region::R => 1.0 / self.eta,
            Region::M => self.problem.alpha / (self.eta * self.rho),
        };
        seg.t_start + (gap / tol).ln() / rate
    }

    /// Rows `t_start,t_end,region,limit`.
    pub fn write_segments_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_start,t_end,region,limit")?;
        for s in &self.segments {
            writeln!(out, "{},{},{},{}", s.t_start, s.t_end, s.region, self.limit)?;
        }
        Ok(())
    }
}

/// Convergence to a KKT point is guaranteed when `alpha <= 0`, or when
/// `alpha > 0` and `rho >= alpha`.
pub fn convergence_hypotheses_hold(sp: ScalarProblem, rho: f64) -> bool {
    sp.alpha <= 0.0 || rho >= sp.alpha
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitCheck {
    pub limit: f64,
    pub is_kkt: bool,
    /// False means the result is advisory only.
    pub hypotheses_hold: bool,
}

pub fn trajectory_limit_is_kkt(
    sp: ScalarProblem,
    rho: f64,
    eta: f64,
    x0: f64,
) -> Result<LimitCheck> {
    let traj = exact_trajectory(sp, rho, eta, x0)?;
    Ok(LimitCheck {
        limit: traj.limit,
        is_kkt: scalar_kkt_set(sp).contains(traj.limit, 1e-12),
        hypotheses_hold: convergence_hypotheses_hold(sp, rho),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sp(alpha: f64, beta: f64) -> ScalarProblem {
        ScalarProblem::new(alpha, beta).unwrap()
    }

    /// Checks a violating pair straight from the definition.
    fn violates(alpha: f64, beta: f64, (x, y): (f64, f64)) -> bool {
        let f = |t: f64| alpha * t + beta;
        x != y && f(x) * (y - x) >= 0.0 && f(y) * (y - x) <= 0.0
    }

    #[test]
    fn classification_examples() {
        let v = classify_spm(sp(0.0, 1.0));
        assert_eq!(v.class, SpmClass::StronglyPseudomonotone { gamma: 0.5 });
        assert!(v.in_cone);
        assert_eq!(
            classify_spm(sp(2.0, 0.0)).class,
            SpmClass::StronglyMonotone { gamma: 2.0 }
        );
        assert_eq!(classify_spm(sp(-1.0, 2.0)).gamma(), Some(0.5));
        assert_eq!(classify_spm(sp(-2.0, -3.0)).gamma(), Some(0.5));
        let v = classify_spm(sp(-1.0, 0.0));
        assert_eq!(v.witness(), Some((-1.0, 1.0)));
        assert!(!v.in_cone);
        assert_eq!(classify_spm(sp(0.0, 0.0)).class, SpmClass::IdenticallyZero);
        assert_eq!(
            classify_spm(sp(-1.0, 2.0)).to_string(),
            "strongly_pseudomonotone gamma=0.5"
        );
    }

    #[test]
    fn classifier_witnesses_violate_the_definition() {
        for (a, b) in [
            (-1.0, 0.0),
            (-3.0, 1.0),
            (-1.0, 1.0),
            (-2.0, -1.0),
            (-2.0, -2.0),
        ] {
            let v = classify_spm(sp(a, b));
            let w = v.witness().expect("outside the cone");
            assert!(violates(a, b, w), "({a},{b}) witness {w:?}");
            assert!((-1.0..=1.0).contains(&w.0) && (-1.0..=1.0).contains(&w.1));
        }
    }

    #[test]
    fn falsifier_examples() {
        let w = falsify_spm(-1.0, 0.0, 101).unwrap();
        assert_eq!(w, (-1.0, 1.0));
        assert!(falsify_spm(0.0, 1.0, 1001).is_none());
        assert!((estimate_gamma(0.0, 1.0, 1001) - 0.5).abs() <= 0.01);
        // -x + 1 on [0, 1/2]
        assert!(falsify_on(|x| -x + 1.0, 0.0, 0.5, 201).is_none());
        assert!(estimate_gamma_on(|x| -x + 1.0, 0.0, 0.5, 201) >= 0.99);
        // F == 0 has only weak violations
        assert!(falsify_spm(0.0, 0.0, 11).is_some());
    }

    #[test]
    fn linear_scan_matches_pair_scan() {
        let params = [
            (-1.0, 0.0),
            (0.0, 0.0),
            (0.3, -0.2),
            (-1.0, 1.0),
            (-2.0, -1.5),
            (-0.5, 0.7),
            (1e-3, 0.0),
            (-0.7, -0.7),
        ];
        for (a, b) in params {
            let fast = falsify_spm(a, b, 41);
            let slow = falsify_on_pairs(|x| a * x + b, -1.0, 1.0, 41);
            assert_eq!(fast.is_some(), slow.is_some(), "({a},{b})");
            if let Some(w) = fast {
                assert!(violates(a, b, w));
            }
        }
    }

    #[test]
    fn gamma_estimates() {
        for (a, b, g) in [
            (0.0, 1.0, 0.5),
            (2.0, 0.0, 2.0),
            (-1.0, 2.0, 0.5),
            (-2.0, -3.0, 0.5),
        ] {
            let est = estimate_gamma(a, b, 401);
            assert!((est - g).abs() <= 0.02, "({a},{b}): {est}");
        }
        assert_eq!(estimate_gamma(-1.0, 0.0, 101), 0.0);
    }

    #[test]
    fn cone_map_examples() {
        let map = cone_membership_map((-1.0, 1.0), (-2.0, 2.0), 5).unwrap();
        assert_eq!(map.alphas, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(map.inside[4][2]); // (1, 0)
        assert!(!map.inside[2][2]); // (0, 0)
        assert!(map.inside[0][4]); // (-1, 2)
        assert!(!map.inside[0][3]); // (-1, 1)
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,beta,in_cone\n-1,-2,true\n-1,-1,false\n"));
        assert_eq!(text.lines().count(), 26);
        assert!(cone_membership_map((0.0, 1.0), (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn cone_is_not_convex() {
        assert!(in_cone(-1.0, 2.0));
        assert!(in_cone(1.0, -2.0));
        assert!(!in_cone(0.0, 0.0));
    }

    #[test]
    fn kkt_set_examples() {
        assert_eq!(scalar_kkt_set(sp(-1.0, 0.0)).points, vec![-1.0, 0.0, 1.0]);
        assert_eq!(scalar_kkt_set(sp(2.0, 1.0)).points, vec![-0.5]);
        let all = scalar_kkt_set(sp(0.0, 0.0));
        assert!(all.whole_interval && all.contains(0.3, 0.0));
        // F(-1) = 0 gives a duplicate that must collapse
        assert_eq!(scalar_kkt_set(sp(1.0, 1.0)).points, vec![-1.0]);
    }

    #[test]
    fn kkt_set_matches_variational_inequality() {
        let ys = uniform_grid(-1.0, 1.0, 201);
        for a in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            for b in [-3.0, -1.0, -0.25, 0.0, 0.5, 2.0] {
                let set = scalar_kkt_set(sp(a, b));
                if set.whole_interval {
                    continue;
                }
                for &x in &set.points {
                    assert!(ys.iter().all(|y| (a * x + b) * (y - x) >= -1e-12));
                }
                // grid points satisfying the inequality are in the set
                for &x in &ys {
                    if ys.iter().all(|y| (a * x + b) * (y - x) >= 0.0) {
                        assert!(set.contains(x, 1e-12), "({a},{b}) x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn stationary_trajectory() {
        let t = exact_trajectory(sp(-1.0, 0.0), 2.0, 1.0, 0.0).unwrap();
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.segments[0].region, Region::M);
        assert_eq!(t.limit, 0.0);
        assert_eq!(t.eval(7.0), 0.0);
    }

    #[test]
    fn left_region_trajectory() {
        let t = exact_trajectory(sp(-1.0, 0.0), 2.0, 1.0, -0.9).unwrap();
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.segments[0].region, Region::L);
        assert_eq!(t.limit, -1.0);
        assert_abs_diff_eq!(t.eval(1.5), 0.1 * (-1.5f64).exp() - 1.0, epsilon = 1e-15);
        assert_eq!(t.mu, Some((-2.0 / 3.0, 2.0 / 3.0)));
    }

    #[test]
    fn boundary_start_follows_direction_of_motion() {
        // (rho - alpha) x0 = beta - rho: on the L|M boundary, moving down
        let t = exact_trajectory(sp(0.0, 1.0), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(t.segments[0].region, Region::L);
        assert_eq!(t.limit, -1.0);
        assert_abs_diff_eq!(t.eval(2.0), (-2.0f64).exp() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn middle_then_left() {
        // x' = -1/2 in M until x = mu1 = -0.5, then L
        let t = exact_trajectory(sp(0.0, 1.0), 2.0, 1.0, 0.5).unwrap();
        let regions: Vec<_> = t.segments.iter().map(|s| s.region).collect();
        assert_eq!(regions, vec![Region::M, Region::L]);
        assert_abs_diff_eq!(t.segments[1].t_start, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.eval(1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.eval(3.0), 0.5 * (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_eq!(t.limit, -1.0);
        assert!(t.settle_time(1e-8) > 2.0);
    }

    #[test]
    fn positive_alpha_reaches_unique_kkt_point() {
        let t = exact_trajectory(sp(2.0, 1.0), 3.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(t.limit, -0.5, epsilon = 1e-15);
        let c = trajectory_limit_is_kkt(sp(2.0, 1.0), 3.0, 1.0, 1.0).unwrap();
        assert!(c.is_kkt && c.hypotheses_hold);
    }

    #[test]
    fn limit_checks() {
        let c = trajectory_limit_is_kkt(sp(-1.0, 0.0), 2.0, 1.0, -0.9).unwrap();
        assert!(c.is_kkt && c.limit == -1.0);
        let c = trajectory_limit_is_kkt(sp(0.0, 0.0), 0.7, 1.3, 0.3).unwrap();
        assert!(c.is_kkt && c.limit == 0.3);
        let c = trajectory_limit_is_kkt(sp(2.0, 1.0), 1.0, 1.0, 1.0).unwrap();
        assert!(!c.hypotheses_hold);
    }

    #[test]
    fn unstable_middle_equilibrium_escapes() {
        // alpha < 0: x0 slightly right of -beta/alpha = 0 runs to 1
        let t = exact_trajectory(sp(-1.0, 0.0), 2.0, 1.0, 0.1).unwrap();
        let regions: Vec<_> = t.segments.iter().map(|s| s.region).collect();
        assert_eq!(regions, vec![Region::M, Region::R]);
        assert_eq!(t.limit, 1.0);
        // M: x = 0.1 e^{t/2} reaches mu2 = 2/3 at t = 2 ln(20/3)
        assert_abs_diff_eq!(
            t.segments[1].t_start,
            2.0 * (20.0f64 / 3.0).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn segments_are_contiguous_and_continuous() {
        let t = exact_trajectory(sp(-0.5, 0.2), 1.5, 0.8, 0.7).unwrap();
        for w in t.segments.windows(2) {
            assert_eq!(w[0].t_end, w[1].t_start);
            let before = t
                .dynamics()
                .state(w[0].region, w[0].x_start, w[0].t_end - w[0].t_start);
            assert_abs_diff_eq!(before, w[1].x_start, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(exact_trajectory(sp(1.0, 0.0), 0.0, 1.0, 0.0).is_err());
        assert!(matches!(
            exact_trajectory(sp(1.0, 0.0), 1.0, 1.0, 1.5),
            Err(Error::StartOutside { .. })
        ));
        assert!(ScalarProblem::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn segment_csv() {
        let t = exact_trajectory(sp(0.0, 1.0), 2.0, 1.0, 0.5).unwrap();
        let mut buf = Vec::new();
        t.write_segments_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_start,t_end,region,limit\n0,2,M,-1\n2,inf,L,-1\n"
        );
    }
}
