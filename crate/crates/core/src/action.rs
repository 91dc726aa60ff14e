//! Discretized path action, quasipotentials and the Freidlin–Wentzell
//! in-tree formula.
//!
//! A path is a uniform grid of knots `y_0, ..., y_M` with spacing `dt`; its
//! action is `sum_j L(m_j, (y_{j+1} - y_j)/dt) dt` with `m_j` the segment
//! midpoint. Minimization runs spectral projected gradient on the interior
//! knots, each knot projected onto `{sum y = 1, y >= eps}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::meanfield::{integrate_ode, lyapunov_g, Trajectory};
use crate::model::{sup_distance, ModelParams, Occupancy, StateSpace};
use crate::ratefn::{dy_hamiltonian_raw, legendre, LegendreOptions};

/// Interior floors used in turn; the reported action is the last stage's.
pub const DEFAULT_FLOORS: [f64; 3] = [1e-2, 1e-4, 1e-6];
/// `(T, M)` pairs with `M = 40 T`.
pub const DEFAULT_SCHEDULE: [(f64, usize); 4] = [(2.0, 80), (5.0, 200), (10.0, 400), (20.0, 800)];
/// Slack allowed in the monotone-in-T diagnostic.
pub const MONOTONE_SLACK: f64 = 1e-3;

/// Knots of a discretized path.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub knots: Vec<Occupancy>,
    pub dt: f64,
    pub floor: f64,
}

impl PathGrid {
    pub fn new(knots: Vec<Occupancy>, dt: f64, floor: f64) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a path needs at least 2 segments, got {}",
                knots.len().saturating_sub(1)
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        if !(floor >= 0.0) {
            return Err(Error::InvalidArgument(format!("floor must be >= 0, got {floor}")));
        }
        let n = knots[0].len();
        if let Some(k) = knots.iter().find(|k| k.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: k.len(),
            });
        }
        Ok(Self { knots, dt, floor })
    }

    /// `M + 1` equally spaced knots on the segment from `y0` to `y1`.
    pub fn straight(y0: &Occupancy, y1: &Occupancy, horizon: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("M must be >= 2, got {m}")));
        }
        let knots = (0..=m)
            .map(|j| {
                let s = j as f64 / m as f64;
                Occupancy::from_vec_unchecked(
                    y0.as_slice()
                        .iter()
                        .zip(y1.as_slice())
                        .map(|(a, b)| a + s * (b - a))
                        .collect(),
                )
            })
            .collect();
        Self::new(knots, horizon / m as f64, 0.0)
    }

    /// Uses the trajectory's samples as knots; they must be uniformly spaced.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        if traj.len() < 3 {
            return Err(Error::InvalidArgument("trajectory too short for a path".into()));
        }
        let dt = traj.times[1] - traj.times[0];
        for w in traj.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::InvalidArgument("trajectory samples are not uniform".into()));
            }
        }
        Self::new(traj.points.clone(), dt, 0.0)
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.segments() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.knots.len()).map(|j| j as f64 * self.dt).collect()
    }

    pub fn start(&self) -> &Occupancy {
        &self.knots[0]
    }

    pub fn end(&self) -> &Occupancy {
        &self.knots[self.knots.len() - 1]
    }

    /// Joins two paths with equal `dt` whose end and start coincide.
    pub fn concat(&self, other: &PathGrid) -> Result<Self> {
        if (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidArgument("concatenated paths need equal dt".into()));
        }
        if self.end().sup_distance(other.start()) > 1e-12 {
            return Err(Error::InvalidArgument("paths do not meet".into()));
        }
        let mut knots = self.knots.clone();
        knots.extend(other.knots.iter().skip(1).cloned());
        Self::new(knots, self.dt, self.floor.min(other.floor))
    }
}

fn segment_value(
    a: &[f64],
    b: &[f64],
    dt: f64,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &LegendreOptions,
    warm: Option<&[f64]>,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let z: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect();
    let r = legendre(&mid, &z, ss, p, opts, warm)?;
    Ok((r.value, r.maximizer.map(|m| m.into_vec())))
}

/// Midpoint-rule action of a path; `+inf` when a segment is infinite.
pub fn path_action(path: &PathGrid, ss: &StateSpace, p: &ModelParams) -> Result<f64> {
    ss.check_len(path.knots[0].len())?;
    let opts = LegendreOptions::default();
    let mut total = 0.0;
    let mut warm: Option<Vec<f64>> = None;
    for (j, w) in path.knots.windows(2).enumerate() {
        match segment_value(w[0].as_slice(), w[1].as_slice(), path.dt, ss, p, &opts, warm.as_deref()) {
            Ok((v, lam)) => {
                if !v.is_finite() {
                    return Ok(f64::INFINITY);
                }
                total += v * path.dt;
                warm = lam;
            }
            Err(_) => {
                return Err(Error::ActionNonConvergence {
                    segment: j,
                    partial: total,
                })
            }
        }
    }
    Ok(total)
}

/// How knot gradients are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    /// Envelope theorem at the segment maximizers.
    Envelope,
    /// Central differences along tangent coordinate directions.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone)]
pub struct ActionOptions {
    pub floors: Vec<f64>,
    /// SPG iterations per floor stage.
    pub max_iter: usize,
    /// Stop when the projected-gradient sup norm falls below this.
    pub pg_tol: f64,
    pub gradient: GradientMode,
    pub legendre: LegendreOptions,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self {
            floors: DEFAULT_FLOORS.to_vec(),
            max_iter: 3000,
            pg_tol: 1e-8,
            gradient: GradientMode::Envelope,
            legendre: LegendreOptions::default(),
        }
    }
}

/// How the minimizer was started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathInit {
    Straight,
    OdeArc,
}

#[derive(Debug, Clone)]
pub struct ActionResult {
    pub path: PathGrid,
    pub action: f64,
    pub converged: bool,
    pub iterations: usize,
    pub pg_norm: f64,
    pub init: PathInit,
}

struct Problem<'a> {
    ss: &'a StateSpace,
    p: &'a ModelParams,
    y0: Vec<f64>,
    y1: Vec<f64>,
    m: usize,
    n: usize,
    dt: f64,
    opts: &'a ActionOptions,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    duals: Vec<Vec<f64>>,
}

impl Problem<'_> {
    fn knot<'b>(&'b self, x: &'b [f64], j: usize) -> &'b [f64] {
        if j == 0 {
            &self.y0
        } else if j == self.m {
            &self.y1
        } else {
            &x[(j - 1) * self.n..j * self.n]
        }
    }

    fn segment(&self, x: &[f64], j: usize, warm: &[f64]) -> Option<(f64, Vec<f64>)> {
        let warm = (!warm.is_empty()).then_some(warm);
        match segment_value(
            self.knot(x, j),
            self.knot(x, j + 1),
            self.dt,
            self.ss,
            self.p,
            &self.opts.legendre,
            warm,
        ) {
            Ok((v, Some(lam))) if v.is_finite() => Some((v * self.dt, lam)),
            _ => None,
        }
    }

    /// `f = +inf` when any segment is infinite or its dual solve fails.
    fn eval(&self, x: &[f64], warm: &[Vec<f64>], with_grad: bool) -> Eval {
        let n = self.n;
        let mut f = 0.0;
        let mut duals = Vec::with_capacity(self.m);
        for (j, w) in warm.iter().enumerate().take(self.m) {
            match self.segment(x, j, w) {
                Some((v, lam)) => {
                    f += v;
                    duals.push(lam);
                }
                None => {
                    return Eval {
                        f: f64::INFINITY,
                        grad: Vec::new(),
                        duals: Vec::new(),
                    }
                }
            }
        }
        if !with_grad {
            return Eval {
                f,
                grad: Vec::new(),
                duals,
            };
        }
        let mut grad = vec![0.0; x.len()];
        match self.opts.gradient {
            GradientMode::Envelope => {
                for (j, lam) in duals.iter().enumerate() {
                    let a = self.knot(x, j);
                    let b = self.knot(x, j + 1);
                    let mid: Vec<f64> = a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect();
                    let dyh = dy_hamiltonian_raw(&mid, lam, self.ss, self.p);
                    if j > 0 {
                        let g = &mut grad[(j - 1) * n..j * n];
                        for t in 0..n {
                            g[t] += -lam[t] - 0.5 * self.dt * dyh[t];
                        }
                    }
                    if j + 1 < self.m {
                        let g = &mut grad[j * n..(j + 1) * n];
                        for t in 0..n {
                            g[t] += lam[t] - 0.5 * self.dt * dyh[t];
                        }
                    }
                }
                for g in grad.chunks_mut(n) {
                    let mean = g.iter().sum::<f64>() / n as f64;
                    g.iter_mut().for_each(|v| *v -= mean);
                }
            }
            GradientMode::FiniteDifference { step } => {
                let mut xp = x.to_vec();
                for j in 1..self.m {
                    let base = (j - 1) * n;
                    let lo = x[base..base + n].iter().copied().fold(f64::INFINITY, f64::min);
                    let h = step.min(0.25 * lo);
                    for t in 0..n {
                        let mut side = [0.0; 2];
                        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                            for u in 0..n {
                                let e = if u == t { 1.0 } else { 0.0 };
                                xp[base + u] = x[base + u] + sign * h * (e - 1.0 / n as f64);
                            }
                            let left = self.segment(&xp, j - 1, &duals[j - 1]);
                            let right = self.segment(&xp, j, &duals[j]);
                            side[s] = match (left, right) {
                                (Some((l, _)), Some((r, _))) => l + r,
                                _ => f64::INFINITY,
                            };
                        }
                        xp[base..base + n].copy_from_slice(&x[base..base + n]);
                        grad[base + t] = (side[0] - side[1]) / (2.0 * h);
                    }
                }
            }
        }
        Eval { f, grad, duals }
    }
}

/// Euclidean projection of `v` onto `{sum = 1, v_i >= eps}`.
pub(crate) fn project_capped_simplex(v: &mut [f64], eps: f64) {
    let n = v.len();
    let mass = 1.0 - eps * n as f64;
    let mut u: Vec<f64> = v.iter().map(|x| x - eps).collect();
    let mut sorted = u.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - mass) / (i + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    for (x, w) in v.iter_mut().zip(u.iter_mut()) {
        *x = (*w - tau).max(0.0) + eps;
    }
}

fn project_knots(x: &mut [f64], n: usize, eps: f64) {
    for k in x.chunks_mut(n) {
        project_capped_simplex(k, eps);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct StageOutcome {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    pg: f64,
    converged: bool,
}

/// Spectral projected gradient with a nonmonotone Armijo search.
fn spg(prob: &Problem<'_>, mut x: Vec<f64>, eps: f64, warm: &mut Vec<Vec<f64>>) -> Result<StageOutcome> {
    const MEMORY: usize = 10;
    let n = prob.n;
    project_knots(&mut x, n, eps);
    let mut cur = prob.eval(&x, warm, true);
    if !cur.f.is_finite() {
        return Err(Error::ActionNonConvergence {
            segment: 0,
            partial: f64::INFINITY,
        });
    }
    *warm = cur.duals.clone();
    let pg_of = |x: &[f64], g: &[f64]| {
        let mut t: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        project_knots(&mut t, n, eps);
        t.iter().zip(x).map(|(a, b)| a - b).fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let mut pg = pg_of(&x, &cur.grad);
    let mut alpha = 1.0 / pg.max(1e-10);
    let mut history = vec![cur.f];
    let mut iterations = 0;
    while pg >= prob.opts.pg_tol && iterations < prob.opts.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = x.iter().zip(&cur.grad).map(|(a, b)| a - alpha * b).collect();
        project_knots(&mut d, n, eps);
        d.iter_mut().zip(&x).for_each(|(a, b)| *a -= b);
        let gd = dot(&cur.grad, &d);
        if !(gd < 0.0) {
            break;
        }
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-14 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let e = prob.eval(&xt, warm, true);
            if e.f <= fmax + 1e-4 * t * gd {
                next = Some((xt, e));
                break;
            }
            // Quadratic interpolation, safeguarded to [0.1, 0.5].
            let q = if e.f.is_finite() {
                -0.5 * gd * t * t / (e.f - cur.f - gd * t)
            } else {
                0.1 * t
            };
            t = q.clamp(0.1 * t, 0.5 * t);
        }
        let Some((xn, en)) = next else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = en.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-12, 1e12)
        } else {
            1e12f64.min(alpha * 10.0)
        };
        x = xn;
        cur = en;
        *warm = cur.duals.clone();
        history.push(cur.f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        pg = pg_of(&x, &cur.grad);
    }
    Ok(StageOutcome {
        x,
        f: cur.f,
        iterations,
        pg,
        converged: pg < prob.opts.pg_tol,
    })
}

fn ode_arc_init(
    y0: &Occupancy,
    y1: &Occupancy,
    horizon: f64,
    m: usize,
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<Vec<Vec<f64>>> {
    let half = m / 2;
    let dt = horizon / m as f64;
    let traj = integrate_ode(y0, dt * half as f64, dt / 10.0, ss, p)?;
    let mut knots: Vec<Vec<f64>> = (0..=half)
        .map(|j| traj.points[(j * 10).min(traj.len() - 1)].as_slice().to_vec())
        .collect();
    let arc_end = knots[half].clone();
    for j in half + 1..=m {
        let s = (j - half) as f64 / (m - half) as f64;
        knots.push(
            arc_end
                .iter()
                .zip(y1.as_slice())
                .map(|(a, b)| a + s * (b - a))
                .collect(),
        );
    }
    Ok(knots)
}

/// Minimizes the discretized action over paths from `y0` to `y1` on `[0, T]`
/// with `M` segments.
pub fn minimize_action(
    y0: &Occupancy,
    y1: &Occupancy,
    horizon: f64,
    m: usize,
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<ActionResult> {
    minimize_action_with(y0, y1, horizon, m, ss, p, &ActionOptions::default())
}

pub fn minimize_action_with(
    y0: &Occupancy,
    y1: &Occupancy,
    horizon: f64,
    m: usize,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &ActionOptions,
) -> Result<ActionResult> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be > 0, got {horizon}")));
    }
    if m < 8 {
        return Err(Error::InvalidArgument(format!("M must be >= 8, got {m}")));
    }
    ss.check_len(y0.len())?;
    ss.check_len(y1.len())?;
    let n = ss.len();
    let floors: Vec<f64> = opts.floors.iter().copied().filter(|e| *e * (n as f64) < 1.0).collect();
    if floors.is_empty() {
        return Err(Error::InvalidArgument("every floor exceeds 1/|Theta|".into()));
    }
    let prob = Problem {
        ss,
        p,
        y0: y0.as_slice().to_vec(),
        y1: y1.as_slice().to_vec(),
        m,
        n,
        dt: horizon / m as f64,
        opts,
    };
    let straight = PathGrid::straight(y0, y1, horizon, m)?;
    let flatten = |knots: &[Vec<f64>]| -> Vec<f64> { knots[1..m].iter().flatten().copied().collect() };
    let mut x = flatten(&straight.knots.iter().map(|k| k.as_slice().to_vec()).collect::<Vec<_>>());
    project_knots(&mut x, n, floors[0]);
    let mut warm = vec![Vec::new(); m];
    let mut init = PathInit::Straight;
    if !prob.eval(&x, &warm, false).f.is_finite() {
        init = PathInit::OdeArc;
        x = flatten(&ode_arc_init(y0, y1, horizon, m, ss, p)?);
        project_knots(&mut x, n, floors[0]);
    }
    let mut out = None;
    let mut iterations = 0;
    for &eps in &floors {
        let stage = spg(&prob, x, eps, &mut warm)?;
        iterations += stage.iterations;
        x = stage.x.clone();
        out = Some(stage);
    }
    let stage = out.expect("at least one floor stage");
    let mut knots = Vec::with_capacity(m + 1);
    knots.push(y0.clone());
    knots.extend(x.chunks(n).map(|k| Occupancy::from_vec_unchecked(k.to_vec())));
    knots.push(y1.clone());
    Ok(ActionResult {
        path: PathGrid::new(knots, prob.dt, *floors.last().unwrap())?,
        action: stage.f,
        converged: stage.converged,
        iterations,
        pg_norm: stage.pg,
        init,
    })
}

/// One schedule entry of a quasipotential estimate.
#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub horizon: f64,
    pub segments: usize,
    pub action: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Quasipotential {
    pub value: f64,
    pub runs: Vec<ScheduleRun>,
    /// Actions nonincreasing in T up to [`MONOTONE_SLACK`].
    pub monotone: bool,
}

/// Quasipotential settings: the `(T, M)` schedule plus minimizer options.
#[derive(Debug, Clone)]
pub struct QuasipotentialOptions {
    pub schedule: Vec<(f64, usize)>,
    pub action: ActionOptions,
}

impl Default for QuasipotentialOptions {
    fn default() -> Self {
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            action: ActionOptions::default(),
        }
    }
}

/// `Phi(from, to)` estimated as the least minimized action over the schedule.
pub fn quasipotential(
    from: &Occupancy,
    to: &Occupancy,
    ss: &StateSpace,
    p: &ModelParams,
    schedule: &[(f64, usize)],
) -> Result<Quasipotential> {
    let opts = QuasipotentialOptions {
        schedule: schedule.to_vec(),
        action: ActionOptions::default(),
    };
    quasipotential_with(from, to, ss, p, &opts)
}

pub fn quasipotential_with(
    from: &Occupancy,
    to: &Occupancy,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &QuasipotentialOptions,
) -> Result<Quasipotential> {
    let schedule = &opts.schedule;
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidArgument("schedule horizons must increase".into()));
    }
    if from.sup_distance(to) == 0.0 {
        return Ok(Quasipotential {
            value: 0.0,
            runs: Vec::new(),
            monotone: true,
        });
    }
    let runs: Vec<ScheduleRun> = schedule
        .par_iter()
        .map(|&(t, m)| {
            let r = minimize_action_with(from, to, t, m, ss, p, &opts.action)?;
            Ok(ScheduleRun {
                horizon: t,
                segments: m,
                action: r.action,
                converged: r.converged,
                iterations: r.iterations,
            })
        })
        .collect::<Result<_>>()?;
    let monotone = runs.windows(2).all(|w| w[1].action <= w[0].action + MONOTONE_SLACK);
    if !monotone {
        log::warn!(
            "quasipotential schedule is not monotone in T: {:?}",
            runs.iter().map(|r| r.action).collect::<Vec<_>>()
        );
    }
    let value = runs.iter().map(|r| r.action).fold(f64::INFINITY, f64::min);
    Ok(Quasipotential { value, runs, monotone })
}

/// Pairwise quasipotentials between equilibria.
#[derive(Debug, Clone)]
pub struct QuasipotentialMatrix {
    pub points: Vec<Occupancy>,
    /// `phi[i][j] = Phi(points[i], points[j])`.
    pub phi: Vec<Vec<f64>>,
    /// Extra named values, e.g. `Phi` to a domain boundary.
    pub boundary_values: Vec<(String, f64)>,
}

impl QuasipotentialMatrix {
    /// Wraps externally supplied values; diagonal must be 0 and entries >= 0.
    pub fn from_values(points: Vec<Occupancy>, phi: Vec<Vec<f64>>) -> Result<Self> {
        check_phi(&phi)?;
        if !points.is_empty() && points.len() != phi.len() {
            return Err(Error::DimensionMismatch {
                expected: phi.len(),
                got: points.len(),
            });
        }
        Ok(Self {
            points,
            phi,
            boundary_values: Vec::new(),
        })
    }

    pub fn compute(
        points: Vec<Occupancy>,
        ss: &StateSpace,
        p: &ModelParams,
        opts: &QuasipotentialOptions,
    ) -> Result<Self> {
        let k = points.len();
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| Ok(quasipotential_with(&points[i], &points[j], ss, p, opts)?.value))
            .collect::<Result<_>>()?;
        let mut phi = vec![vec![0.0; k]; k];
        for (&(i, j), v) in pairs.iter().zip(values) {
            phi[i][j] = v.max(0.0);
        }
        Self::from_values(points, phi)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

fn check_phi(phi: &[Vec<f64>]) -> Result<()> {
    let k = phi.len();
    for (i, row) in phi.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: row.len(),
            });
        }
        if row[i] != 0.0 {
            return Err(Error::InvalidArgument(format!("phi[{i}][{i}] = {} must be 0", row[i])));
        }
        if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("phi entries must be >= 0, got {v}")));
        }
    }
    Ok(())
}

/// Largest set handled by exhaustive in-tree enumeration.
pub const MAX_TREE_NODES: usize = 8;

/// `W(r) = min over in-trees rooted at r of sum phi[i][parent(i)]`.
pub fn tree_weights(phi: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_phi(phi)?;
    let k = phi.len();
    if k > MAX_TREE_NODES {
        return Err(Error::TooManyEquilibria(k));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok((0..k).map(|r| min_in_tree(phi, r)).collect())
}

fn min_in_tree(phi: &[Vec<f64>], root: usize) -> f64 {
    let k = phi.len();
    let others: Vec<usize> = (0..k).filter(|&i| i != root).collect();
    if others.is_empty() {
        return 0.0;
    }
    // Each non-root node picks a parent among the other k - 1 nodes.
    let mut choice = vec![0usize; others.len()];
    let mut parent = vec![usize::MAX; k];
    let mut best = f64::INFINITY;
    loop {
        for (slot, &node) in others.iter().enumerate() {
            let c = choice[slot];
            parent[node] = if c >= node { c + 1 } else { c };
        }
        if reaches_root(&parent, root, k) {
            let w: f64 = others.iter().map(|&i| phi[i][parent[i]]).sum();
            best = best.min(w);
        }
        let mut s = 0;
        loop {
            if s == choice.len() {
                return best;
            }
            choice[s] += 1;
            if choice[s] < k - 1 {
                break;
            }
            choice[s] = 0;
            s += 1;
        }
    }
}

fn reaches_root(parent: &[usize], root: usize, k: usize) -> bool {
    (0..k).filter(|&i| i != root).all(|start| {
        let mut node = start;
        for _ in 0..k {
            if node == root {
                return true;
            }
            node = parent[node];
        }
        node == root
    })
}

/// `J(nu(rho_r)) = W(r) - min_r' W(r')`.
pub fn tree_formula(phi: &[Vec<f64>]) -> Result<Vec<f64>> {
    let w = tree_weights(phi)?;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(w.iter().map(|v| v - min).collect())
}

/// Largest violation over bipartitions `{A', A''}` of
/// `min_{a in A', b in A''} (J_a + phi[a][b]) = min_{b in A'', a in A'} (J_b + phi[b][a])`.
pub fn balance_residual(j: &[f64], phi: &[Vec<f64>]) -> f64 {
    let k = j.len();
    let mut worst = 0.0f64;
    for mask in 1..(1u32 << k) - 1 {
        let inside = |i: usize| mask & (1 << i) != 0;
        let mut out_flow = f64::INFINITY;
        let mut in_flow = f64::INFINITY;
        for a in 0..k {
            for b in 0..k {
                if inside(a) && !inside(b) {
                    out_flow = out_flow.min(j[a] + phi[a][b]);
                    in_flow = in_flow.min(j[b] + phi[b][a]);
                }
            }
        }
        worst = worst.max((out_flow - in_flow).abs());
    }
    worst
}

/// Quasipotentials below this count as zero for pruning.
pub const ZERO_PHI: f64 = 1e-6;

/// `J(y) = min_r (J(nu_r) + Phi(nu_r, y))`, skipping equilibria that reach
/// another one at zero cost.
pub fn invariant_deviation(
    y: &Occupancy,
    qp: &QuasipotentialMatrix,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &QuasipotentialOptions,
) -> Result<f64> {
    if qp.points.len() != qp.len() || qp.is_empty() {
        return Err(Error::InvalidArgument(
            "quasipotential matrix has no equilibrium points".into(),
        ));
    }
    let j = tree_formula(&qp.phi)?;
    let k = qp.len();
    let mut keep: Vec<usize> = (0..k)
        .filter(|&a| !(0..k).any(|b| b != a && qp.phi[a][b] <= ZERO_PHI))
        .collect();
    if keep.is_empty() {
        keep = (0..k).collect();
    }
    let values: Vec<f64> = keep
        .par_iter()
        .map(|&a| Ok(j[a] + quasipotential_with(&qp.points[a], y, ss, p, opts)?.value))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone)]
pub struct ExitOptions {
    pub random_directions: usize,
    pub seed: u64,
    pub quasipotential: QuasipotentialOptions,
}

impl Default for ExitOptions {
    fn default() -> Self {
        Self {
            random_directions: 64,
            seed: 0,
            quasipotential: QuasipotentialOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExitRate {
    pub u: f64,
    pub argmin: Occupancy,
    /// Boundary mesh points with their quasipotentials.
    pub mesh: Vec<(Occupancy, f64)>,
}

/// Zero-sum directions with unit sup norm: `2|Theta|` axis ones then random.
fn mesh_directions(n: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * n + random);
    for t in 0..n {
        let d: Vec<f64> = (0..n)
            .map(|u| if u == t { 1.0 } else { -1.0 / (n - 1) as f64 })
            .collect();
        out.push(d.iter().map(|v| -v).collect());
        out.push(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let s = sup(&d);
        if s > 0.0 {
            d.iter_mut().for_each(|v| *v /= s);
            out.push(d);
        }
    }
    out
}

/// Boundary mesh of `domain`; points off the simplex are dropped, duplicates merged.
pub fn boundary_mesh(
    equilibrium: &Occupancy,
    domain: &Domain,
    ss: &StateSpace,
    p: &ModelParams,
    random_directions: usize,
    seed: u64,
) -> Result<Vec<Occupancy>> {
    let n = ss.len();
    let dirs = mesh_directions(n, random_directions, seed);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for d in &dirs {
        let candidate = match domain {
            Domain::Ball { center, radius } => {
                let y: Vec<f64> = center.as_slice().iter().zip(d).map(|(c, v)| c + radius * v).collect();
                y.iter().all(|v| *v >= 0.0).then_some(y)
            }
            Domain::Sublevel { reference, excess } => {
                let level = lyapunov_g(reference, ss, p) + excess;
                let e = equilibrium.as_slice();
                let smax = e
                    .iter()
                    .zip(d)
                    .filter(|(_, v)| **v < 0.0)
                    .map(|(y, v)| -y / v)
                    .fold(f64::INFINITY, f64::min);
                let at = |s: f64| -> Vec<f64> { e.iter().zip(d).map(|(y, v)| (y + s * v).max(0.0)).collect() };
                let g = |s: f64| lyapunov_g(&Occupancy::from_vec_unchecked(at(s)), ss, p);
                if g(smax) < level {
                    None
                } else {
                    let (mut lo, mut hi) = (0.0, smax);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if g(mid) < level {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Some(at(hi))
                }
            }
            Domain::Everything => return Err(Error::InvalidArgument("the whole simplex has no boundary".into())),
        };
        if let Some(y) = candidate {
            if !pts.iter().any(|q| sup_distance(q, &y) < 1e-12) {
                pts.push(y);
            }
        }
    }
    pts.into_iter().map(Occupancy::new).collect()
}

/// `U = min over the boundary mesh of Phi(equilibrium, y')`.
pub fn exit_rate_u(
    equilibrium: &Occupancy,
    domain: &Domain,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &ExitOptions,
) -> Result<ExitRate> {
    ss.check_len(equilibrium.len())?;
    domain.check_dims(ss)?;
    if !domain.contains(equilibrium, ss, p) {
        return Err(Error::DomainExcludesEquilibrium);
    }
    let mesh = boundary_mesh(equilibrium, domain, ss, p, opts.random_directions, opts.seed)?;
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("boundary mesh is empty".into()));
    }
    let values: Vec<f64> = mesh
        .par_iter()
        .map(|y| Ok(quasipotential_with(equilibrium, y, ss, p, &opts.quasipotential)?.value))
        .collect::<Result<_>>()?;
    let (best, u) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    Ok(ExitRate {
        u,
        argmin: mesh[best].clone(),
        mesh: mesh.into_iter().zip(values).collect(),
    })
}
