//! Erlang fixed points and their classification.
//!
//! Equilibria of the mean-field ODE are exactly the product-form measures
//! `nu_theta(rho) = prod_k rho_k^theta_k / theta_k! / Z(rho)` whose loads solve
//! `rho_k = (alpha_k + gamma_k E_nu[theta_k]) / (gamma_k + delta_k)`.
//! Stability is read off the reduced potential
//! `phi(rho) = -ln Z(rho) + sum_k ((gamma_k+delta_k)/gamma_k rho_k - alpha_k/gamma_k ln rho_k)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::meanfield::lyapunov_g;
use crate::model::{ln_factorial, ModelParams, Occupancy, StateSpace};

/// Deduplication radius for located roots (relative sup norm).
pub const DEDUP_TOL: f64 = 1e-6;
/// Roots closer than this but farther than [`DEDUP_TOL`] trigger a warning.
pub const NEAR_PAIR_TOL: f64 = 1e-4;
/// Accepted fixed-point residual (relative to `max(1, rho_k)`).
pub const ROOT_TOL: f64 = 1e-10;
/// Residual required by [`classify`].
pub const CLASSIFY_TOL: f64 = 1e-8;
/// Eigenvalues with magnitude at or below this are treated as zero.
pub const EIGEN_THRESHOLD: f64 = 1e-8;
/// Relative Hessian step: `h_k = HESSIAN_STEP * max(1, rho_k)`.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Damping of the fixed-point iteration.
pub const DAMPING: f64 = 0.5;

/// Erlang loads, one per class, all positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoVector(Vec<f64>);

impl RhoVector {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() || rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "rho must be a nonempty vector of positive reals, got {rho:?}"
            )));
        }
        Ok(Self(rho))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for RhoVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_rho(rho: &RhoVector, ss: &StateSpace) -> Result<()> {
    if rho.len() != ss.classes() {
        return Err(Error::DimensionMismatch {
            expected: ss.classes(),
            got: rho.len(),
        });
    }
    Ok(())
}

/// Unnormalized log weights `sum_k (theta_k ln rho_k - ln theta_k!)`.
fn log_weights(rho: &[f64], ss: &StateSpace) -> Vec<f64> {
    let logs: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
    (0..ss.len())
        .map(|i| (0..ss.classes()).map(|k| ss.count(k, i) * logs[k]).sum::<f64>() - ss.log_factorial(i))
        .collect()
}

/// `ln Z(rho)` computed with a log-sum-exp shift.
pub fn log_partition(rho: &RhoVector, ss: &StateSpace) -> Result<f64> {
    check_rho(rho, ss)?;
    let w = log_weights(rho.as_slice(), ss);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + w.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

fn nu_raw(rho: &[f64], ss: &StateSpace) -> Vec<f64> {
    let mut w = log_weights(rho, ss);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// The Erlang measure `nu(rho)`. Always evaluated in log space.
pub fn erlang_nu(rho: &RhoVector, ss: &StateSpace) -> Result<Occupancy> {
    check_rho(rho, ss)?;
    Ok(Occupancy::from_vec_unchecked(nu_raw(rho.as_slice(), ss)))
}

fn moments(nu: &[f64], ss: &StateSpace) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = ss.classes();
    let mut mean = vec![0.0; k];
    for (i, v) in nu.iter().enumerate() {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += ss.count(c, i) * v;
        }
    }
    let mut cov = vec![vec![0.0; k]; k];
    for (i, v) in nu.iter().enumerate() {
        for a in 0..k {
            let da = ss.count(a, i) - mean[a];
            for b in 0..k {
                cov[a][b] += v * da * (ss.count(b, i) - mean[b]);
            }
        }
    }
    (mean, cov)
}

/// Right-hand side of the fixed-point equation.
fn fixed_point_map(rho: &[f64], ss: &StateSpace, p: &ModelParams) -> Vec<f64> {
    let nu = nu_raw(rho, ss);
    let (mean, _) = moments(&nu, ss);
    (0..p.classes)
        .map(|k| (p.alpha[k] + p.gamma[k] * mean[k]) / p.leave_rate(k))
        .collect()
}

/// Component k: `rho_k - (alpha_k + gamma_k sum_theta theta_k nu_theta(rho)) / (gamma_k + delta_k)`.
pub fn fixed_point_residual(rho: &RhoVector, ss: &StateSpace, p: &ModelParams) -> Result<Vec<f64>> {
    check_rho(rho, ss)?;
    let rhs = fixed_point_map(rho.as_slice(), ss, p);
    Ok(rho.as_slice().iter().zip(rhs).map(|(r, f)| r - f).collect())
}

fn scaled_residual_norm(rho: &[f64], res: &[f64]) -> f64 {
    rho.iter()
        .zip(res)
        .map(|(r, f)| f.abs() / r.max(1.0))
        .fold(0.0, f64::max)
}

/// Residual and its Jacobian. `d E[theta_k] / d rho_l = Cov(theta_k, theta_l) / rho_l`.
fn residual_and_jacobian(rho: &[f64], ss: &StateSpace, p: &ModelParams) -> (Vec<f64>, DMatrix<f64>) {
    let k = p.classes;
    let nu = nu_raw(rho, ss);
    let (mean, cov) = moments(&nu, ss);
    let res: Vec<f64> = (0..k)
        .map(|c| rho[c] - (p.alpha[c] + p.gamma[c] * mean[c]) / p.leave_rate(c))
        .collect();
    let jac = DMatrix::from_fn(k, k, |a, b| {
        let id = if a == b { 1.0 } else { 0.0 };
        id - p.gamma[a] / p.leave_rate(a) * cov[a][b] / rho[b]
    });
    (res, jac)
}

/// Damped Newton on the residual with backtracking that keeps `rho > 0`.
fn newton_polish(start: &[f64], ss: &StateSpace, p: &ModelParams) -> Option<Vec<f64>> {
    let mut rho = start.to_vec();
    let (mut res, mut jac) = residual_and_jacobian(&rho, ss, p);
    let mut norm = scaled_residual_norm(&rho, &res);
    for _ in 0..200 {
        if norm < 1e-14 {
            break;
        }
        let rhs = DVector::from_iterator(res.len(), res.iter().map(|v| -v));
        let step = jac.clone().lu().solve(&rhs)?;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = rho.iter().zip(step.iter()).map(|(r, d)| r + t * d).collect();
            if trial.iter().all(|r| *r > 0.0) {
                let (tres, tjac) = residual_and_jacobian(&trial, ss, p);
                let tnorm = scaled_residual_norm(&trial, &tres);
                if tnorm < (1.0 - 1e-4 * t) * norm || tnorm < 1e-14 {
                    rho = trial;
                    res = tres;
                    jac = tjac;
                    norm = tnorm;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (norm < ROOT_TOL).then_some(rho)
}

fn damped_iteration(start: &[f64], ss: &StateSpace, p: &ModelParams, iterations: usize) -> Vec<f64> {
    let mut rho = start.to_vec();
    for _ in 0..iterations {
        let rhs = fixed_point_map(&rho, ss, p);
        let mut change = 0.0f64;
        for (r, f) in rho.iter_mut().zip(rhs) {
            let next = (1.0 - DAMPING) * *r + DAMPING * f;
            change = change.max((next - *r).abs() / r.max(1.0));
            *r = next;
        }
        if change < 1e-13 {
            break;
        }
    }
    rho
}

/// Per-coordinate log-spaced start grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub ranges: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
}

impl ScanGrid {
    /// Covers the box that provably contains every equilibrium:
    /// `alpha_k/(gamma_k+delta_k) < rho_k <= (alpha_k + gamma_k max theta_k)/(gamma_k+delta_k)`.
    /// 64 points per coordinate, thinned so the grid has at most 4096 starts.
    pub fn default_for(ss: &StateSpace, p: &ModelParams) -> Self {
        let k = p.classes;
        let per = if k <= 2 {
            64
        } else {
            (4096f64.powf(1.0 / k as f64).floor() as usize).max(2)
        };
        let ranges = (0..k)
            .map(|c| {
                let max_count = (0..ss.len()).map(|i| ss.count(c, i)).fold(0.0, f64::max);
                let lo = p.alpha[c] / p.leave_rate(c);
                let hi = (p.alpha[c] + p.gamma[c] * max_count) / p.leave_rate(c);
                (0.9 * lo, 1.1 * hi)
            })
            .collect();
        Self {
            ranges,
            counts: vec![per; k],
        }
    }

    pub fn starts(&self) -> Result<Vec<Vec<f64>>> {
        if self.ranges.len() != self.counts.len() || self.ranges.is_empty() {
            return Err(Error::InvalidArgument("scan grid ranges/counts mismatch".into()));
        }
        let axes: Vec<Vec<f64>> = self
            .ranges
            .iter()
            .zip(&self.counts)
            .map(|(&(lo, hi), &n)| log_space(lo, hi, n))
            .collect::<Result<_>>()?;
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut next = prefix.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

pub(crate) fn log_space(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return Err(Error::InvalidArgument(format!(
            "log-spaced range needs 0 < lo <= hi and n >= 1, got [{lo}, {hi}] x {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Stability type read from the Hessian of `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    LocalMin,
    Saddle,
    LocalMax,
    Degenerate,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LocalMin => "local-min",
            Self::Saddle => "saddle",
            Self::LocalMax => "local-max",
            Self::Degenerate => "degenerate",
        }
    }

    pub fn from_eigenvalues(eigenvalues: &[f64]) -> Self {
        if eigenvalues.iter().any(|e| e.abs() <= EIGEN_THRESHOLD) {
            Self::Degenerate
        } else if eigenvalues.iter().all(|e| *e > 0.0) {
            Self::LocalMin
        } else if eigenvalues.iter().all(|e| *e < 0.0) {
            Self::LocalMax
        } else {
            Self::Saddle
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A located equilibrium with its potential values and curvature.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub rho: RhoVector,
    pub nu: Occupancy,
    /// Fixed-point residual, sup norm.
    pub residual: f64,
    pub phi: f64,
    pub g: f64,
    pub hessian: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors matching `eigenvalues`, one per column.
    pub eigenvectors: DMatrix<f64>,
    pub classification: Classification,
}

/// All equilibria found by a scan, sorted lexicographically by `rho`.
#[derive(Debug, Clone)]
pub struct EquilibriumSet {
    pub equilibria: Vec<Equilibrium>,
    pub warnings: Vec<String>,
    pub starts: usize,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.equilibria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equilibria.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Equilibrium> {
        self.equilibria.iter()
    }
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Multistart solver: from every grid point, Newton on the residual directly
/// and after a damped fixed-point iteration; roots are merged within
/// [`DEDUP_TOL`].
pub fn solve_equilibria_generic(ss: &StateSpace, p: &ModelParams, grid: &ScanGrid) -> Result<EquilibriumSet> {
    let starts = grid.starts()?;
    let mut found: Vec<Vec<f64>> = starts
        .par_iter()
        .flat_map_iter(|s| {
            let direct = newton_polish(s, ss, p);
            let relaxed = newton_polish(&damped_iteration(s, ss, p, 500), ss, p);
            direct.into_iter().chain(relaxed)
        })
        .collect();
    found.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut warnings = Vec::new();
    for r in found {
        match roots.iter().map(|q| relative_gap(q, &r)).reduce(f64::min) {
            Some(gap) if gap <= DEDUP_TOL => {}
            Some(gap) if gap <= NEAR_PAIR_TOL => {
                let msg = format!("possible near-degenerate pair: root {r:?} lies {gap:.3e} from an accepted root");
                log::warn!("{msg}");
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
                roots.push(r);
            }
            _ => roots.push(r),
        }
    }
    let equilibria = roots
        .into_iter()
        .map(|r| classify(&RhoVector::new(r)?, ss, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSet {
        equilibria,
        warnings,
        starts: starts.len(),
    })
}

/// `phi(rho) = -ln Z(rho) + sum_k ((gamma_k+delta_k)/gamma_k rho_k - alpha_k/gamma_k ln rho_k)`.
pub fn phi(rho: &RhoVector, ss: &StateSpace, p: &ModelParams) -> Result<f64> {
    let lz = log_partition(rho, ss)?;
    Ok(-lz
        + (0..p.classes)
            .map(|k| p.leave_rate(k) / p.gamma[k] * rho[k] - p.alpha[k] / p.gamma[k] * rho[k].ln())
            .sum::<f64>())
}

/// Constant `sum_k alpha_k/gamma_k (ln(alpha_k/(gamma_k+delta_k)) - 1)` linking
/// `g(nu(rho))` and `phi(rho)` at equilibria.
pub fn g_phi_offset(p: &ModelParams) -> f64 {
    (0..p.classes)
        .map(|k| p.alpha[k] / p.gamma[k] * ((p.alpha[k] / p.leave_rate(k)).ln() - 1.0))
        .sum()
}

/// Central finite-difference Hessian of `phi` with steps `step * max(1, rho_k)`.
pub fn phi_hessian(rho: &RhoVector, ss: &StateSpace, p: &ModelParams, step: f64) -> Result<DMatrix<f64>> {
    let k = p.classes;
    let h: Vec<f64> = rho.as_slice().iter().map(|r| step * r.max(1.0)).collect();
    let eval = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut r = rho.as_slice().to_vec();
        for &(c, d) in shift {
            r[c] += d;
        }
        phi(&RhoVector::new(r)?, ss, p)
    };
    let center = eval(&[])?;
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k {
        let plus = eval(&[(a, h[a])])?;
        let minus = eval(&[(a, -h[a])])?;
        m[(a, a)] = (plus - 2.0 * center + minus) / (h[a] * h[a]);
        for b in (a + 1)..k {
            let pp = eval(&[(a, h[a]), (b, h[b])])?;
            let pm = eval(&[(a, h[a]), (b, -h[b])])?;
            let mp = eval(&[(a, -h[a]), (b, h[b])])?;
            let mm = eval(&[(a, -h[a]), (b, -h[b])])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[a] * h[b]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Builds the [`Equilibrium`] record for a root of the fixed-point equation.
pub fn classify(rho: &RhoVector, ss: &StateSpace, p: &ModelParams) -> Result<Equilibrium> {
    classify_with_step(rho, ss, p, HESSIAN_STEP)
}

pub fn classify_with_step(rho: &RhoVector, ss: &StateSpace, p: &ModelParams, step: f64) -> Result<Equilibrium> {
    let res = fixed_point_residual(rho, ss, p)?;
    let residual = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scaled_residual_norm(rho.as_slice(), &res) >= CLASSIFY_TOL {
        return Err(Error::InvalidArgument(format!(
            "rho {:?} is not an equilibrium (residual {residual:e})",
            rho.as_slice()
        )));
    }
    let nu = erlang_nu(rho, ss)?;
    let hessian = phi_hessian(rho, ss, p, step)?;
    let (eigenvalues, eigenvectors) = sorted_eigen(&hessian);
    Ok(Equilibrium {
        rho: rho.clone(),
        phi: phi(rho, ss, p)?,
        g: lyapunov_g(&nu, ss, p),
        nu,
        residual,
        hessian,
        classification: Classification::from_eigenvalues(&eigenvalues),
        eigenvalues,
        eigenvectors,
    })
}

/// `EQ_k = rho_k (1 - P_nu(class k blocked))`.
pub fn expected_customers(rho: &RhoVector, ss: &StateSpace, p: &ModelParams) -> Result<Vec<f64>> {
    let nu = erlang_nu(rho, ss)?;
    Ok((0..p.classes)
        .map(|k| {
            let admitted: f64 = (0..ss.len()).filter(|&i| ss.accepts(k, i)).map(|i| nu[i]).sum();
            rho[k] * admitted
        })
        .collect())
}

fn require_two_class(p: &ModelParams) -> Result<()> {
    if p.classes == 2 && p.size[0] == 1 && p.size[1] == p.capacity {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "closed forms need two classes with A = (1, C)".into(),
        ))
    }
}

/// `rho_1^C / C!`, evaluated through logs.
fn top_term(rho1: f64, capacity: u32) -> f64 {
    (f64::from(capacity) * rho1.ln() - ln_factorial(capacity)).exp()
}

/// Coefficients `(a, b, c)` of `a rho_2^2 + b rho_2 + c = 0` for the class-2 balance.
pub fn two_class_quadratic(rho1: f64, p: &ModelParams) -> Result<(f64, f64, f64)> {
    require_two_class(p)?;
    if !(rho1 > 0.0 && rho1.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho1 must be positive, got {rho1}")));
    }
    let (a1, a2) = (p.alpha[0], p.alpha[1]);
    let (g1, g2) = (p.gamma[0], p.gamma[1]);
    let (d1, d2) = (p.delta[0], p.delta[1]);
    let top = top_term(rho1, p.capacity);
    let qa = g1 * (g2 + d2);
    let qb = g1 * (g2 + d2) * top - a2 * g1 - g2 * (a1 / rho1 - d1);
    let qc = -a2 * g1 * top;
    Ok((qa, qb, qc))
}

/// Positive root `rho_2(rho_1)` of the class-2 balance quadratic.
pub fn two_class_rho2(rho1: f64, p: &ModelParams) -> Result<f64> {
    let (qa, qb, qc) = two_class_quadratic(rho1, p)?;
    let disc = qb * qb - 4.0 * qa * qc;
    assert!(disc >= 0.0, "discriminant {disc} < 0 although c <= 0 < a");
    let sq = disc.sqrt();
    // Stable form: avoid -b + sqrt(b^2 + ...) cancellation when b > 0.
    let root = if qb <= 0.0 {
        (-qb + sq) / (2.0 * qa)
    } else {
        -2.0 * qc / (qb + sq)
    };
    Ok(root)
}

/// `h(rho_1) = Z(rho) + ... `: the class-1 balance written as
/// `sum_{i<=C} rho_1^i/i! + rho_2 - gamma_1 rho_1 (rho_1^C/C! + rho_2) / (alpha_1 - delta_1 rho_1)`
/// along `rho_2 = rho_2(rho_1)`. Zeros are the equilibria.
pub fn two_class_h(rho1: f64, p: &ModelParams) -> Result<f64> {
    require_two_class(p)?;
    let (a1, g1, d1) = (p.alpha[0], p.gamma[0], p.delta[0]);
    let denom = a1 - d1 * rho1;
    if d1 > 0.0 && (rho1 - a1 / d1).abs() <= 1e-9 {
        return Err(Error::Singular(format!("rho1 = {rho1} is at the pole alpha_1/delta_1")));
    }
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "rho1 = {rho1} violates alpha_1 > delta_1 rho_1"
        )));
    }
    let rho2 = two_class_rho2(rho1, p)?;
    let top = top_term(rho1, p.capacity);
    let mut series = 0.0;
    let mut term = 1.0;
    for i in 0..=p.capacity {
        if i > 0 {
            term *= rho1 / f64::from(i);
        }
        series += term;
    }
    Ok(series + rho2 - g1 * rho1 / denom * (top + rho2))
}

/// Scan range for `h`: log-spaced on `[1e-3, 0.999 alpha_1/delta_1]`. With
/// `delta_1 = 0` the upper end is twice the largest admissible load.
pub fn h_scan_range(p: &ModelParams) -> (f64, f64) {
    let (a1, g1, d1) = (p.alpha[0], p.gamma[0], p.delta[0]);
    let hi = if d1 > 0.0 {
        0.999 * a1 / d1
    } else {
        2.0 * (a1 + g1 * f64::from(p.capacity)) / g1
    };
    (1e-3, hi)
}

/// `n` log-spaced samples of `h`.
pub fn h_curve(p: &ModelParams, n: usize) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = h_scan_range(p);
    log_space(lo, hi, n)?
        .into_iter()
        .map(|x| Ok((x, two_class_h(x, p)?)))
        .collect()
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `h`, located by sign changes on an `n`-point log scan and bisection.
pub fn two_class_h_roots(p: &ModelParams, n: usize) -> Result<Vec<f64>> {
    let curve = h_curve(p, n)?;
    let f = |x: f64| two_class_h(x, p).unwrap_or(f64::NAN);
    Ok(curve
        .windows(2)
        .filter(|w| w[0].1.signum() != w[1].1.signum())
        .map(|w| bisect(f, w[0].0, w[1].0))
        .collect())
}

/// Interior local extremum of `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub rho1: f64,
    pub value: f64,
    pub is_max: bool,
}

/// Local extrema of `h` from the scan, refined by golden-section search.
pub fn two_class_h_extrema(p: &ModelParams, n: usize) -> Result<Vec<Extremum>> {
    let curve = h_curve(p, n)?;
    let mut out = Vec::new();
    for i in 1..curve.len() - 1 {
        let (l, c, r) = (curve[i - 1].1, curve[i].1, curve[i + 1].1);
        let is_max = c > l && c >= r;
        let is_min = c < l && c <= r;
        if !(is_max || is_min) {
            continue;
        }
        let sign = if is_max { -1.0 } else { 1.0 };
        let f = |x: f64| sign * two_class_h(x, p).unwrap_or(f64::INFINITY);
        let x = golden_section(f, curve[i - 1].0, curve[i + 1].0, 1e-12);
        out.push(Extremum {
            rho1: x,
            value: two_class_h(x, p)?,
            is_max,
        });
    }
    Ok(out)
}

pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > rel_tol * (a.abs() + b.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `phi` on a rectangular grid, row-major over `(rho_1, rho_2)`.
pub fn phi_grid(
    ss: &StateSpace,
    p: &ModelParams,
    rho1: (f64, f64, usize),
    rho2: (f64, f64, usize),
) -> Result<Vec<(f64, f64, f64)>> {
    if p.classes != 2 {
        return Err(Error::InvalidArgument("phi grid needs two classes".into()));
    }
    let xs = linspace(rho1.0, rho1.1, rho1.2);
    let ys = linspace(rho2.0, rho2.1, rho2.2);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            out.push((x, y, phi(&RhoVector::new(vec![x, y])?, ss, p)?));
        }
    }
    Ok(out)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
