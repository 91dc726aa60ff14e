//! Hamiltonian `H(y, lambda)` of the jump dynamics and its Legendre transform
//! `L(y, z) = sup_lambda (lambda . z - H(y, lambda))`.
//!
//! Per class k, with `x_theta = lambda_{theta+e_k} - lambda_theta` on admitting
//! states and `w_theta = lambda_{theta-e_k} - lambda_theta` on occupied ones:
//!
//! ```text
//! U~ = sum e^x y      P = sum_{Theta_k^+} y       B = 1 - P (blocked mass)
//! V~ = sum e^w th y  Q = sum th y
//! H_k = alpha (U~ - P) + (delta + gamma B)(V~ - Q) + gamma (U~ V~ - P Q)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Occupancy, StateSpace, TangentVector};

/// Largest admissible `|lambda_theta|`.
pub const LAMBDA_LIMIT: f64 = 500.0;
/// Exponents are clamped here before `exp`.
const EXP_CLAMP: f64 = 700.0;
/// Occupancies below this are treated as zero when building classes.
pub const SUPPORT_CLIP: f64 = 1e-12;
/// Default class-sum tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Dual variable, one entry per state.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        check_lambda(&lambda)?;
        Ok(Self(lambda))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Shifted so the first state carries 0.
    pub fn gauge_fixed(&self) -> Self {
        let s = self.0.first().copied().unwrap_or(0.0);
        Self(self.0.iter().map(|v| v - s).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for DualVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_lambda(lambda: &[f64]) -> Result<()> {
    match lambda.iter().find(|v| !(v.abs() <= LAMBDA_LIMIT)) {
        Some(&value) => Err(Error::DualOutOfRange {
            value,
            limit: LAMBDA_LIMIT,
        }),
        None => Ok(()),
    }
}

#[inline]
fn cexp(x: f64) -> f64 {
    x.min(EXP_CLAMP).exp()
}

/// Per-class aggregates at a given `(y, lambda)`.
struct ClassSums {
    u: f64,
    p: f64,
    v: f64,
    q: f64,
    b: f64,
}

/// `live[i]` false means state i is pinned at `lambda = -inf`: every edge
/// touching it is dropped.
fn class_sums(y: &[f64], lam: &[f64], ss: &StateSpace, k: usize, live: Option<&[bool]>) -> ClassSums {
    let alive = |i: usize| live.is_none_or(|l| l[i]);
    let (mut u, mut p, mut v, mut q, mut b) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        match ss.up(k, i) {
            Some(j) => {
                p += yi;
                if alive(i) && alive(j) {
                    u += cexp(lam[j] - lam[i]) * yi;
                }
            }
            None => b += yi,
        }
        if let Some(j) = ss.down(k, i) {
            let t = ss.count(k, i);
            q += t * yi;
            if alive(i) && alive(j) {
                v += cexp(lam[j] - lam[i]) * t * yi;
            }
        }
    }
    ClassSums { u, p, v, q, b }
}

fn ham_raw(y: &[f64], lam: &[f64], ss: &StateSpace, p: &ModelParams, live: Option<&[bool]>) -> f64 {
    (0..p.classes)
        .map(|k| {
            let s = class_sums(y, lam, ss, k, live);
            let (a, g, d) = (p.alpha[k], p.gamma[k], p.delta[k]);
            a * (s.u - s.p) + (d + g * s.b) * (s.v - s.q) + g * (s.u * s.v - s.p * s.q)
        })
        .sum()
}

/// Gradient (and optionally Hessian) of `H` in lambda.
fn ham_derivatives(
    y: &[f64],
    lam: &[f64],
    ss: &StateSpace,
    p: &ModelParams,
    live: Option<&[bool]>,
    mut hess: Option<&mut DMatrix<f64>>,
) -> Vec<f64> {
    let n = y.len();
    let alive = |i: usize| live.is_none_or(|l| l[i]);
    let mut grad = vec![0.0; n];
    if let Some(h) = hess.as_deref_mut() {
        h.fill(0.0);
    }
    let mut gu = vec![0.0; n];
    let mut gv = vec![0.0; n];
    for k in 0..p.classes {
        let s = class_sums(y, lam, ss, k, live);
        let (a, g, d) = (p.alpha[k], p.gamma[k], p.delta[k]);
        let cu = a + g * s.v;
        let cd = d + g * s.b + g * s.u;
        gu.iter_mut().for_each(|v| *v = 0.0);
        gv.iter_mut().for_each(|v| *v = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if let Some(j) = ss.up(k, i) {
                if alive(i) && alive(j) {
                    let wgt = cexp(lam[j] - lam[i]) * yi;
                    gu[j] += wgt;
                    gu[i] -= wgt;
                    if let Some(h) = hess.as_deref_mut() {
                        add_edge(h, i, j, cu * wgt);
                    }
                }
            }
            if let Some(j) = ss.down(k, i) {
                if alive(i) && alive(j) {
                    let wgt = cexp(lam[j] - lam[i]) * ss.count(k, i) * yi;
                    gv[j] += wgt;
                    gv[i] -= wgt;
                    if let Some(h) = hess.as_deref_mut() {
                        add_edge(h, i, j, cd * wgt);
                    }
                }
            }
        }
        for i in 0..n {
            grad[i] += cu * gu[i] + cd * gv[i];
        }
        if g > 0.0 {
            if let Some(h) = hess.as_deref_mut() {
                let nz: Vec<usize> = (0..n).filter(|&i| gu[i] != 0.0 || gv[i] != 0.0).collect();
                for &r in &nz {
                    for &c in &nz {
                        h[(r, c)] += g * (gu[r] * gv[c] + gv[r] * gu[c]);
                    }
                }
            }
        }
    }
    grad
}

fn add_edge(h: &mut DMatrix<f64>, i: usize, j: usize, w: f64) {
    h[(i, i)] += w;
    h[(j, j)] += w;
    h[(i, j)] -= w;
    h[(j, i)] -= w;
}

fn check_inputs(y: &Occupancy, lambda: &DualVector, ss: &StateSpace) -> Result<()> {
    ss.check_len(y.len())?;
    ss.check_len(lambda.len())?;
    check_lambda(lambda.as_slice())
}

/// `H(y, lambda)`. Vanishes at `lambda = 0`.
pub fn hamiltonian(y: &Occupancy, lambda: &DualVector, ss: &StateSpace, p: &ModelParams) -> Result<f64> {
    check_inputs(y, lambda, ss)?;
    Ok(ham_raw(y.as_slice(), lambda.as_slice(), ss, p, None))
}

/// `grad_lambda H(y, lambda)`, all `|Theta|` components; they sum to zero.
/// At `lambda = 0` this is the mean-field vector field.
pub fn grad_hamiltonian(y: &Occupancy, lambda: &DualVector, ss: &StateSpace, p: &ModelParams) -> Result<TangentVector> {
    check_inputs(y, lambda, ss)?;
    Ok(TangentVector::from_vec_unchecked(ham_derivatives(
        y.as_slice(),
        lambda.as_slice(),
        ss,
        p,
        None,
        None,
    )))
}

/// Hessian of `H` in lambda. Positive semidefinite; constants are in its kernel.
pub fn hessian_hamiltonian(
    y: &Occupancy,
    lambda: &DualVector,
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<DMatrix<f64>> {
    check_inputs(y, lambda, ss)?;
    let mut h = DMatrix::zeros(ss.len(), ss.len());
    ham_derivatives(y.as_slice(), lambda.as_slice(), ss, p, None, Some(&mut h));
    Ok(h)
}

pub(crate) fn dy_hamiltonian_raw(y: &[f64], lam: &[f64], ss: &StateSpace, p: &ModelParams) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    for k in 0..p.classes {
        let s = class_sums(y, lam, ss, k, None);
        let (a, g, d) = (p.alpha[k], p.gamma[k], p.delta[k]);
        let leave = d + g * s.b;
        for (i, o) in out.iter_mut().enumerate() {
            let (ex, plus) = match ss.up(k, i) {
                Some(j) => (cexp(lam[j] - lam[i]), true),
                None => (0.0, false),
            };
            let t = ss.count(k, i);
            let ew = match ss.down(k, i) {
                Some(j) => cexp(lam[j] - lam[i]),
                None => 0.0,
            };
            let mut v = 0.0;
            if plus {
                v += a * (ex - 1.0) + g * (ex * s.v - s.q);
            } else {
                v += g * (s.v - s.q);
            }
            if t > 0.0 {
                v += leave * (ew - 1.0) * t + g * (s.u * ew * t - s.p * t);
            }
            *o += v;
        }
    }
    out
}

/// Partial derivatives of `H` in the occupancy coordinates at fixed lambda.
pub fn dy_hamiltonian(y: &Occupancy, lambda: &DualVector, ss: &StateSpace, p: &ModelParams) -> Result<Vec<f64>> {
    check_inputs(y, lambda, ss)?;
    Ok(dy_hamiltonian_raw(y.as_slice(), lambda.as_slice(), ss, p))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn classes_of(y: &[f64], ss: &StateSpace) -> Vec<Vec<usize>> {
    let pos = |i: usize| y[i] > 0.0;
    let mut uf = UnionFind((0..y.len()).collect());
    for i in (0..y.len()).filter(|&i| pos(i)) {
        for k in 0..ss.classes() {
            if let Some(j) = ss.up(k, i) {
                if pos(j) {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; y.len()];
    for i in (0..y.len()).filter(|&i| pos(i)) {
        let r = uf.find(i);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(i);
    }
    out
}

/// Communication classes of the support `{theta : y_theta > 0}`, each sorted,
/// listed by smallest member.
pub fn communication_classes(y: &Occupancy, ss: &StateSpace) -> Result<Vec<Vec<usize>>> {
    ss.check_len(y.len())?;
    Ok(classes_of(y.as_slice(), ss))
}

/// Outcome of a Legendre transform.
#[derive(Debug, Clone)]
pub struct RateEval {
    /// `L(y, z)`, `+inf` when not finite.
    pub value: f64,
    /// Optimal lambda, zero at the first state of each class and off the support.
    pub maximizer: Option<DualVector>,
    pub finite: bool,
    pub classes: Vec<Vec<usize>>,
    pub iterations: usize,
    /// `||z - grad H(y, lambda*)||_inf` over the support.
    pub grad_norm: f64,
}

/// Settings for the dual maximization.
#[derive(Debug, Clone)]
pub struct LegendreOptions {
    /// Class-sum and off-support tolerance, scaled by `max(1, ||z||_inf)`.
    pub tol: f64,
    /// Stationarity target, scaled by `max(1, ||z||_inf)`.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            grad_tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// `L(y, z)` with default settings and class-sum tolerance `tol`.
pub fn lagrangian(y: &Occupancy, z: &TangentVector, ss: &StateSpace, p: &ModelParams, tol: f64) -> Result<RateEval> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let opts = LegendreOptions {
        tol,
        ..LegendreOptions::default()
    };
    lagrangian_with(y, z, ss, p, &opts, None)
}

/// `L(y, z)` starting Newton from `warm` (any gauge).
pub fn lagrangian_with(
    y: &Occupancy,
    z: &TangentVector,
    ss: &StateSpace,
    p: &ModelParams,
    opts: &LegendreOptions,
    warm: Option<&[f64]>,
) -> Result<RateEval> {
    ss.check_len(y.len())?;
    ss.check_len(z.len())?;
    if let Some(w) = warm {
        ss.check_len(w.len())?;
    }
    legendre(y.as_slice(), z.as_slice(), ss, p, opts, warm)
}

pub(crate) fn legendre(
    y_in: &[f64],
    z: &[f64],
    ss: &StateSpace,
    p: &ModelParams,
    opts: &LegendreOptions,
    warm: Option<&[f64]>,
) -> Result<RateEval> {
    let n = y_in.len();
    let y: Vec<f64> = y_in.iter().map(|&v| if v < SUPPORT_CLIP { 0.0 } else { v }).collect();
    let zscale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = opts.tol * zscale;
    let classes = classes_of(&y, ss);
    let infinite = |classes: Vec<Vec<usize>>| RateEval {
        value: f64::INFINITY,
        maximizer: None,
        finite: false,
        classes,
        iterations: 0,
        grad_norm: f64::INFINITY,
    };
    if (0..n).any(|i| y[i] == 0.0 && z[i].abs() > tol) {
        return Ok(infinite(classes));
    }
    if classes.iter().any(|c| c.iter().map(|&i| z[i]).sum::<f64>().abs() > tol) {
        return Ok(infinite(classes));
    }

    let live: Vec<bool> = y.iter().map(|v| *v > 0.0).collect();
    let mut pinned = vec![false; n];
    for c in &classes {
        pinned[c[0]] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| live[i] && !pinned[i]).collect();
    let live_opt = Some(live.as_slice());

    let mut lam = vec![0.0; n];
    if let Some(w) = warm {
        for c in &classes {
            let base = w[c[0]];
            for &i in c {
                lam[i] = (w[i] - base).clamp(-LAMBDA_LIMIT, LAMBDA_LIMIT);
            }
        }
    }
    let objective = |lam: &[f64]| -> f64 {
        let lz: f64 = (0..n).filter(|&i| live[i]).map(|i| lam[i] * z[i]).sum();
        lz - ham_raw(&y, lam, ss, p, live_opt)
    };
    let residual = |grad: &[f64]| -> Vec<f64> { (0..n).map(|i| if live[i] { z[i] - grad[i] } else { 0.0 }).collect() };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut hess = DMatrix::zeros(n, n);
    let mut grad = ham_derivatives(&y, &lam, ss, p, live_opt, Some(&mut hess));
    let mut g = residual(&grad);
    let mut gnorm = sup(&g);
    let mut f = objective(&lam);
    if f < 0.0 && warm.is_some() {
        // A poor warm start can be worse than the feasible point lambda = 0.
        lam.iter_mut().for_each(|v| *v = 0.0);
        grad = ham_derivatives(&y, &lam, ss, p, live_opt, Some(&mut hess));
        g = residual(&grad);
        gnorm = sup(&g);
        f = 0.0;
    }
    let target = opts.grad_tol * zscale;
    let mut iterations = 0;
    while gnorm >= target && !free.is_empty() {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                best_value: f.max(0.0),
                grad_norm: gnorm,
            });
        }
        iterations += 1;
        let m = free.len();
        let gf = DVector::from_iterator(m, free.iter().map(|&i| g[i]));
        let hf = DMatrix::from_fn(m, m, |a, b| hess[(free[a], free[b])]);
        let newton = Cholesky::new(hf).map(|c| c.solve(&gf));
        let mut accepted = false;
        let mut out_of_range = None;
        for (dir, is_newton) in newton
            .into_iter()
            .map(|d| (d, true))
            .chain(std::iter::once((gf.clone(), false)))
        {
            let slope = gf.dot(&dir);
            if !(slope > 0.0) {
                continue;
            }
            let mut t = 1.0;
            if !is_newton {
                // Gradient step scaled to move lambda by at most 1.
                let big = dir.amax();
                if big > 1.0 {
                    t = 1.0 / big;
                }
            }
            for _ in 0..60 {
                let mut trial = lam.clone();
                for (a, &i) in free.iter().enumerate() {
                    trial[i] += t * dir[a];
                }
                if let Some(&bad) = trial.iter().find(|v| v.abs() > LAMBDA_LIMIT) {
                    out_of_range = Some(bad);
                    t *= 0.5;
                    continue;
                }
                let ft = objective(&trial);
                let armijo = ft >= f + 1e-4 * t * slope;
                let mut thess = DMatrix::zeros(n, n);
                let tgrad = ham_derivatives(&y, &trial, ss, p, live_opt, Some(&mut thess));
                let tg = residual(&tgrad);
                let tnorm = sup(&tg);
                // Near the optimum f is flat to rounding; a full Newton step
                // that halves the stationarity residual is accepted as well.
                if (armijo && ft.is_finite()) || (is_newton && t == 1.0 && tnorm < 0.5 * gnorm) {
                    lam = trial;
                    f = ft.max(f);
                    hess = thess;
                    g = tg;
                    gnorm = tnorm;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            if let Some(value) = out_of_range {
                return Err(Error::DualOutOfRange {
                    value,
                    limit: LAMBDA_LIMIT,
                });
            }
            return Err(Error::NonConvergence {
                iterations,
                best_value: f.max(0.0),
                grad_norm: gnorm,
            });
        }
    }
    let value = objective(&lam).max(0.0);
    Ok(RateEval {
        value,
        maximizer: Some(DualVector(lam)),
        finite: true,
        classes,
        iterations,
        grad_norm: gnorm,
    })
}

/// Maxima of the three optimizer quantities, each divided by `1 + sum|z|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub arrival: f64,
    pub departure: f64,
    pub product: f64,
}

impl BoundSample {
    pub fn max(&self) -> f64 {
        self.arrival.max(self.departure).max(self.product)
    }
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub samples: Vec<BoundSample>,
    pub max_ratio: f64,
}

/// For each sample and each `(k, theta in Theta_k^+, theta' in Theta_k^-)`,
/// evaluates `e^{x_theta} y_theta`, `e^{w_theta'} y_theta'` and their product
/// at the maximizer, relative to `1 + sum|z|`.
pub fn optimizer_bound_report(
    samples: &[(Occupancy, TangentVector)],
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<BoundReport> {
    let mut out = Vec::with_capacity(samples.len());
    for (y, z) in samples {
        let eval = lagrangian(y, z, ss, p, DEFAULT_TOL)?;
        let lam = eval
            .maximizer
            .ok_or_else(|| Error::InvalidArgument("bound report needs finite samples".into()))?;
        let lam = lam.as_slice();
        let scale = 1.0 + z.as_slice().iter().map(|v| v.abs()).sum::<f64>();
        let mut s = BoundSample {
            arrival: 0.0,
            departure: 0.0,
            product: 0.0,
        };
        for k in 0..p.classes {
            let mut up_max = 0.0f64;
            let mut down_max = 0.0f64;
            for i in 0..ss.len() {
                if let Some(j) = ss.up(k, i) {
                    up_max = up_max.max(cexp(lam[j] - lam[i]) * y[i]);
                }
                if let Some(j) = ss.down(k, i) {
                    down_max = down_max.max(cexp(lam[j] - lam[i]) * y[i]);
                }
            }
            s.arrival = s.arrival.max(up_max / scale);
            s.departure = s.departure.max(down_max / scale);
            s.product = s.product.max(up_max * down_max / scale);
        }
        out.push(s);
    }
    let max_ratio = out.iter().map(BoundSample::max).fold(0.0, f64::max);
    Ok(BoundReport {
        samples: out,
        max_ratio,
    })
}
