//! Mean-field dynamics `dy/dt = V(y)` and the free-energy Lyapunov function.
//!
//! For class k, nodes in state `theta` admit a customer at rate
//! `b_k(y) = alpha_k + gamma_k * sum_theta theta_k y_theta` (exogenous
//! arrivals plus migrants) when `theta + e_k` fits, and lose one at rate
//! `(delta_k + gamma_k) theta_k`. A migrant that finds its target full leaves
//! the network, so the per-customer loss rate does not depend on `y`.

use crate::error::{Error, Result};
use crate::model::{ModelParams, Occupancy, StateSpace, TangentVector};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// `sum_theta theta_k y_theta`, the mean number of class-k customers per node.
pub fn mean_count(y: &[f64], ss: &StateSpace, k: usize) -> f64 {
    y.iter().enumerate().map(|(i, v)| ss.count(k, i) * v).sum()
}

/// `b_k(y) = alpha_k + gamma_k * mean_count_k(y)`.
pub fn admission_rate(y: &[f64], ss: &StateSpace, p: &ModelParams, k: usize) -> f64 {
    p.alpha[k] + p.gamma[k] * mean_count(y, ss, k)
}

fn field_into(y: &[f64], ss: &StateSpace, p: &ModelParams, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..p.classes {
        let b = admission_rate(y, ss, p, k);
        let leave = p.leave_rate(k);
        for i in 0..ss.len() {
            if let Some(j) = ss.up(k, i) {
                // admission i -> j and its reverse j -> i
                let flux = b * y[i] - leave * ss.count(k, j) * y[j];
                out[i] -= flux;
                out[j] += flux;
            }
        }
    }
}

/// The mean-field vector field `V(y)`.
pub fn vector_field(y: &Occupancy, ss: &StateSpace, p: &ModelParams) -> TangentVector {
    let mut out = vec![0.0; ss.len()];
    field_into(y.as_slice(), ss, p, &mut out);
    TangentVector::from_vec_unchecked(out)
}

/// Sampled solution of the mean-field ODE.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Occupancy>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Occupancy> {
        self.points.last()
    }
}

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub step: f64,
    /// Keep every `record_every`-th step (the final point is always kept).
    pub record_every: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            record_every: 1,
        }
    }
}

/// Integrates from `y0` over `[0, horizon]` with classical RK4 of fixed
/// `step`, recording every step.
pub fn integrate_ode(y0: &Occupancy, horizon: f64, step: f64, ss: &StateSpace, p: &ModelParams) -> Result<Trajectory> {
    integrate_ode_with(y0, horizon, OdeOptions { step, record_every: 1 }, ss, p)
}

pub fn integrate_ode_with(
    y0: &Occupancy,
    horizon: f64,
    opts: OdeOptions,
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<Trajectory> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {}", opts.step)));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    ss.check_len(y0.len())?;
    let n = ss.len();
    let steps = (horizon / opts.step).ceil() as usize;
    let every = opts.record_every.max(1);
    let mut times = vec![0.0];
    let mut points = vec![y0.clone()];
    let mut y = y0.as_slice().to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut t = 0.0;
    for s in 1..=steps {
        let h = if s == steps { horizon - t } else { opts.step };
        field_into(&y, ss, p, &mut k1);
        axpy_into(&y, 0.5 * h, &k1, &mut tmp);
        field_into(&tmp, ss, p, &mut k2);
        axpy_into(&y, 0.5 * h, &k2, &mut tmp);
        field_into(&tmp, ss, p, &mut k3);
        axpy_into(&y, h, &k3, &mut tmp);
        field_into(&tmp, ss, p, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = if s == steps { horizon } else { s as f64 * opts.step };
        let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > 2.0 || !worst.is_finite() {
            return Err(Error::Divergence { time: t, value: worst });
        }
        project_to_simplex(&mut y);
        if s % every == 0 || s == steps {
            times.push(t);
            points.push(Occupancy::from_vec_unchecked(y.clone()));
        }
    }
    Ok(Trajectory { times, points })
}

fn axpy_into(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}

/// Clips negative entries and renormalizes.
pub(crate) fn project_to_simplex(y: &mut [f64]) {
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= s);
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// The Lyapunov function
/// `g(y) = sum_theta y ln(prod_k theta_k! y) - sum_k (delta_k+gamma_k)/gamma_k [u ln u - u]`
/// with `u` running from `alpha_k/(delta_k+gamma_k)` to `b_k(y)/(delta_k+gamma_k)`.
/// Boundary points use `0 ln 0 = 0`.
pub fn lyapunov_g(y: &Occupancy, ss: &StateSpace, p: &ModelParams) -> f64 {
    let y = y.as_slice();
    let entropy: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &v)| xlogx(v) + v * ss.log_factorial(i))
        .sum();
    let psi = |u: f64| xlogx(u) - u;
    let mut field = 0.0;
    for k in 0..p.classes {
        let leave = p.leave_rate(k);
        let u1 = admission_rate(y, ss, p, k) / leave;
        let u0 = p.alpha[k] / leave;
        field += leave / p.gamma[k] * (psi(u1) - psi(u0));
    }
    entropy - field
}

/// `grad g(y) . V(y)`, summed over admission edges `theta - e_k -> theta`:
/// `sum ((delta_k+gamma_k) theta_k y_theta - b_k y_{theta-e_k}) ln(b_k y_{theta-e_k} / ((delta_k+gamma_k) theta_k y_theta))`.
///
/// Every term is `-(a - c) ln(a / c) <= 0`, so the value is nonpositive and
/// vanishes exactly at the Erlang equilibria.
pub fn dissipation(y: &Occupancy, ss: &StateSpace, p: &ModelParams) -> Result<f64> {
    let ys = y.as_slice();
    if let Some((index, &value)) = ys.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(Error::NotInterior { index, value });
    }
    let mut total = 0.0;
    for k in 0..p.classes {
        let b = admission_rate(ys, ss, p, k);
        let leave = p.leave_rate(k);
        for i in 0..ss.len() {
            if let Some(j) = ss.up(k, i) {
                let inflow = b * ys[i];
                let outflow = leave * ss.count(k, j) * ys[j];
                total += (outflow - inflow) * (inflow / outflow).ln();
            }
        }
    }
    Ok(total)
}
