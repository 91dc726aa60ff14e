//! Model parameters, the node state space and the occupancy simplex.
//!
//! A node holds `theta_k` class-k customers subject to `sum_k theta_k A_k <= C`.
//! Every vector indexed by states uses the lexicographic order produced by
//! [`StateSpace::build`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of node states.
pub const DEFAULT_STATE_CAP: usize = 10_000;

/// Tolerance within which an occupancy is silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Tolerance on the zero sum of a tangent vector.
pub const TANGENT_TOL: f64 = 1e-10;

/// Per-class rates and capacity requirements of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of classes.
    #[serde(rename = "K")]
    pub classes: usize,
    /// Node capacity in capacity units.
    #[serde(rename = "C")]
    pub capacity: u32,
    /// Capacity units needed by one class-k customer.
    #[serde(rename = "A")]
    pub size: Vec<u32>,
    /// Exogenous arrival rate per node.
    pub alpha: Vec<f64>,
    /// Migration rate per customer.
    pub gamma: Vec<f64>,
    /// Network departure rate per customer.
    pub delta: Vec<f64>,
}

impl ModelParams {
    pub fn new(capacity: u32, size: Vec<u32>, alpha: Vec<f64>, gamma: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let p = Self {
            classes: size.len(),
            capacity,
            size,
            alpha,
            gamma,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Two-class network where class 2 occupies a whole node:
    /// `C = 20, A = (1, 20), alpha = (.5, 9), gamma = (1, 1)`, both
    /// departure rates equal to `delta`.
    pub fn two_class_example(delta: f64) -> Self {
        Self::new(20, vec![1, 20], vec![0.5, 9.0], vec![1.0, 1.0], vec![delta, delta])
            .expect("example parameters are valid")
    }

    /// Single class, single slot: two node states (empty, busy).
    pub fn single_slot(alpha: f64, gamma: f64, delta: f64) -> Result<Self> {
        Self::new(1, vec![1], vec![alpha], vec![gamma], vec![delta])
    }

    /// The one-dimensional toy instance used throughout the test suites.
    pub fn toy() -> Self {
        Self::single_slot(0.3, 4.0, 0.05).expect("toy parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes;
        if k == 0 {
            return Err(Error::InvalidParams("K must be positive".into()));
        }
        for (name, len) in [
            ("A", self.size.len()),
            ("alpha", self.alpha.len()),
            ("gamma", self.gamma.len()),
            ("delta", self.delta.len()),
        ] {
            if len != k {
                return Err(Error::InvalidParams(format!(
                    "{name} has length {len}, expected K = {k}"
                )));
            }
        }
        if self.capacity == 0 {
            return Err(Error::InvalidParams("C must be positive".into()));
        }
        for c in 0..k {
            if self.size[c] == 0 {
                return Err(Error::InvalidParams(format!("A[{c}] must be >= 1")));
            }
            if !(self.alpha[c] > 0.0 && self.alpha[c].is_finite()) {
                return Err(Error::InvalidParams(format!("alpha[{c}] must be positive")));
            }
            if !(self.gamma[c] > 0.0 && self.gamma[c].is_finite()) {
                return Err(Error::InvalidParams(format!("gamma[{c}] must be positive")));
            }
            if !(self.delta[c] >= 0.0 && self.delta[c].is_finite()) {
                return Err(Error::InvalidParams(format!("delta[{c}] must be nonnegative")));
            }
        }
        let min_size = *self.size.iter().min().expect("K > 0");
        if self.capacity < min_size {
            return Err(Error::InvalidParams(format!(
                "C = {} is below min A = {min_size}; the state space would be a single point",
                self.capacity
            )));
        }
        Ok(())
    }

    /// `delta_k + gamma_k`, the per-customer rate of leaving a node.
    #[inline]
    pub fn leave_rate(&self, k: usize) -> f64 {
        self.delta[k] + self.gamma[k]
    }
}

/// Enumerated node states with neighbour tables.
#[derive(Debug, Clone)]
pub struct StateSpace {
    classes: usize,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    /// `up[k][i]` is the index of `states[i] + e_k` when it fits.
    up: Vec<Vec<Option<usize>>>,
    /// `down[k][i]` is the index of `states[i] - e_k` when `theta_k >= 1`.
    down: Vec<Vec<Option<usize>>>,
    /// `theta[k][i]` as a float, cached for the rate formulas.
    count: Vec<Vec<f64>>,
    /// `sum_k ln(theta_k!)` per state.
    log_fact: Vec<f64>,
}

impl StateSpace {
    pub fn build(params: &ModelParams) -> Result<Self> {
        Self::build_with_cap(params, DEFAULT_STATE_CAP)
    }

    pub fn build_with_cap(params: &ModelParams, cap: usize) -> Result<Self> {
        params.validate()?;
        let k = params.classes;
        let mut states = Vec::new();
        let mut current = vec![0u32; k];
        enumerate(params, 0, params.capacity, &mut current, &mut states, cap)?;
        if states.len() < 2 {
            return Err(Error::StateSpaceTooSmall(states.len()));
        }
        let index: HashMap<Vec<u32>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut up = vec![vec![None; states.len()]; k];
        let mut down = vec![vec![None; states.len()]; k];
        let mut count = vec![vec![0.0; states.len()]; k];
        for (i, s) in states.iter().enumerate() {
            for c in 0..k {
                count[c][i] = f64::from(s[c]);
                let mut t = s.clone();
                t[c] += 1;
                up[c][i] = index.get(&t).copied();
                if s[c] > 0 {
                    t[c] -= 2;
                    down[c][i] = index.get(&t).copied();
                }
            }
        }
        let log_fact = states
            .iter()
            .map(|s| s.iter().map(|&t| ln_factorial(t)).sum())
            .collect();
        Ok(Self {
            classes: k,
            states,
            index,
            up,
            down,
            count,
            log_fact,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, theta: &[u32]) -> Option<usize> {
        self.index.get(theta).copied()
    }

    /// Index of `theta + e_k`, or `None` when class k is blocked at `theta`.
    #[inline]
    pub fn up(&self, k: usize, i: usize) -> Option<usize> {
        self.up[k][i]
    }

    /// Index of `theta - e_k`, or `None` when `theta_k = 0`.
    #[inline]
    pub fn down(&self, k: usize, i: usize) -> Option<usize> {
        self.down[k][i]
    }

    /// `theta_k` of state `i`.
    #[inline]
    pub fn count(&self, k: usize, i: usize) -> f64 {
        self.count[k][i]
    }

    /// `sum_k ln(theta_k!)` of state `i`.
    #[inline]
    pub fn log_factorial(&self, i: usize) -> f64 {
        self.log_fact[i]
    }

    /// Whether class k can be admitted at state `i`.
    #[inline]
    pub fn accepts(&self, k: usize, i: usize) -> bool {
        self.up[k][i].is_some()
    }

    /// Label like `(3,0)` used in CSV headers.
    pub fn label(&self, i: usize) -> String {
        let parts: Vec<String> = self.states[i].iter().map(u32::to_string).collect();
        format!("({})", parts.join(";"))
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                got: len,
            })
        }
    }
}

pub(crate) fn ln_factorial(t: u32) -> f64 {
    (2..=t).map(|i| f64::from(i).ln()).sum()
}

fn enumerate(
    params: &ModelParams,
    k: usize,
    remaining: u32,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
    cap: usize,
) -> Result<()> {
    if k == params.classes {
        if out.len() == cap {
            // Count the rest cheaply to report the true size.
            return Err(Error::StateSpaceTooLarge { size: cap + 1, cap });
        }
        out.push(current.clone());
        return Ok(());
    }
    let max = remaining / params.size[k];
    for t in 0..=max {
        current[k] = t;
        enumerate(params, k + 1, remaining - t * params.size[k], current, out, cap)?;
    }
    current[k] = 0;
    Ok(())
}

/// A probability vector over the node states.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy(Vec<f64>);

impl Occupancy {
    /// Accepts `y` when its entries are nonnegative and it sums to 1 within
    /// [`RENORMALIZE_TOL`]; the result is renormalized exactly.
    pub fn new(mut y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::NotOnSimplex("empty vector".into()));
        }
        for (i, v) in y.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NotOnSimplex(format!("y[{i}] = {v}")));
            }
            if *v < 0.0 {
                if *v < -1e-12 {
                    return Err(Error::NotOnSimplex(format!("y[{i}] = {v:e} < 0")));
                }
                *v = 0.0;
            }
        }
        let s: f64 = y.iter().sum();
        if (s - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::NotOnSimplex(format!("sum = {s}")));
        }
        y.iter_mut().for_each(|v| *v /= s);
        Ok(Self(y))
    }

    /// Normalizes any nonnegative vector with positive mass.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NotOnSimplex("weights must be finite and >= 0".into()));
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(Error::NotOnSimplex("weights have zero mass".into()));
        }
        w.iter_mut().for_each(|v| *v /= s);
        Ok(Self(w))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    /// The grid point `counts / n`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::NotOnSimplex("no nodes".into()));
        }
        Ok(Self(counts.iter().map(|&c| c as f64 / n as f64).collect()))
    }

    pub(crate) fn from_vec_unchecked(y: Vec<f64>) -> Self {
        Self(y)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn sup_distance(&self, other: &Occupancy) -> f64 {
        sup_distance(&self.0, &other.0)
    }

    /// Integer counts `n * y` when this is a point of the `n`-grid.
    pub fn to_counts(&self, n: u64) -> Result<Vec<u64>> {
        let mut counts = Vec::with_capacity(self.len());
        for (i, &v) in self.0.iter().enumerate() {
            let scaled = v * n as f64;
            let r = scaled.round();
            if (scaled - r).abs() > 1e-9 * (n as f64).max(1.0) {
                return Err(Error::InvalidArgument(format!("n*y[{i}] = {scaled} is not an integer")));
            }
            counts.push(r as u64);
        }
        if counts.iter().sum::<u64>() != n {
            return Err(Error::InvalidArgument("counts do not sum to n".into()));
        }
        Ok(counts)
    }

    /// Nearest point of the `n`-grid (largest-remainder rounding).
    pub fn nearest_grid_counts(&self, n: u64) -> Vec<u64> {
        let scaled: Vec<f64> = self.0.iter().map(|v| v * n as f64).collect();
        let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
        let assigned: u64 = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take((n - assigned) as usize) {
            counts[i] += 1;
        }
        counts
    }
}

impl std::ops::Index<usize> for Occupancy {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A rate of change of occupancies; components sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        let s: f64 = z.iter().sum();
        let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if s.abs() > TANGENT_TOL * scale {
            return Err(Error::NotTangent(s));
        }
        Ok(Self(z))
    }

    pub(crate) fn from_vec_unchecked(z: Vec<f64>) -> Self {
        Self(z)
    }

    /// Difference quotient `(b - a) / dt`.
    pub fn between(a: &Occupancy, b: &Occupancy, dt: f64) -> Self {
        Self(
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (y - x) / dt)
                .collect(),
        )
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl std::ops::Index<usize> for TangentVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
