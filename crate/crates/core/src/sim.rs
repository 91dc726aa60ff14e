//! Exact simulation of the occupancy chain `Y^(n)` on the `n`-grid.
//!
//! The chain is simulated on node counts `N_theta = n y_theta`. Per class k:
//! arrivals at rate `alpha_k` per admitting node; every customer leaves at
//! rate `delta_k` and attempts a migration at rate `gamma_k` to one of the
//! other `n - 1` nodes chosen uniformly. A migrant that finds its target
//! blocked is lost. Migrations into `theta - e_k` from `theta` change nothing
//! and are counted as null events.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::meanfield::Trajectory;
use crate::model::{ModelParams, Occupancy, StateSpace};

/// One simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: u64,
    pub seed: u64,
    /// Stream index; replicas of one experiment share the seed.
    pub replica: u64,
    pub horizon: f64,
    pub y0: Occupancy,
    pub record_dt: f64,
}

impl SimConfig {
    pub fn validate(&self, ss: &StateSpace) -> Result<Vec<u64>> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be >= 2, got {}", self.n)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if !(self.record_dt > 0.0 && self.record_dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record_dt must be > 0, got {}",
                self.record_dt
            )));
        }
        ss.check_len(self.y0.len())?;
        self.y0.to_counts(self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Arrival,
    Departure,
    Migration,
}

/// A jump of the occupancy chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub kind: EventKind,
    pub class: usize,
    /// State of the node losing (departure, migration) or gaining (arrival) a customer.
    pub from: usize,
    /// Destination node state for migrations.
    pub target: Option<usize>,
    pub rate: f64,
}

/// All transitions out of a count vector with their rates.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub counts: Vec<u64>,
    pub n: u64,
    pub transitions: Vec<Transition>,
}

impl TransitionTable {
    pub fn build(counts: &[u64], ss: &StateSpace, p: &ModelParams) -> Result<Self> {
        ss.check_len(counts.len())?;
        let n: u64 = counts.iter().sum();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
        }
        let nm1 = (n - 1) as f64;
        let mut transitions = Vec::new();
        for k in 0..p.classes {
            let blocked: f64 = (0..ss.len())
                .filter(|&i| !ss.accepts(k, i))
                .map(|i| counts[i] as f64)
                .sum();
            for i in 0..ss.len() {
                let ni = counts[i] as f64;
                if ss.accepts(k, i) {
                    transitions.push(Transition {
                        kind: EventKind::Arrival,
                        class: k,
                        from: i,
                        target: None,
                        rate: ni * p.alpha[k],
                    });
                }
                if ss.down(k, i).is_some() {
                    let t = ss.count(k, i);
                    let own = if ss.accepts(k, i) { 0.0 } else { 1.0 };
                    transitions.push(Transition {
                        kind: EventKind::Departure,
                        class: k,
                        from: i,
                        target: None,
                        rate: ni * t * p.delta[k] + t * p.gamma[k] * ni * (blocked - own) / nm1,
                    });
                    for j in (0..ss.len()).filter(|&j| ss.accepts(k, j)) {
                        let same = if i == j { 1.0 } else { 0.0 };
                        transitions.push(Transition {
                            kind: EventKind::Migration,
                            class: k,
                            from: i,
                            target: Some(j),
                            rate: t * p.gamma[k] * ni * (counts[j] as f64 - same) / nm1,
                        });
                    }
                }
            }
        }
        for tr in &transitions {
            if tr.rate < 0.0 {
                return Err(Error::NegativeRate {
                    rate: tr.rate,
                    event: format!("{:?} class {} from {} to {:?}", tr.kind, tr.class, tr.from, tr.target),
                    state: counts.to_vec(),
                });
            }
        }
        Ok(Self {
            counts: counts.to_vec(),
            n,
            transitions,
        })
    }

    pub fn total_rate(&self) -> f64 {
        self.transitions.iter().map(|t| t.rate).sum()
    }

    /// Counts after a transition.
    pub fn apply(&self, tr: &Transition, ss: &StateSpace) -> Vec<u64> {
        let mut c = self.counts.clone();
        apply_event(&mut c, tr.kind, tr.class, tr.from, tr.target, ss);
        c
    }

    /// Rates aggregated by resulting count vector (null jumps map to the current state).
    pub fn next_state_rates(&self, ss: &StateSpace) -> BTreeMap<Vec<u64>, f64> {
        let mut out = BTreeMap::new();
        for tr in &self.transitions {
            if tr.rate > 0.0 {
                *out.entry(self.apply(tr, ss)).or_insert(0.0) += tr.rate;
            }
        }
        out
    }
}

fn apply_event(c: &mut [u64], kind: EventKind, k: usize, from: usize, target: Option<usize>, ss: &StateSpace) {
    match kind {
        EventKind::Arrival => {
            let to = ss.up(k, from).expect("arrival from an admitting state");
            c[from] -= 1;
            c[to] += 1;
        }
        EventKind::Departure => {
            let to = ss.down(k, from).expect("departure from an occupied state");
            c[from] -= 1;
            c[to] += 1;
        }
        EventKind::Migration => {
            let to = ss.down(k, from).expect("migration from an occupied state");
            c[from] -= 1;
            c[to] += 1;
            let j = target.expect("migration target");
            let up = ss.up(k, j).expect("migration into an admitting state");
            c[j] -= 1;
            c[up] += 1;
        }
    }
}

/// Gillespie direct-method simulator.
pub struct Simulator<'a> {
    ss: &'a StateSpace,
    p: &'a ModelParams,
    counts: Vec<u64>,
    n: u64,
    time: f64,
    events: u64,
    null_events: u64,
    rng: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &SimConfig, ss: &'a StateSpace, p: &'a ModelParams) -> Result<Self> {
        let counts = cfg.validate(ss)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.replica);
        Ok(Self {
            ss,
            p,
            counts,
            n: cfg.n,
            time: 0.0,
            events: 0,
            null_events: 0,
            rng,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn null_events(&self) -> u64 {
        self.null_events
    }

    pub fn occupancy(&self) -> Occupancy {
        counts_to_occupancy(&self.counts, self.n)
    }

    /// Total event rate including null migrations.
    pub fn total_rate(&self) -> f64 {
        let ss = self.ss;
        let mut r = 0.0;
        for k in 0..self.p.classes {
            let mut admit = 0.0;
            let mut customers = 0.0;
            for (i, &c) in self.counts.iter().enumerate() {
                if ss.accepts(k, i) {
                    admit += c as f64;
                }
                customers += ss.count(k, i) * c as f64;
            }
            r += self.p.alpha[k] * admit + self.p.leave_rate(k) * customers;
        }
        r
    }

    /// Draws the holding time and performs one jump. Returns `None` when the
    /// jump would land after `until` (time is then set to `until`).
    pub fn step_until(&mut self, until: f64) -> Option<(EventKind, usize)> {
        let total = self.total_rate();
        if total <= 0.0 {
            self.time = until;
            return None;
        }
        let hold: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + hold > until {
            self.time = until;
            return None;
        }
        self.time += hold;
        self.events += 1;
        let ev = self.jump(total);
        Some(ev)
    }

    fn pick(&mut self, weights: impl Iterator<Item = (usize, f64)> + Clone, total: f64) -> usize {
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = usize::MAX;
        for (i, w) in weights {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    fn jump(&mut self, total: f64) -> (EventKind, usize) {
        let ss = self.ss;
        let p = self.p;
        let counts = self.counts.clone();
        // Event type and class.
        let kinds = (0..p.classes).flat_map(|k| {
            let admit: f64 = (0..ss.len())
                .filter(|&i| ss.accepts(k, i))
                .map(|i| counts[i] as f64)
                .sum();
            let customers: f64 = (0..ss.len()).map(|i| ss.count(k, i) * counts[i] as f64).sum();
            [
                (3 * k, p.alpha[k] * admit),
                (3 * k + 1, p.delta[k] * customers),
                (3 * k + 2, p.gamma[k] * customers),
            ]
        });
        let kinds: Vec<(usize, f64)> = kinds.collect();
        let choice = self.pick(kinds.iter().copied(), total);
        let (k, kind) = (choice / 3, choice % 3);
        match kind {
            0 => {
                let w: Vec<(usize, f64)> = (0..ss.len())
                    .filter(|&i| ss.accepts(k, i))
                    .map(|i| (i, counts[i] as f64))
                    .collect();
                let tot = w.iter().map(|x| x.1).sum();
                let from = self.pick(w.iter().copied(), tot);
                apply_event(&mut self.counts, EventKind::Arrival, k, from, None, ss);
                (EventKind::Arrival, k)
            }
            _ => {
                let w: Vec<(usize, f64)> = (0..ss.len()).map(|i| (i, ss.count(k, i) * counts[i] as f64)).collect();
                let tot = w.iter().map(|x| x.1).sum();
                let from = self.pick(w.iter().copied(), tot);
                if kind == 1 {
                    apply_event(&mut self.counts, EventKind::Departure, k, from, None, ss);
                    return (EventKind::Departure, k);
                }
                // Destination: one of the other n - 1 nodes, uniformly.
                let dest: Vec<(usize, f64)> = (0..ss.len())
                    .map(|j| (j, counts[j] as f64 - if j == from { 1.0 } else { 0.0 }))
                    .collect();
                let target = self.pick(dest.iter().copied(), (self.n - 1) as f64);
                if !ss.accepts(k, target) {
                    apply_event(&mut self.counts, EventKind::Departure, k, from, None, ss);
                    (EventKind::Departure, k)
                } else {
                    if ss.down(k, from) == Some(target) {
                        self.null_events += 1;
                    }
                    apply_event(&mut self.counts, EventKind::Migration, k, from, Some(target), ss);
                    (EventKind::Migration, k)
                }
            }
        }
    }
}

pub(crate) fn counts_to_occupancy(counts: &[u64], n: u64) -> Occupancy {
    Occupancy::from_vec_unchecked(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Samples a path at `0, record_dt, 2 record_dt, ...` up to the horizon.
pub fn simulate(cfg: &SimConfig, ss: &StateSpace, p: &ModelParams) -> Result<Trajectory> {
    let mut sim = Simulator::new(cfg, ss, p)?;
    let steps = (cfg.horizon / cfg.record_dt + 1e-9).floor() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    times.push(0.0);
    points.push(sim.occupancy());
    for s in 1..=steps {
        let t = s as f64 * cfg.record_dt;
        while sim.step_until(t).is_some() {}
        times.push(t);
        points.push(sim.occupancy());
    }
    Ok(Trajectory { times, points })
}

#[derive(Debug, Clone)]
pub struct ExitOutcome {
    /// Exit time, or the horizon when censored.
    pub time: f64,
    pub censored: bool,
    pub exit_state: Occupancy,
    pub events: u64,
}

/// First time the path leaves `domain`, checked after every jump; censored at `cfg.horizon`.
pub fn exit_time(cfg: &SimConfig, domain: &Domain, ss: &StateSpace, p: &ModelParams) -> Result<ExitOutcome> {
    domain.check_dims(ss)?;
    let mut sim = Simulator::new(cfg, ss, p)?;
    if !domain.contains(&cfg.y0, ss, p) {
        return Err(Error::InvalidArgument("initial state lies outside the domain".into()));
    }
    let mut y = vec![0.0; ss.len()];
    while sim.step_until(cfg.horizon).is_some() {
        for (v, &c) in y.iter_mut().zip(sim.counts()) {
            *v = c as f64 / cfg.n as f64;
        }
        if !domain.contains_slice(&y, ss, p) {
            return Ok(ExitOutcome {
                time: sim.time(),
                censored: false,
                exit_state: sim.occupancy(),
                events: sim.events(),
            });
        }
    }
    Ok(ExitOutcome {
        time: cfg.horizon,
        censored: true,
        exit_state: sim.occupancy(),
        events: sim.events(),
    })
}

/// Runs replicas `0..replicas` of `cfg` in parallel; results are in replica order.
pub fn exit_times(
    cfg: &SimConfig,
    domain: &Domain,
    replicas: u64,
    ss: &StateSpace,
    p: &ModelParams,
) -> Result<Vec<ExitOutcome>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let c = SimConfig {
                replica: r,
                ..cfg.clone()
            };
            exit_time(&c, domain, ss, p)
        })
        .collect()
}

/// Time-weighted occupancy of grid cells after `burn_in`, sorted by cell.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub n: u64,
    pub cells: Vec<(Vec<u64>, f64)>,
}

impl Histogram {
    pub fn mode(&self) -> Option<&(Vec<u64>, f64)> {
        self.cells.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    /// Mass of cells within sup distance `radius` of `y`.
    pub fn mass_near(&self, y: &Occupancy, radius: f64) -> f64 {
        self.cells
            .iter()
            .filter(|(c, _)| counts_to_occupancy(c, self.n).sup_distance(y) <= radius)
            .map(|c| c.1)
            .sum()
    }
}

pub fn empirical_invariant(cfg: &SimConfig, burn_in: f64, ss: &StateSpace, p: &ModelParams) -> Result<Histogram> {
    if !(burn_in >= 0.0 && cfg.horizon > burn_in) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= burn_in < horizon, got {burn_in} and {}",
            cfg.horizon
        )));
    }
    let mut sim = Simulator::new(cfg, ss, p)?;
    while sim.step_until(burn_in).is_some() {}
    let mut acc: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    loop {
        let before = sim.time();
        let cell = sim.counts().to_vec();
        let jumped = sim.step_until(cfg.horizon).is_some();
        *acc.entry(cell).or_insert(0.0) += sim.time() - before;
        if !jumped {
            break;
        }
    }
    let span = cfg.horizon - burn_in;
    Ok(Histogram {
        n: cfg.n,
        cells: acc.into_iter().map(|(c, t)| (c, t / span)).collect(),
    })
}
