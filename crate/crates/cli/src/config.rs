//! Strict JSON run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use lossnet::action::{ActionOptions, GradientMode, QuasipotentialOptions, DEFAULT_FLOORS, DEFAULT_SCHEDULE};
use lossnet::equilibria::EquilibriumSet;
use lossnet::{ModelParams, Occupancy, StateSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub equilibria: EquilibriaConfig,
    #[serde(default)]
    pub quasipotential: QuasipotentialConfig,
    pub ode: Option<OdeConfig>,
    pub rate: Option<RateConfig>,
    pub action: Option<ActionConfig>,
    pub tree: Option<TreeConfig>,
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub exit: ExitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub capacity: u32,
    pub size: Vec<u32>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    /// Largest admissible state space.
    pub state_cap: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaConfig {
    /// Multistart points per coordinate; the library default when absent.
    pub points_per_axis: Option<usize>,
    #[serde(default = "default_h_points")]
    pub h_points: usize,
    #[serde(default = "default_true")]
    pub h_log_y: bool,
    pub phi_grid: Option<GridConfig>,
}

impl Default for EquilibriaConfig {
    fn default() -> Self {
        Self {
            points_per_axis: None,
            h_points: default_h_points(),
            h_log_y: true,
            phi_grid: None,
        }
    }
}

/// Rectangular `rho` grid; `rho2` is ignored for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rho1: [f64; 2],
    pub rho2: Option<[f64; 2]>,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialConfig {
    /// `(T, M)` pairs with increasing `T`.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<(f64, usize)>,
    #[serde(default = "default_floors")]
    pub floors: Vec<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub gradient: GradientConfig,
}

impl Default for QuasipotentialConfig {
    fn default() -> Self {
        Self {
            schedule: default_schedule(),
            floors: default_floors(),
            max_iter: default_max_iter(),
            gradient: GradientConfig::Envelope,
        }
    }
}

impl QuasipotentialConfig {
    pub fn options(&self) -> QuasipotentialOptions {
        QuasipotentialOptions {
            schedule: self.schedule.clone(),
            action: ActionOptions {
                floors: self.floors.clone(),
                max_iter: self.max_iter,
                gradient: match self.gradient {
                    GradientConfig::Envelope => GradientMode::Envelope,
                    GradientConfig::FiniteDifference { step } => GradientMode::FiniteDifference { step },
                },
                ..ActionOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientConfig {
    #[default]
    Envelope,
    FiniteDifference {
        step: f64,
    },
}

/// A point of the simplex: explicit, an equilibrium by index (solver order), or uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSpec {
    Occupancy(Vec<f64>),
    Equilibrium(usize),
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    pub y0: PointSpec,
    pub horizon: f64,
    #[serde(default = "default_ode_step")]
    pub step: f64,
    #[serde(default = "default_one")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    /// CSV of `y` then `z` columns; relative paths resolve against the config file.
    pub input: PathBuf,
    #[serde(default = "default_rate_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub from: PointSpec,
    pub to: PointSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// Given quasipotential matrix; skips the optimizer.
    pub phi: Option<Vec<Vec<f64>>>,
    /// Points to connect; all equilibria when absent.
    pub points: Option<Vec<PointSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: u64,
    pub horizon: f64,
    /// Censoring time for exit-time runs; `horizon` when absent.
    pub exit_horizon: Option<f64>,
    /// Snapped to the nearest grid point; the exit centre when absent.
    pub y0: Option<PointSpec>,
    #[serde(default = "default_record_dt")]
    pub record_dt: f64,
    #[serde(default = "default_one_u64")]
    pub replicas: u64,
    #[serde(default)]
    pub burn_in: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitConfig {
    #[serde(default = "default_domain")]
    pub domain: DomainConfig,
    #[serde(default = "default_center")]
    pub center: PointSpec,
    #[serde(default = "default_directions")]
    pub random_directions: usize,
}

impl Default for ExitConfig {
    fn default() -> Self {
        Self {
            domain: default_domain(),
            center: default_center(),
            random_directions: default_directions(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Ball { radius: f64 },
    Sublevel { excess: f64 },
    Everything,
}

impl DomainConfig {
    pub fn around(&self, center: &Occupancy) -> lossnet::Result<lossnet::Domain> {
        match *self {
            Self::Ball { radius } => lossnet::Domain::ball(center.clone(), radius),
            Self::Sublevel { excess } => lossnet::Domain::sublevel(center.clone(), excess),
            Self::Everything => Ok(lossnet::Domain::Everything),
        }
    }
}

fn default_h_points() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_schedule() -> Vec<(f64, usize)> {
    DEFAULT_SCHEDULE.to_vec()
}
fn default_floors() -> Vec<f64> {
    DEFAULT_FLOORS.to_vec()
}
fn default_max_iter() -> usize {
    ActionOptions::default().max_iter
}
fn default_ode_step() -> f64 {
    1e-3
}
fn default_one() -> usize {
    1
}
fn default_one_u64() -> u64 {
    1
}
fn default_rate_tol() -> f64 {
    lossnet::ratefn::DEFAULT_TOL
}
fn default_record_dt() -> f64 {
    0.01
}
fn default_domain() -> DomainConfig {
    DomainConfig::Ball { radius: 0.15 }
}
fn default_center() -> PointSpec {
    PointSpec::Equilibrium(0)
}
fn default_directions() -> usize {
    64
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(rate) = cfg.rate.as_mut() {
            if rate.input.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                rate.input = base.join(&rate.input);
            }
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the effective configuration in canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        ModelParams::new(
            m.capacity,
            m.size.clone(),
            m.alpha.clone(),
            m.gamma.clone(),
            m.delta.clone(),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn state_space(&self, p: &ModelParams) -> Result<StateSpace, CliError> {
        match self.model.state_cap {
            Some(cap) => StateSpace::build_with_cap(p, cap),
            None => StateSpace::build(p),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Resolves a point; `equilibria` is consulted only for `Equilibrium(_)`.
pub fn resolve_point(
    spec: &PointSpec,
    ss: &StateSpace,
    equilibria: Option<&EquilibriumSet>,
) -> Result<Occupancy, CliError> {
    match spec {
        PointSpec::Occupancy(y) => {
            ss.check_len(y.len()).map_err(|e| CliError::Config(e.to_string()))?;
            Occupancy::new(y.clone()).map_err(|e| CliError::Config(e.to_string()))
        }
        PointSpec::Uniform => Ok(Occupancy::uniform(ss.len())),
        PointSpec::Equilibrium(i) => {
            let set = equilibria.ok_or_else(|| CliError::Config("no equilibria available".into()))?;
            set.equilibria
                .get(*i)
                .map(|e| e.nu.clone())
                .ok_or_else(|| CliError::Config(format!("equilibrium {i} requested, {} found", set.len())))
        }
    }
}

pub fn needs_equilibria(specs: &[&PointSpec]) -> bool {
    specs.iter().any(|s| matches!(s, PointSpec::Equilibrium(_)))
}
