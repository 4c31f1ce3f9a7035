//! JSON scenario files: gait, reference profile, terrain, disturbances and
//! tuning for one episode.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{gait_by_name, GaitError, GaitPattern};
use crate::planner::{Planner, PlannerConfig};
use crate::robot::{NominalMotion, TwistChange};
use crate::sim::{random_pushes, Disturbance, Mode, SimConfig};
use crate::terrain::TerrainPlane;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}, expected {SCHEMA_VERSION}")]
    Version(u32),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// A built-in gait by name or a full custom pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaitSpec {
    Named(String),
    Custom(GaitPattern),
}

impl GaitSpec {
    pub fn resolve(&self) -> Result<GaitPattern, GaitError> {
        match self {
            GaitSpec::Named(name) => gait_by_name(name),
            GaitSpec::Custom(g) => {
                g.validate()?;
                Ok(g.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerrainSpec {
    #[default]
    Flat,
    /// Plane rising `slope` metres per metre along world x.
    Incline { slope: f64 },
}

impl TerrainSpec {
    pub fn plane(&self) -> TerrainPlane {
        match *self {
            TerrainSpec::Flat => TerrainPlane::flat(),
            TerrainSpec::Incline { slope } => TerrainPlane::incline(slope),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomPushes {
    pub count: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Largest horizontal COM offset (m).
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub sim: u32,
    pub wheel: u32,
    pub base: u32,
}

impl Default for Rates {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            sim: d.sim_rate,
            wheel: d.wheel_rate,
            base: d.base_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub gait: GaitSpec,
    pub duration: f64,
    /// All wheels stay on the ground before this time.
    pub gait_start: f64,
    /// Piecewise-constant reference twist; the first entry starts at `t = 0`.
    pub velocity: Vec<TwistChange>,
    pub terrain: TerrainSpec,
    pub disturbances: Vec<Disturbance>,
    pub random_pushes: Option<RandomPushes>,
    pub seed: u64,
    pub mode: Mode,
    pub rates: Rates,
    pub planner: PlannerConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            gait: GaitSpec::Named("trot".into()),
            duration: 10.0,
            gait_start: 1.0,
            velocity: Vec::new(),
            terrain: TerrainSpec::Flat,
            disturbances: Vec::new(),
            random_pushes: None,
            seed: 0,
            mode: Mode::Synchronous,
            rates: Rates::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Version(self.schema_version));
        }
        self.gait.resolve()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid("duration must be positive");
        }
        if !self.gait_start.is_finite() {
            return invalid("gait_start must be finite");
        }
        if let Some(first) = self.velocity.first() {
            if first.time != 0.0 {
                return invalid("the velocity profile must start at t = 0");
            }
        }
        if self.velocity.windows(2).any(|w| w[1].time <= w[0].time) {
            return invalid("velocity profile times must increase");
        }
        let finite = |c: &TwistChange| c.v_ref.iter().chain([&c.omega_ref]).all(|v| v.is_finite());
        if !self.velocity.iter().all(finite) {
            return invalid("velocity profile values must be finite");
        }
        if let TerrainSpec::Incline { slope } = self.terrain {
            if !slope.is_finite() {
                return invalid("slope must be finite");
            }
        }
        for d in &self.disturbances {
            d.validate().map_err(ScenarioError::Invalid)?;
        }
        if let Some(r) = &self.random_pushes {
            if !(r.t_min <= r.t_max && r.magnitude >= 0.0) {
                return invalid("random_pushes needs t_min <= t_max and magnitude >= 0");
            }
        }
        self.planner
            .robot
            .validate()
            .map_err(ScenarioError::Invalid)?;
        self.planner
            .wheel
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.planner
            .base
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.sim_config()
            .validate()
            .map_err(ScenarioError::Invalid)?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            duration: self.duration,
            sim_rate: self.rates.sim,
            wheel_rate: self.rates.wheel,
            base_rate: self.rates.base,
            mode: self.mode,
        }
    }

    pub fn planner(&self) -> Result<Planner, ScenarioError> {
        let first = self.velocity.first();
        let reference = NominalMotion {
            position: Vector2::zeros(),
            yaw: 0.0,
            v_ref: first.map_or(Vector2::zeros(), |c| Vector2::new(c.v_ref[0], c.v_ref[1])),
            omega_ref: first.map_or(0.0, |c| c.omega_ref),
        };
        Ok(Planner {
            config: self.planner.clone(),
            gait: self.gait.resolve()?,
            plane: self.terrain.plane(),
            reference,
            twist_changes: self.velocity.iter().skip(1).copied().collect(),
            gait_start: self.gait_start,
        })
    }

    /// Listed disturbances plus the seeded random pushes, sorted by time.
    pub fn all_disturbances(&self) -> Vec<Disturbance> {
        let mut out = self.disturbances.clone();
        if let Some(r) = &self.random_pushes {
            out.extend(random_pushes(
                self.seed,
                r.count,
                r.t_min,
                r.t_max,
                r.magnitude,
            ));
        }
        out.sort_by(|a, b| a.time.total_cmp(&b.time));
        out
    }
}
