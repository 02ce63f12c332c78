//! The JSON run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costs::CostWeights;
use crate::dataset::{scene_id, LabelConfig};
use crate::error::{Error, Result};
use crate::kinematics::ControlBounds;
use crate::nn::TrainConfig;
use crate::occupancy::GridSpec;
use crate::predictor::{HeuristicParams, NetShape};
use crate::roadseg::SceneSpec;
use crate::sampler::SamplerConfig;
use crate::sim::{EpisodeConfig, HistoryMode, Planner, PlannerKind, SCENARIOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsConfig {
    /// Control period, seconds.
    pub dt: f64,
    pub bounds: ControlBounds,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            bounds: ControlBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub heuristic: HeuristicParams,
    /// Time stride of the first convolution.
    pub temporal_stride: usize,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            heuristic: HeuristicParams::default(),
            temporal_stride: 2,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadSegConfig {
    pub frequencies: usize,
    pub train: TrainConfig,
    pub scene: SceneSpec,
    /// Number of synthetic scenes used for training.
    pub train_scenes: usize,
    /// Fraction of each training scene kept, mimicking a sparse map.
    pub train_density: f64,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
}

impl Default for RoadSegConfig {
    fn default() -> Self {
        Self {
            frequencies: 6,
            train: TrainConfig {
                batch_size: 256,
                epochs: 20,
                ..TrainConfig::default()
            },
            scene: SceneSpec::default(),
            train_scenes: 4,
            train_density: 0.1,
            ransac_iterations: 1000,
            ransac_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub predictor: TrainConfig,
    pub roadseg: RoadSegConfig,
    /// Scenarios labeled by `gen-data`, with relative weights.
    pub scenarios: Vec<(String, usize)>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            predictor: TrainConfig {
                learning_rate: 1e-4,
                epochs: 10,
                ..TrainConfig::default()
            },
            roadseg: RoadSegConfig::default(),
            scenarios: vec![
                ("random_mixed".into(), 3),
                ("dynamic_crossing".into(), 3),
                ("static_obstacle".into(), 1),
                ("dynamic_oncoming".into(), 1),
                ("straight_empty".into(), 1),
                ("curved_empty".into(), 1),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub step_cap: usize,
    pub goal_fraction: f64,
    pub safety_margin: f64,
    pub history: HistoryMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            step_cap: e.step_cap,
            goal_fraction: e.goal_fraction,
            safety_margin: e.safety_margin,
            history: e.history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kinematics: KinematicsConfig,
    pub grid: GridSpec,
    pub costs: CostWeights,
    pub sampler: SamplerConfig,
    pub predictor: PredictorConfig,
    pub train: TrainSection,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::InvalidInput(m) => Error::Config(m),
            other => other,
        };
        if !(self.kinematics.dt > 0.0) {
            return Err(Error::Config("kinematics.dt must be positive".into()));
        }
        self.kinematics.bounds.validate().map_err(cfg)?;
        self.grid.validate().map_err(cfg)?;
        self.costs.validate().map_err(cfg)?;
        self.sampler.validate().map_err(cfg)?;
        self.train.predictor.validate()?;
        self.train.roadseg.train.validate()?;
        self.net_shape().validate().map_err(cfg)?;
        let h = &self.predictor.heuristic;
        if !(h.cruise_speed >= 0.0 && h.lookahead > 0.0 && h.lateral_step >= 0.0) {
            return Err(Error::Config("predictor.heuristic values out of range".into()));
        }
        let rs = &self.train.roadseg;
        if rs.frequencies == 0 || rs.train_scenes == 0 || rs.ransac_iterations == 0 {
            return Err(Error::Config("roadseg frequencies, train_scenes and ransac_iterations must be positive".into()));
        }
        if !(rs.train_density > 0.0 && rs.train_density <= 1.0) || !(rs.ransac_threshold > 0.0) {
            return Err(Error::Config("roadseg train_density must be in (0, 1] and ransac_threshold positive".into()));
        }
        for (name, _) in &self.train.scenarios {
            scene_id(name).map_err(|_| {
                Error::Config(format!("unknown scenario `{name}` in train.scenarios; valid names: {}", SCENARIOS.join(", ")))
            })?;
        }
        let s = &self.sim;
        if s.step_cap == 0 || !(s.goal_fraction > 0.0 && s.goal_fraction <= 1.0) || !(s.safety_margin >= 0.0) {
            return Err(Error::Config("sim.step_cap, sim.goal_fraction or sim.safety_margin out of range".into()));
        }
        Ok(())
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            temporal_stride: self.predictor.temporal_stride,
            ..NetShape::new(self.grid.height, self.grid.width, self.sampler.horizon)
        }
    }

    pub fn planner(&self, kind: PlannerKind) -> Planner {
        Planner {
            sampler: self.sampler,
            weights: self.costs,
            bounds: self.kinematics.bounds,
            heuristic: self.predictor.heuristic,
            ..Planner::new(kind)
        }
    }

    pub fn episode(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            grid: self.grid,
            dt: self.kinematics.dt,
            step_cap: self.sim.step_cap,
            goal_fraction: self.sim.goal_fraction,
            history: self.sim.history,
            safety_margin: self.sim.safety_margin,
            seed,
        }
    }

    pub fn label(&self) -> LabelConfig {
        LabelConfig {
            grid: self.grid,
            dt: self.kinematics.dt,
            sampler: self.sampler,
            weights: self.costs,
            bounds: self.kinematics.bounds,
            heuristic: self.predictor.heuristic,
            safety_margin: self.sim.safety_margin,
        }
    }
}
