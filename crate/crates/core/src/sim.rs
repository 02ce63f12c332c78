//! Closed-loop 2-D world: scenario catalog, constant-velocity actors,
//! ego-frame grid rendering, collision checks and episode execution.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostWeights;
use crate::error::{Error, Result};
use crate::kinematics::{unicycle_step, Control, ControlBounds, ControlSequence, GlobalPath, VehicleState};
use crate::occupancy::{
    grid_to_obstacles, pad_history, rasterize_path, stack, GridSpec, GridStack, Obstacle, ObstacleSet,
    OccupancyGrid, HISTORY_LEN,
};
use crate::predictor::{candidate_mean, HeuristicParams, Predictor, PredictorInputs, PredictorKind, SpatioTemporalNet};
use crate::sampler::{
    derive_seed, plan_iterative, plan_single_shot, receding_horizon_step, PlanMode, PlanProblem, PlanResult,
    SamplerConfig,
};

pub const SCENARIOS: [&str; 6] = [
    "straight_empty",
    "curved_empty",
    "static_obstacle",
    "dynamic_crossing",
    "dynamic_oncoming",
    "random_mixed",
];

/// Arc length at which the ego starts; the road extends this far behind it.
pub const EGO_START_S: f64 = 10.0;
pub const DEFAULT_ROAD_HALF_WIDTH: f64 = 6.0;
pub const DEFAULT_EGO_RADIUS: f64 = 1.0;
/// Cruise speed the scenario timing is designed around, m/s.
const DESIGN_SPEED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub centerline: GlobalPath,
    pub road_half_width: f64,
    pub actors: Vec<Obstacle>,
    pub ego: VehicleState,
    pub ego_radius: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.ego_radius > 0.0) {
            return Err(Error::invalid("ego radius must be positive"));
        }
        if !(self.road_half_width > 0.0) {
            return Err(Error::invalid("road half width must be positive"));
        }
        ObstacleSet::new(self.actors.clone()).map(|_| ())
    }

    /// Arc length of the ego's projection onto the center line.
    pub fn progress(&self) -> f64 {
        self.centerline.project(self.ego.position()).s
    }
}

fn straight_road() -> GlobalPath {
    GlobalPath::straight([-EGO_START_S, 0.0], [100.0 - EGO_START_S, 0.0]).expect("valid straight road")
}

fn curved_road(radius: f64, arc_length: f64) -> GlobalPath {
    let mut pts = vec![[-EGO_START_S, 0.0], [0.0, 0.0]];
    let n = arc_length.ceil() as usize;
    for i in 1..=n {
        let a = arc_length * i as f64 / n as f64 / radius;
        pts.push([radius * a.sin(), radius * (1.0 - a.cos())]);
    }
    GlobalPath::new(pts).expect("valid curved road")
}

fn scene_on(centerline: GlobalPath, actors: Vec<Obstacle>) -> Scene {
    let ego = centerline.pose_at(EGO_START_S);
    Scene {
        centerline,
        road_half_width: DEFAULT_ROAD_HALF_WIDTH,
        actors,
        ego,
        ego_radius: DEFAULT_EGO_RADIUS,
    }
}

fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Builds a catalog scenario. Scenes are a pure function of `(name, seed)`.
pub fn scenario(name: &str, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name_stream(name)));
    let scene = match name {
        "straight_empty" => scene_on(straight_road(), Vec::new()),
        "curved_empty" => scene_on(curved_road(40.0, 90.0), Vec::new()),
        "static_obstacle" => scene_on(straight_road(), vec![Obstacle::fixed([15.0, 0.0], 1.0)]),
        "dynamic_crossing" => {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let speed = rng.random_range(1.5..2.5);
            let angle = rng.random_range(20.0f64..40.0).to_radians();
            let meet_t = rng.random_range(3.0..5.0);
            let meet_d = rng.random_range(-2.5..2.5);
            let vel = [-speed * angle.cos(), -side * speed * angle.sin()];
            let meet_x = DESIGN_SPEED * meet_t;
            scene_on(
                straight_road(),
                vec![Obstacle {
                    center: [meet_x - vel[0] * meet_t, meet_d - vel[1] * meet_t],
                    radius: 0.8,
                    velocity: vel,
                }],
            )
        }
        "dynamic_oncoming" => {
            let ahead = rng.random_range(40.0..60.0);
            let d = rng.random_range(-1.5..1.5);
            let speed = rng.random_range(1.5..2.0);
            scene_on(
                straight_road(),
                vec![Obstacle {
                    center: [ahead, d],
                    radius: 0.8,
                    velocity: [-speed, 0.0],
                }],
            )
        }
        "random_mixed" => {
            let count = rng.random_range(1..=4);
            let mut actors: Vec<Obstacle> = Vec::with_capacity(count);
            while actors.len() < count {
                let center = [rng.random_range(12.0..75.0), rng.random_range(-4.0..4.0)];
                let radius = rng.random_range(0.5..1.0);
                let speed = rng.random_range(0.0..2.0);
                let heading = rng.random_range(-PI..PI);
                if actors
                    .iter()
                    .any(|a| (a.center[0] - center[0]).hypot(a.center[1] - center[1]) < 8.0)
                {
                    continue;
                }
                actors.push(Obstacle {
                    center,
                    radius,
                    velocity: [speed * heading.cos(), speed * heading.sin()],
                });
            }
            scene_on(straight_road(), actors)
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown scenario `{other}`; valid names: {}",
                SCENARIOS.join(", ")
            )))
        }
    };
    Ok(scene)
}

/// Advances the ego by one unicycle step and every actor along its velocity.
pub fn world_step(scene: &Scene, u: Control, dt: f64) -> Scene {
    let mut next = scene.clone();
    next.ego = unicycle_step(scene.ego, u, dt);
    for a in &mut next.actors {
        a.center = a.center_at(dt);
    }
    next
}

/// Signed lateral offset from the center line, treating the road as
/// continuing straight beyond both ends.
pub fn road_offset(path: &GlobalPath, p: [f64; 2]) -> f64 {
    let proj = path.project(p);
    let len = path.length();
    if proj.s >= len {
        let end = path.pose_at(len);
        let local = end.to_local(p);
        if local[0] >= 0.0 {
            return local[1];
        }
    } else if proj.s <= 0.0 {
        let start = path.pose_at(0.0);
        let local = start.to_local(p);
        if local[0] <= 0.0 {
            return local[1];
        }
    }
    proj.d
}

/// Ego-frame occupancy: off-road cells and cells whose center lies within
/// `radius + res·√2/2` of an actor.
pub fn render_grid(scene: &Scene, spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(*spec);
    let inflate = spec.resolution * std::f64::consts::SQRT_2 / 2.0;
    let reach: Vec<f64> = scene.actors.iter().map(|a| (a.radius + inflate).powi(2)).collect();
    for r in 0..spec.height {
        for c in 0..spec.width {
            let w = scene.ego.to_world(spec.cell_center(r, c));
            let hit = scene
                .actors
                .iter()
                .zip(&reach)
                .any(|(a, r2)| (w[0] - a.center[0]).powi(2) + (w[1] - a.center[1]).powi(2) <= *r2)
                || road_offset(&scene.centerline, w).abs() > scene.road_half_width;
            if hit {
                grid.set(r, c, true);
            }
        }
    }
    grid
}

/// Whether the ego touches an actor or has left the drivable road.
pub fn collision_check(scene: &Scene) -> bool {
    let p = scene.ego.position();
    scene
        .actors
        .iter()
        .any(|a| (p[0] - a.center[0]).hypot(p[1] - a.center[1]) <= scene.ego_radius + a.radius)
        || road_offset(&scene.centerline, p).abs() > scene.road_half_width - scene.ego_radius
}

/// Smallest signed gap between the ego disc and any actor or road edge.
pub fn clearance(scene: &Scene) -> f64 {
    let p = scene.ego.position();
    let edge = scene.road_half_width - scene.ego_radius - road_offset(&scene.centerline, p).abs();
    scene
        .actors
        .iter()
        .map(|a| (p[0] - a.center[0]).hypot(p[1] - a.center[1]) - scene.ego_radius - a.radius)
        .fold(edge, f64::min)
}

/// The center line expressed in the ego's local frame.
pub fn path_in_ego_frame(path: &GlobalPath, ego: &VehicleState) -> GlobalPath {
    GlobalPath::new(path.waypoints().iter().map(|&w| ego.to_local(w)).collect())
        .expect("rigid transform preserves a valid path")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "mppi")]
    Mppi,
    #[serde(rename = "gradcem")]
    GradCem,
    #[serde(rename = "nsmpc-heuristic")]
    NsmpcHeuristic,
    #[serde(rename = "nsmpc-oracle")]
    NsmpcOracle,
    #[serde(rename = "nsmpc-learned")]
    NsmpcLearned,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Mppi,
        PlannerKind::GradCem,
        PlannerKind::NsmpcHeuristic,
        PlannerKind::NsmpcOracle,
        PlannerKind::NsmpcLearned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Mppi => "mppi",
            PlannerKind::GradCem => "gradcem",
            PlannerKind::NsmpcHeuristic => "nsmpc-heuristic",
            PlannerKind::NsmpcOracle => "nsmpc-oracle",
            PlannerKind::NsmpcLearned => "nsmpc-learned",
        }
    }

    pub fn predictor(self) -> Option<PredictorKind> {
        match self {
            PlannerKind::NsmpcHeuristic => Some(PredictorKind::Heuristic),
            PlannerKind::NsmpcOracle => Some(PredictorKind::Oracle),
            PlannerKind::NsmpcLearned => Some(PredictorKind::Learned),
            _ => None,
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = PlannerKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown planner `{s}`; valid names: {}", names.join(", ")))
        })
    }
}

/// A planner together with every parameter it needs.
#[derive(Debug, Clone)]
pub struct Planner {
    pub kind: PlannerKind,
    pub sampler: SamplerConfig,
    pub weights: CostWeights,
    pub bounds: ControlBounds,
    pub heuristic: HeuristicParams,
    pub net: Option<Arc<SpatioTemporalNet>>,
}

impl Planner {
    pub fn new(kind: PlannerKind) -> Self {
        Self {
            kind,
            sampler: SamplerConfig::default(),
            weights: CostWeights::default(),
            bounds: ControlBounds::default(),
            heuristic: HeuristicParams::default(),
            net: None,
        }
    }

    pub fn with_net(mut self, net: Arc<SpatioTemporalNet>) -> Self {
        self.net = Some(net);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.weights.validate()?;
        self.bounds.validate()?;
        if self.kind == PlannerKind::NsmpcLearned && self.net.is_none() {
            return Err(Error::Config("planner nsmpc-learned requires --weights".into()));
        }
        Ok(())
    }

    fn predictor(&self) -> Option<Predictor> {
        let oracle_sampler = SamplerConfig {
            rng_seed: derive_seed(self.sampler.rng_seed, 1),
            ..self.sampler
        };
        self.kind.predictor().map(|k| match k {
            PredictorKind::Heuristic => Predictor::Heuristic(self.heuristic),
            PredictorKind::Oracle => Predictor::Oracle {
                heuristic: self.heuristic,
                sampler: oracle_sampler,
            },
            PredictorKind::Learned => Predictor::Learned(self.net.clone()),
        })
    }

    /// Plans one step in the ego frame. `seed` selects the sampling streams.
    pub fn plan(&self, stack: &GridStack, local_path: &GlobalPath, problem: &PlanProblem, seed: u64) -> Result<PlanResult> {
        let planner = Planner {
            sampler: SamplerConfig {
                rng_seed: seed,
                ..self.sampler
            },
            ..self.clone()
        };
        let cfg = planner.sampler;
        let h = cfg.horizon;
        match self.kind {
            PlannerKind::Mppi | PlannerKind::GradCem => {
                let mode = if self.kind == PlannerKind::Mppi { PlanMode::Mppi } else { PlanMode::GradCem };
                let init = candidate_mean(problem, local_path, &self.heuristic, h);
                plan_iterative(&init, problem, &cfg.for_mode(mode), mode)
            }
            _ => {
                let predictor = planner.predictor().expect("single-shot planner has a predictor");
                let inputs = PredictorInputs {
                    stack: Some(stack),
                    path: local_path,
                    problem,
                    horizon: h,
                };
                let mean = predictor.predict_mean(&inputs)?;
                plan_single_shot(&mean, problem, &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// The five most recent rendered frames.
    True,
    /// The newest frame repeated five times.
    ReplicateNewest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub grid: GridSpec,
    pub dt: f64,
    pub step_cap: usize,
    pub goal_fraction: f64,
    pub history: HistoryMode,
    /// Added to the ego radius when planning; collisions use the bare radius.
    pub safety_margin: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            dt: 0.1,
            step_cap: 600,
            goal_fraction: 0.9,
            history: HistoryMode::True,
            safety_margin: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub ego: Pose,
    pub control: Control,
    pub plan_cost: f64,
    pub blocked: bool,
    pub plan_time_s: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub collisions: usize,
    pub min_clearance: f64,
    pub steps: usize,
    pub plan_time_per_step: Vec<f64>,
    pub update_iterations_per_step: Vec<usize>,
    pub blocked_fallbacks: usize,
}

impl EpisodeMetrics {
    pub fn mean_plan_time(&self) -> f64 {
        if self.plan_time_per_step.is_empty() {
            0.0
        } else {
            self.plan_time_per_step.iter().sum::<f64>() / self.plan_time_per_step.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub log: Vec<StepRecord>,
    pub final_scene: Scene,
}

impl Episode {
    /// JSON lines: one object per step, then the metrics object. Without
    /// `timing` the wall-clock fields are dropped so reruns compare equal.
    pub fn to_jsonl(&self, timing: bool) -> Result<String> {
        let mut out = String::new();
        let mut push = |mut v: serde_json::Value, key: &str| -> Result<()> {
            if !timing {
                if let Some(m) = v.as_object_mut() {
                    m.remove(key);
                }
            }
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
            Ok(())
        };
        for r in &self.log {
            push(serde_json::to_value(r)?, "plan_time_s")?;
        }
        push(serde_json::to_value(&self.metrics)?, "plan_time_per_step")?;
        Ok(out)
    }
}

/// Rolling perception state: the rendered frames of the last five steps.
#[derive(Debug, Clone)]
pub struct Perception {
    spec: GridSpec,
    frames: VecDeque<OccupancyGrid>,
}

/// Perception output and the ego-frame planning problem for one step.
pub struct StepInputs {
    pub stack: GridStack,
    pub local_path: GlobalPath,
    pub newest: OccupancyGrid,
}

impl Perception {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            frames: VecDeque::with_capacity(HISTORY_LEN),
        }
    }

    pub fn observe(&mut self, scene: &Scene, history: HistoryMode) -> Result<StepInputs> {
        let frame = render_grid(scene, &self.spec);
        if self.frames.len() == HISTORY_LEN {
            self.frames.pop_front();
        }
        self.frames.push_back(frame.clone());
        let local_path = path_in_ego_frame(&scene.centerline, &scene.ego);
        let path_channel = rasterize_path(&local_path, &self.spec);
        let frames: Vec<OccupancyGrid> = self.frames.iter().cloned().collect();
        let mut st = stack(pad_history(&frames)?, path_channel)?;
        if history == HistoryMode::ReplicateNewest {
            st = st.replicate_newest();
        }
        Ok(StepInputs {
            stack: st,
            local_path,
            newest: frame,
        })
    }
}

/// Ego-frame planning problem with every occupied cell of `grid` as a static
/// obstacle.
pub fn ego_problem(grid: &OccupancyGrid, planner: &Planner, agent_radius: f64, dt: f64) -> PlanProblem {
    PlanProblem::new(
        VehicleState::new(0.0, 0.0, 0.0),
        grid_to_obstacles(grid),
        planner.weights,
        planner.bounds,
        agent_radius,
        dt,
    )
}

/// Plans once from the scene's current state with a padded single-frame
/// history.
pub fn plan_once(scene: &Scene, planner: &Planner, cfg: &EpisodeConfig) -> Result<PlanResult> {
    planner.validate()?;
    let mut perception = Perception::new(cfg.grid);
    let inputs = perception.observe(scene, cfg.history)?;
    let problem = ego_problem(&inputs.newest, planner, scene.ego_radius + cfg.safety_margin, cfg.dt);
    planner.plan(&inputs.stack, &inputs.local_path, &problem, derive_seed(cfg.seed, 0))
}

/// Runs perceive → plan → execute until the goal, a collision or the step cap.
pub fn run_episode(scene: &Scene, planner: &Planner, cfg: &EpisodeConfig) -> Result<Episode> {
    scene.validate()?;
    planner.validate()?;
    if !(cfg.dt > 0.0) || !(cfg.safety_margin >= 0.0) || !(cfg.goal_fraction > 0.0 && cfg.goal_fraction <= 1.0) {
        return Err(Error::Config("episode needs dt > 0 and goal_fraction in (0, 1]".into()));
    }
    let goal_s = cfg.goal_fraction * scene.centerline.length();
    let mut world = scene.clone();
    let mut perception = Perception::new(cfg.grid);
    let mut log = Vec::new();
    let mut metrics = EpisodeMetrics {
        success: false,
        collisions: 0,
        min_clearance: clearance(&world),
        steps: 0,
        plan_time_per_step: Vec::new(),
        update_iterations_per_step: Vec::new(),
        blocked_fallbacks: 0,
    };
    for step in 0..cfg.step_cap {
        let inputs = perception.observe(&world, cfg.history)?;
        let started = Instant::now();
        let problem = ego_problem(&inputs.newest, planner, world.ego_radius + cfg.safety_margin, cfg.dt);
        let plan = planner.plan(&inputs.stack, &inputs.local_path, &problem, derive_seed(cfg.seed, step as u64))?;
        let elapsed = started.elapsed().as_secs_f64();
        let control = if plan.blocked_best {
            metrics.blocked_fallbacks += 1;
            Control::ZERO
        } else {
            receding_horizon_step(&plan)?
        };
        world = world_step(&world, control, cfg.dt);
        metrics.steps += 1;
        metrics.plan_time_per_step.push(elapsed);
        metrics.update_iterations_per_step.push(plan.update_iterations);
        metrics.min_clearance = metrics.min_clearance.min(clearance(&world));
        log.push(StepRecord {
            step,
            ego: Pose {
                x: world.ego.x,
                y: world.ego.y,
                theta: world.ego.theta,
            },
            control,
            plan_cost: plan.best_cost.total,
            blocked: plan.blocked_best,
            plan_time_s: elapsed,
            iterations: plan.update_iterations,
        });
        if collision_check(&world) {
            metrics.collisions += 1;
            break;
        }
        if world.progress() >= goal_s {
            metrics.success = true;
            break;
        }
    }
    Ok(Episode {
        metrics,
        log,
        final_scene: world,
    })
}

/// Controls that make the unicycle pass exactly through `targets` in order,
/// one circular arc per step.
pub fn fit_arc_controls(start: VehicleState, targets: &[[f64; 2]], dt: f64) -> ControlSequence {
    let mut s = start;
    let mut controls = Vec::with_capacity(targets.len());
    for &t in targets {
        let [a, b] = s.to_local(t);
        let chord2 = a * a + b * b;
        let u = if chord2 == 0.0 {
            Control::ZERO
        } else {
            let turn = 2.0 * b.atan2(a);
            let length = if turn.abs() < 1e-9 {
                chord2.sqrt()
            } else {
                turn * chord2 / (2.0 * b)
            };
            Control::new(length / dt, turn / dt)
        };
        controls.push(u);
        s = unicycle_step(s, u, dt);
    }
    ControlSequence { controls, dt }
}
