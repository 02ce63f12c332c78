//! Oracle-labeled training data and its binary container.
//!
//! Labels are planned in the center-line frame against the true actors and
//! their velocities, mapped back to the world and re-expressed as per-step
//! arc controls. Every record can be rebuilt from its `(scene_id, seed)`
//! pair through [`placed_scene`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostWeights;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kinematics::{
    from_crf, pose_to_crf, rollout_unicycle, to_crf, velocity_to_crf, ControlBounds, ControlSequence, FrenetCoord,
    GlobalPath, VehicleState,
};
use crate::occupancy::{
    grid_to_obstacles, rasterize_path, stack, GridSpec, GridStack, Obstacle, ObstacleSet, HISTORY_LEN,
    STACK_CHANNELS,
};
use crate::predictor::{candidate_mean, HeuristicParams};
use crate::sampler::{derive_seed, plan_iterative, PlanMode, PlanProblem, SamplerConfig};
use crate::sim::{
    collision_check, fit_arc_controls, path_in_ego_frame, render_grid, scenario, world_step, Scene,
    SCENARIOS,
};

pub const DATA_MAGIC: &[u8; 8] = b"NSMPCDAT";
pub const DATA_VERSION: u32 = 1;

/// Attempts per record before generation gives up.
pub const REGEN_BUDGET: usize = 10;

/// Latest time, in seconds of scenario clock, at which the ego is placed.
const MAX_PLACEMENT_TIME: f64 = 12.0;
const PLACEMENT_SPEED: f64 = 5.0;
const MAX_LATERAL: f64 = 2.0;
const MAX_HEADING: f64 = 0.3;
const NEAR_ACTOR_PROB: f64 = 0.6;
/// Range of distances, in meters of arc length, behind the chosen actor.
const NEAR_ACTOR_GAP: (f64, f64) = (3.0, 20.0);
const STOPPED_PROB: f64 = 0.2;
const HISTORY_SPEED: (f64, f64) = (3.0, 6.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stack: GridStack,
    pub label: ControlSequence,
    pub scene_id: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub horizon: usize,
    pub dt: f64,
    pub grid: GridSpec,
    pub count: usize,
}

impl DatasetHeader {
    fn record_len(&self) -> usize {
        16 + 4 * (STACK_CHANNELS * self.grid.cells() + 2 * self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub dt: f64,
    pub grid: GridSpec,
    pub samples: Vec<Sample>,
}

/// Everything the labeler needs besides the scenario list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    pub grid: GridSpec,
    pub dt: f64,
    pub sampler: SamplerConfig,
    pub weights: CostWeights,
    pub bounds: ControlBounds,
    pub heuristic: HeuristicParams,
    pub safety_margin: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            dt: 0.1,
            sampler: SamplerConfig::default(),
            weights: CostWeights::default(),
            bounds: ControlBounds::default(),
            heuristic: HeuristicParams::default(),
            safety_margin: 0.3,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.sampler.validate()?;
        self.weights.validate()?;
        self.bounds.validate()?;
        if !(self.dt > 0.0) || !(self.safety_margin >= 0.0) {
            return Err(Error::invalid("dt must be positive and the safety margin non-negative"));
        }
        Ok(())
    }
}

/// A catalog scene advanced to a random time with the ego at a perturbed
/// pose, plus the ego poses of the four preceding frames (oldest first).
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedScene {
    pub scene: Scene,
    pub history: Vec<VehicleState>,
}

pub fn scene_id(name: &str) -> Result<u64> {
    SCENARIOS
        .iter()
        .position(|&n| n == name)
        .map(|i| i as u64)
        .ok_or_else(|| Error::invalid(format!("unknown scenario `{name}`; valid names: {}", SCENARIOS.join(", "))))
}

/// Deterministic ego placement for `(scenario, seed)`. Returns `None` when
/// the drawn pose already collides.
///
/// Most placements put the ego a few meters behind an actor; some give it a
/// stationary history, as after a blocked-plan stop.
pub fn placed_scene(name: &str, seed: u64, dt: f64) -> Result<Option<PlacedScene>> {
    let base = scenario(name, seed)?;
    let path = &base.centerline;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x706c_6163_65));
    let t = rng.random_range(0.0..MAX_PLACEMENT_TIME);
    let mut scene = base.clone();
    for a in &mut scene.actors {
        a.center = a.center_at(t);
    }
    let s = if !scene.actors.is_empty() && rng.random_bool(NEAR_ACTOR_PROB) {
        let a = &scene.actors[rng.random_range(0..scene.actors.len())];
        to_crf(a.center, path).s - rng.random_range(NEAR_ACTOR_GAP.0..NEAR_ACTOR_GAP.1)
    } else {
        base.progress() + PLACEMENT_SPEED * t
    };
    let s = s.clamp(0.0, path.length() - 5.0);
    let d = rng.random_range(-MAX_LATERAL..MAX_LATERAL);
    let heading = rng.random_range(-MAX_HEADING..MAX_HEADING);
    let history_speed = if rng.random_bool(STOPPED_PROB) {
        0.0
    } else {
        rng.random_range(HISTORY_SPEED.0..HISTORY_SPEED.1)
    };
    let pos = from_crf(FrenetCoord { s, d }, path)?;
    scene.ego = VehicleState::new(pos[0], pos[1], path.pose_at(s).theta + heading);
    if collision_check(&scene) {
        return Ok(None);
    }
    let (sin, cos) = scene.ego.theta.sin_cos();
    let history = (1..HISTORY_LEN)
        .rev()
        .map(|k| {
            let back = k as f64 * dt * history_speed;
            VehicleState::new(scene.ego.x - back * cos, scene.ego.y - back * sin, scene.ego.theta)
        })
        .collect();
    Ok(Some(PlacedScene { scene, history }))
}

/// The five-frame planner input for a placed scene.
pub fn placed_stack(placed: &PlacedScene, spec: &GridSpec, dt: f64) -> Result<GridStack> {
    let n = placed.history.len();
    let mut frames = Vec::with_capacity(HISTORY_LEN);
    for (i, pose) in placed.history.iter().enumerate() {
        let lag = (n - i) as f64 * dt;
        let mut past = placed.scene.clone();
        past.ego = *pose;
        for a in &mut past.actors {
            a.center = a.center_at(-lag);
        }
        frames.push(render_grid(&past, spec));
    }
    frames.push(render_grid(&placed.scene, spec));
    let local = path_in_ego_frame(&placed.scene.centerline, &placed.scene.ego);
    stack(frames, rasterize_path(&local, spec))
}

/// Plans in the center-line frame and returns world-frame controls, or
/// `None` when the oracle's best plan is blocked or the mapped-back label
/// fails the world check.
pub fn label_scene(scene: &Scene, cfg: &LabelConfig, seed: u64) -> Result<Option<ControlSequence>> {
    let path = &scene.centerline;
    let h = cfg.sampler.horizon;
    let mut obstacles: Vec<Obstacle> = scene
        .actors
        .iter()
        .map(|a| {
            let f = to_crf(a.center, path);
            Obstacle {
                center: [f.s, f.d],
                radius: a.radius,
                velocity: velocity_to_crf(a.velocity, f.s, path),
            }
        })
        .collect();
    let road_only = Scene {
        actors: Vec::new(),
        ..scene.clone()
    };
    let edges = grid_to_obstacles(&render_grid(&road_only, &cfg.grid));
    obstacles.extend(edges.circles.iter().map(|o| {
        let f = to_crf(scene.ego.to_world(o.center), path);
        Obstacle::fixed([f.s, f.d], o.radius)
    }));
    let problem = PlanProblem::new(
        pose_to_crf(scene.ego, path),
        ObstacleSet::new(obstacles)?,
        cfg.weights,
        cfg.bounds,
        scene.ego_radius + cfg.safety_margin,
        cfg.dt,
    );
    let straight = GlobalPath::straight([0.0, 0.0], [path.length(), 0.0])?;
    let init = candidate_mean(&problem, &straight, &cfg.heuristic, h);
    let sampler = SamplerConfig {
        rng_seed: seed,
        ..cfg.sampler
    };
    let plan = plan_iterative(&init, &problem, &sampler.for_mode(PlanMode::Mppi), PlanMode::Mppi)?;
    if plan.blocked_best {
        return Ok(None);
    }
    let crf_traj = rollout_unicycle(problem.start, &plan.mean_controls)?;
    let mut targets = Vec::with_capacity(h);
    for st in &crf_traj.states[1..] {
        match from_crf(FrenetCoord { s: st.x, d: st.y }, path) {
            Ok(p) => targets.push(p),
            Err(_) => return Ok(None),
        }
    }
    let mut label = fit_arc_controls(scene.ego, &targets, cfg.dt);
    for u in &mut label.controls {
        u.v = u.v as f32 as f64;
        u.omega = u.omega as f32 as f64;
    }
    Ok(label_is_clear(scene, &label).then_some(label))
}

/// Rolls `label` out in the live world and checks every step.
pub fn label_is_clear(scene: &Scene, label: &ControlSequence) -> bool {
    let mut w = scene.clone();
    if collision_check(&w) {
        return false;
    }
    for &u in &label.controls {
        w = world_step(&w, u, label.dt);
        if collision_check(&w) {
            return false;
        }
    }
    true
}

/// Builds one record of `name`, trying up to [`REGEN_BUDGET`] derived seeds.
pub fn generate_sample(name: &str, index: u64, base_seed: u64, cfg: &LabelConfig) -> Result<Sample> {
    let id = scene_id(name)?;
    let stream = derive_seed(base_seed, id);
    for attempt in 0..REGEN_BUDGET as u64 {
        let seed = derive_seed(stream, index * REGEN_BUDGET as u64 + attempt);
        let Some(placed) = placed_scene(name, seed, cfg.dt)? else {
            continue;
        };
        if let Some(label) = label_scene(&placed.scene, cfg, derive_seed(seed, 1))? {
            return Ok(Sample {
                stack: placed_stack(&placed, &cfg.grid, cfg.dt)?,
                label,
                scene_id: id,
                seed,
            });
        }
    }
    Err(Error::Generation {
        scenario: name.to_string(),
        message: format!("record {index}: no collision-free label after {REGEN_BUDGET} attempts"),
    })
}

/// `count` records per scenario, in scenario-then-index order.
pub fn generate_dataset(scenarios: &[String], count: usize, cfg: &LabelConfig, seed: u64) -> Result<Dataset> {
    let mix: Vec<(String, usize)> = scenarios.iter().map(|n| (n.clone(), count)).collect();
    generate_mix(&mix, cfg, seed)
}

/// Like [`generate_dataset`] with a separate record count per scenario.
pub fn generate_mix(mix: &[(String, usize)], cfg: &LabelConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    for (name, _) in mix {
        scene_id(name)?;
    }
    let jobs: Vec<(&str, u64)> = mix
        .iter()
        .flat_map(|(n, count)| (0..*count as u64).map(move |i| (n.as_str(), i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(name, i)| generate_sample(name, i, seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        horizon: cfg.sampler.horizon,
        dt: cfg.dt,
        grid: cfg.grid,
        samples,
    })
}

/// Splits `total` records across scenarios in proportion to their weights,
/// handing leftover records to the largest remainders first.
pub fn allocate(total: usize, weights: &[(String, usize)]) -> Result<Vec<(String, usize)>> {
    let sum: usize = weights.iter().map(|w| w.1).sum();
    if sum == 0 {
        return Err(Error::invalid("scenario weights must not all be zero"));
    }
    let mut out: Vec<(String, usize)> = weights.iter().map(|(n, w)| (n.clone(), total * w / sum)).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * weights[i].1 % sum), i));
    let assigned: usize = out.iter().map(|o| o.1).sum();
    for &i in order.iter().take(total - assigned) {
        out[i].1 += 1;
    }
    Ok(out)
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: DATA_VERSION,
            horizon: self.horizon,
            dt: self.dt,
            grid: self.grid,
            count: self.samples.len(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = self.header();
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + header.count * header.record_len());
        out.extend_from_slice(DATA_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (i, s) in self.samples.iter().enumerate() {
            if *s.stack.spec() != self.grid || s.label.horizon() != self.horizon {
                return Err(Error::invalid(format!("sample {i} does not match the dataset shape")));
            }
            out.extend_from_slice(&s.scene_id.to_le_bytes());
            out.extend_from_slice(&s.seed.to_le_bytes());
            for v in s.stack.to_values().into_iter().chain(s.label.to_flat()) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(bytes.len() as u64, "file too short for a dataset header"));
        }
        if &bytes[..8] != DATA_MAGIC {
            return Err(Error::format(0, "bad magic, expected NSMPCDAT"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = 12 + hlen;
        if bytes.len() < body {
            return Err(Error::format(bytes.len() as u64, format!("header declares {hlen} bytes, file ends early")));
        }
        let header: DatasetHeader = serde_json::from_slice(&bytes[12..body])
            .map_err(|e| Error::format(12, format!("invalid header JSON: {e}")))?;
        if header.version != DATA_VERSION {
            return Err(Error::format(12, format!("unsupported dataset version {}", header.version)));
        }
        header.grid.validate()?;
        let rec = header.record_len();
        let n_stack = STACK_CHANNELS * header.grid.cells();
        let mut samples = Vec::with_capacity(header.count);
        for index in 0..header.count {
            let offset = body + index * rec;
            let record_err = |message: String| Error::Record {
                index,
                offset: offset as u64,
                message,
            };
            let Some(chunk) = bytes.get(offset..offset + rec) else {
                return Err(record_err(format!(
                    "truncated: needs {rec} bytes, {} remain",
                    bytes.len().saturating_sub(offset)
                )));
            };
            let scene_id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let seed = u64::from_le_bytes(chunk[8..16].try_into().unwrap());
            let values: Vec<f64> = chunk[16..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            if let Some(k) = values[..n_stack].iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(record_err(format!("stack value {k} is {}, expected 0 or 1", values[k])));
            }
            let stack = GridStack::from_values(header.grid, &values[..n_stack]).map_err(|e| record_err(e.to_string()))?;
            let label = ControlSequence::from_flat(&values[n_stack..], header.dt).map_err(|e| record_err(e.to_string()))?;
            samples.push(Sample {
                stack,
                label,
                scene_id,
                seed,
            });
        }
        let end = body + header.count * rec;
        if bytes.len() != end {
            return Err(Error::format(
                end as u64,
                format!("{} trailing bytes after {} records", bytes.len() - end, header.count),
            ));
        }
        Ok(Self {
            horizon: header.horizon,
            dt: header.dt,
            grid: header.grid,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Control;
    use crate::occupancy::OccupancyGrid;

    fn small_cfg() -> LabelConfig {
        LabelConfig {
            sampler: SamplerConfig {
                n_samples: 128,
                ..SamplerConfig::default()
            },
            ..LabelConfig::default()
        }
    }

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let spec = GridSpec {
            width: 8,
            height: 6,
            ..GridSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let frames: Vec<OccupancyGrid> = (0..STACK_CHANNELS)
                    .map(|_| {
                        OccupancyGrid::from_cells(spec, (0..spec.cells()).map(|_| rng.random_bool(0.3) as u8).collect())
                            .unwrap()
                    })
                    .collect();
                let mut frames = frames;
                let path = frames.pop().unwrap();
                let controls = (0..4)
                    .map(|_| Control::new((rng.random::<f32>() * 9.0) as f64, (rng.random::<f32>() - 0.5) as f64))
                    .collect();
                Sample {
                    stack: stack(frames, path).unwrap(),
                    label: ControlSequence::new(controls, 0.1).unwrap(),
                    scene_id: rng.random_range(0..6),
                    seed: rng.random(),
                }
            })
            .collect();
        Dataset {
            horizon: 4,
            dt: 0.1,
            grid: spec,
            samples,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ds = random_dataset(100, 1);
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.header().count, 100);
    }

    #[test]
    fn corrupted_files_report_location() {
        let ds = random_dataset(5, 2);
        let bytes = ds.to_bytes().unwrap();
        let rec = ds.header().record_len();
        let truncated = &bytes[..bytes.len() - rec - 3];
        match Dataset::from_bytes(truncated) {
            Err(Error::Record { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected a record error, got {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(7);
        assert!(matches!(Dataset::from_bytes(&extra), Err(Error::Format { .. })));
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut nonbinary = bytes.clone();
        let first_value = 12 + json_len + 16;
        nonbinary[first_value..first_value + 4].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(Dataset::from_bytes(&nonbinary), Err(Error::Record { index: 0, .. })));
        let text = String::from_utf8_lossy(&bytes[12..12 + json_len]).replace("\"version\":1", "\"version\":9");
        let mut wrong_version = bytes[..8].to_vec();
        wrong_version.extend_from_slice(&(text.len() as u32).to_le_bytes());
        wrong_version.extend_from_slice(text.as_bytes());
        wrong_version.extend_from_slice(&bytes[12 + json_len..]);
        assert!(matches!(Dataset::from_bytes(&wrong_version), Err(Error::Format { offset: 12, .. })));
    }

    #[test]
    fn record_order_does_not_matter() {
        let ds = random_dataset(6, 3);
        let mut shuffled = ds.clone();
        shuffled.samples.reverse();
        let back = Dataset::from_bytes(&shuffled.to_bytes().unwrap()).unwrap();
        let mut a: Vec<_> = back.samples.iter().map(|s| s.seed).collect();
        let mut b: Vec<_> = ds.samples.iter().map(|s| s.seed).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_labels_are_collision_free_and_reproducible() {
        let cfg = small_cfg();
        let names = vec!["straight_empty".to_string()];
        let ds = generate_dataset(&names, 10, &cfg, 5).unwrap();
        assert_eq!(ds.samples.len(), 10);
        for s in &ds.samples {
            let placed = placed_scene("straight_empty", s.seed, cfg.dt).unwrap().unwrap();
            assert!(label_is_clear(&placed.scene, &s.label));
            assert_eq!(placed_stack(&placed, &cfg.grid, cfg.dt).unwrap(), s.stack);
        }
        let again = generate_dataset(&names, 10, &cfg, 5).unwrap();
        assert_eq!(ds.to_bytes().unwrap(), again.to_bytes().unwrap());
    }

    #[test]
    fn dynamic_labels_avoid_moving_actors() {
        let cfg = small_cfg();
        for i in 0..4 {
            let s = generate_sample("dynamic_crossing", i, 9, &cfg).unwrap();
            let placed = placed_scene("dynamic_crossing", s.seed, cfg.dt).unwrap().unwrap();
            assert!(label_is_clear(&placed.scene, &s.label));
        }
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        let err = generate_dataset(&["nowhere".to_string()], 1, &small_cfg(), 0).unwrap_err();
        assert!(err.to_string().contains("random_mixed"));
    }

    #[test]
    fn history_shows_actor_motion() {
        let placed = (0..50)
            .find_map(|s| placed_scene("dynamic_oncoming", s, 0.1).unwrap())
            .unwrap();
        let st = placed_stack(&placed, &GridSpec::default(), 0.1).unwrap();
        assert_eq!(st.frames().len(), HISTORY_LEN);
        assert_eq!(st.frames()[HISTORY_LEN - 1], render_grid(&placed.scene, &GridSpec::default()));
    }

    #[test]
    fn allocation_follows_weights() {
        let w: Vec<(String, usize)> = [("a", 3), ("b", 3), ("c", 1), ("d", 1), ("e", 1), ("f", 1)]
            .iter()
            .map(|(n, k)| (n.to_string(), *k))
            .collect();
        let counts = |t| allocate(t, &w).unwrap().into_iter().map(|o| o.1).collect::<Vec<_>>();
        assert_eq!(counts(10), vec![3, 3, 1, 1, 1, 1]);
        assert_eq!(counts(3), vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(counts(1000).iter().sum::<usize>(), 1000);
        assert!(allocate(5, &[("a".into(), 0)]).is_err());
    }
}
