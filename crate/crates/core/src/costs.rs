//! Trajectory scoring: control smoothness, circle-circle collision and their
//! weighted sum, plus a smooth obstacle penalty for gradient steps.

use serde::{Deserialize, Serialize};

use crate::kinematics::{Control, ControlSequence, Trajectory, VehicleState};
use crate::occupancy::{Obstacle, ObstacleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub w_ang: f64,
    pub w_lin: f64,
    pub w_o: f64,
    /// Finite stand-in for an infinite collision cost.
    pub blocked_penalty: f64,
    /// Clearance below which the smooth obstacle penalty becomes active.
    pub margin: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_ang: 1.0,
            w_lin: 1.0,
            w_o: 1.0,
            blocked_penalty: 1e6,
            margin: 0.25,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.w_ang, self.w_lin, self.w_o, self.blocked_penalty, self.margin];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(crate::Error::Config(format!("cost weights must be finite and non-negative: {self:?}")));
        }
        if self.blocked_penalty <= 0.0 {
            return Err(crate::Error::Config("blocked_penalty must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub c_ang: f64,
    pub c_lin: f64,
    pub c_obs: f64,
    pub total: f64,
    pub blocked: bool,
}

fn successive_diff_norm(values: impl Iterator<Item = f64>) -> f64 {
    let mut prev = None;
    let mut acc = 0.0;
    for v in values {
        if let Some(p) = prev {
            let d: f64 = v - p;
            acc += d * d;
        }
        prev = Some(v);
    }
    acc.sqrt()
}

/// Root of the summed squared step-to-step change in angular velocity.
pub fn smoothness_ang(controls: &[Control]) -> f64 {
    successive_diff_norm(controls.iter().map(|u| u.omega))
}

/// Root of the summed squared step-to-step change in linear velocity.
pub fn smoothness_lin(controls: &[Control]) -> f64 {
    successive_diff_norm(controls.iter().map(|u| u.v))
}

#[inline]
pub(crate) fn discs_touch(dx: f64, dy: f64, reach: f64) -> bool {
    dx * dx + dy * dy <= reach * reach
}

/// First step `h ∈ [0, H)` at which the agent disc touches any obstacle disc,
/// with obstacles advanced by their velocity. `states` holds H+1 entries.
pub fn first_collision(states: &[VehicleState], obstacles: &ObstacleSet, agent_radius: f64, dt: f64) -> Option<usize> {
    let horizon = states.len().saturating_sub(1);
    for (h, s) in states[..horizon].iter().enumerate() {
        let t = h as f64 * dt;
        for o in &obstacles.circles {
            let c = o.center_at(t);
            if discs_touch(s.x - c[0], s.y - c[1], agent_radius + o.radius) {
                return Some(h);
            }
        }
    }
    None
}

/// Collision term: `(blocked_penalty, true)` if any state in `[0, H)`
/// touches an obstacle, `(0, false)` otherwise.
pub fn obstacle_cost(
    traj: &Trajectory,
    obstacles: &ObstacleSet,
    agent_radius: f64,
    dt: f64,
    weights: &CostWeights,
) -> (f64, bool) {
    match first_collision(&traj.states, obstacles, agent_radius, dt) {
        Some(_) => (weights.blocked_penalty, true),
        None => (0.0, false),
    }
}

/// Combines smoothness terms with a precomputed blocked flag.
pub fn combine(controls: &[Control], blocked: bool, weights: &CostWeights) -> CostBreakdown {
    let c_ang = smoothness_ang(controls);
    let c_lin = smoothness_lin(controls);
    let c_obs = if blocked { weights.blocked_penalty } else { 0.0 };
    CostBreakdown {
        c_ang,
        c_lin,
        c_obs,
        total: weights.w_ang * c_ang + weights.w_lin * c_lin + weights.w_o * c_obs,
        blocked,
    }
}

pub fn total_cost(
    seq: &ControlSequence,
    traj: &Trajectory,
    obstacles: &ObstacleSet,
    agent_radius: f64,
    weights: &CostWeights,
) -> CostBreakdown {
    let blocked = first_collision(&traj.states, obstacles, agent_radius, seq.dt).is_some();
    combine(&seq.controls, blocked, weights)
}

/// Squared-hinge clearance penalty `Σ_h Σ_o max(0, r_A + r_O + margin − d)²`
/// over states `[0, H)`.
pub fn smooth_obstacle_surrogate(
    states: &[VehicleState],
    obstacles: &ObstacleSet,
    agent_radius: f64,
    margin: f64,
    dt: f64,
) -> f64 {
    let horizon = states.len().saturating_sub(1);
    let mut acc = 0.0;
    for (h, s) in states[..horizon].iter().enumerate() {
        let t = h as f64 * dt;
        for o in &obstacles.circles {
            let c = o.center_at(t);
            let gap = agent_radius + o.radius + margin - (s.x - c[0]).hypot(s.y - c[1]);
            if gap > 0.0 {
                acc += gap * gap;
            }
        }
    }
    acc
}

/// Gradient of [`smooth_obstacle_surrogate`] with respect to every state
/// position; the final state (outside `[0, H)`) always gets zero.
pub fn smooth_obstacle_surrogate_grad(
    states: &[VehicleState],
    obstacles: &ObstacleSet,
    agent_radius: f64,
    margin: f64,
    dt: f64,
) -> Vec<[f64; 2]> {
    let horizon = states.len().saturating_sub(1);
    let mut grad = vec![[0.0; 2]; states.len()];
    for (h, s) in states[..horizon].iter().enumerate() {
        let t = h as f64 * dt;
        for o in &obstacles.circles {
            let c = o.center_at(t);
            let (dx, dy) = (s.x - c[0], s.y - c[1]);
            let d = dx.hypot(dy);
            let gap = agent_radius + o.radius + margin - d;
            if gap > 0.0 && d > 0.0 {
                let k = -2.0 * gap / d;
                grad[h][0] += k * dx;
                grad[h][1] += k * dy;
            }
        }
    }
    grad
}

/// Bucketed obstacle lookup for scoring many rollouts against one scene.
///
/// Static discs are hashed into a uniform grid; moving discs are checked
/// exhaustively. Answers are identical to [`first_collision`].
#[derive(Debug, Clone)]
pub struct CollisionIndex {
    agent_radius: f64,
    pad: f64,
    dt: f64,
    origin: [f64; 2],
    bucket: f64,
    nx: usize,
    ny: usize,
    offsets: Vec<u32>,
    discs: Vec<[f64; 3]>,
    moving: Vec<Obstacle>,
}

impl CollisionIndex {
    pub fn new(obstacles: &ObstacleSet, agent_radius: f64, dt: f64) -> Self {
        Self::with_padding(obstacles, agent_radius, dt, 0.0)
    }

    /// Index whose neighborhood queries also cover clearances up to `pad`
    /// beyond contact, as needed by [`CollisionIndex::surrogate`].
    pub fn with_padding(obstacles: &ObstacleSet, agent_radius: f64, dt: f64, pad: f64) -> Self {
        let (fixed, moving): (Vec<Obstacle>, Vec<Obstacle>) =
            obstacles.circles.iter().partition(|o| o.is_static());
        if fixed.is_empty() {
            return Self {
                agent_radius,
                pad,
                dt,
                origin: [0.0; 2],
                bucket: 1.0,
                nx: 0,
                ny: 0,
                offsets: vec![0],
                discs: Vec::new(),
                moving,
            };
        }
        let max_r = fixed.iter().map(|o| o.radius).fold(0.0, f64::max);
        let bucket = (max_r + agent_radius + pad).max(1e-6);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for o in &fixed {
            for k in 0..2 {
                lo[k] = lo[k].min(o.center[k]);
                hi[k] = hi[k].max(o.center[k]);
            }
        }
        let nx = ((hi[0] - lo[0]) / bucket).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / bucket).floor() as usize + 1;
        let key = |c: [f64; 2]| {
            let i = (((c[0] - lo[0]) / bucket).floor() as usize).min(nx - 1);
            let j = (((c[1] - lo[1]) / bucket).floor() as usize).min(ny - 1);
            i * ny + j
        };
        let mut counts = vec![0u32; nx * ny + 1];
        for o in &fixed {
            counts[key(o.center) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut discs = vec![[0.0; 3]; fixed.len()];
        for o in &fixed {
            let k = key(o.center);
            discs[fill[k] as usize] = [o.center[0], o.center[1], o.radius];
            fill[k] += 1;
        }
        Self {
            agent_radius,
            pad,
            dt,
            origin: lo,
            bucket,
            nx,
            ny,
            offsets: counts,
            discs,
            moving,
        }
    }

    pub fn agent_radius(&self) -> f64 {
        self.agent_radius
    }

    /// Static discs in the 3×3 bucket neighborhood of a point, as CSR ranges.
    #[inline]
    fn neighborhood(&self, x: f64, y: f64) -> Option<([usize; 2], [usize; 2])> {
        if self.nx == 0 {
            return None;
        }
        let fi = ((x - self.origin[0]) / self.bucket).floor();
        let fj = ((y - self.origin[1]) / self.bucket).floor();
        // Discs can reach at most one bucket away.
        if fi < -1.0 || fj < -1.0 || fi > self.nx as f64 || fj > self.ny as f64 {
            return None;
        }
        let (i, j) = (fi as i64, fj as i64);
        let i0 = (i - 1).max(0) as usize;
        let i1 = ((i + 1) as usize).min(self.nx - 1);
        let j0 = (j - 1).max(0) as usize;
        let j1 = ((j + 1) as usize).min(self.ny - 1);
        Some(([i0, i1], [j0, j1]))
    }

    #[inline]
    fn static_hit(&self, x: f64, y: f64) -> bool {
        let Some(([i0, i1], [j0, j1])) = self.neighborhood(x, y) else {
            return false;
        };
        for bi in i0..=i1 {
            let a = self.offsets[bi * self.ny + j0] as usize;
            let b = self.offsets[bi * self.ny + j1 + 1] as usize;
            for d in &self.discs[a..b] {
                if discs_touch(x - d[0], y - d[1], self.agent_radius + d[2]) {
                    return true;
                }
            }
        }
        false
    }

    /// [`smooth_obstacle_surrogate`] evaluated through the index. Requires
    /// `margin` not to exceed the padding the index was built with.
    pub fn surrogate(&self, states: &[VehicleState], margin: f64) -> f64 {
        debug_assert!(margin <= self.pad);
        let horizon = states.len().saturating_sub(1);
        let mut acc = 0.0;
        for (h, s) in states[..horizon].iter().enumerate() {
            if let Some(([i0, i1], [j0, j1])) = self.neighborhood(s.x, s.y) {
                for bi in i0..=i1 {
                    let a = self.offsets[bi * self.ny + j0] as usize;
                    let b = self.offsets[bi * self.ny + j1 + 1] as usize;
                    for d in &self.discs[a..b] {
                        let gap = self.agent_radius + d[2] + margin - (s.x - d[0]).hypot(s.y - d[1]);
                        if gap > 0.0 {
                            acc += gap * gap;
                        }
                    }
                }
            }
            let t = h as f64 * self.dt;
            for o in &self.moving {
                let c = o.center_at(t);
                let gap = self.agent_radius + o.radius + margin - (s.x - c[0]).hypot(s.y - c[1]);
                if gap > 0.0 {
                    acc += gap * gap;
                }
            }
        }
        acc
    }

    /// First colliding step in `[0, H)`, as [`first_collision`].
    pub fn first_collision(&self, states: &[VehicleState]) -> Option<usize> {
        let horizon = states.len().saturating_sub(1);
        for (h, s) in states[..horizon].iter().enumerate() {
            if self.static_hit(s.x, s.y) {
                return Some(h);
            }
            let t = h as f64 * self.dt;
            for o in &self.moving {
                let c = o.center_at(t);
                if discs_touch(s.x - c[0], s.y - c[1], self.agent_radius + o.radius) {
                    return Some(h);
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rollout_unicycle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq_from(v: &[f64], w: &[f64]) -> ControlSequence {
        ControlSequence::new(v.iter().zip(w).map(|(&v, &w)| Control::new(v, w)).collect(), 0.1).unwrap()
    }

    fn states_at(points: &[[f64; 2]]) -> Vec<VehicleState> {
        points.iter().map(|p| VehicleState::new(p[0], p[1], 0.0)).collect()
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_ang(&seq_from(&[1.0; 4], &[0.3; 4]).controls), 0.0);
        assert_eq!(smoothness_ang(&seq_from(&[0.0; 3], &[0.0, 1.0, 1.0]).controls), 1.0);
        let c = smoothness_ang(&seq_from(&[0.0; 4], &[0.0, 0.5, 1.5, 1.0]).controls);
        assert!((c - 1.5f64.sqrt()).abs() < 1e-15);
        assert!((c - 1.224745).abs() < 1e-6);

        assert_eq!(smoothness_lin(&seq_from(&[2.0; 5], &[0.0; 5]).controls), 0.0);
        let c = smoothness_lin(&seq_from(&[1.0, 2.0, 4.0], &[0.0; 3]).controls);
        assert!((c - 5f64.sqrt()).abs() < 1e-15);
        assert!((c - 2.236068).abs() < 1e-6);
        assert_eq!(smoothness_lin(&seq_from(&[3.0, 3.0, 3.0, 5.0], &[0.0; 4]).controls), 2.0);
        // A single-step sequence has no differences.
        assert_eq!(smoothness_lin(&seq_from(&[3.0], &[1.0]).controls), 0.0);
    }

    #[test]
    fn obstacle_cost_examples() {
        let w = CostWeights::default();
        let traj = Trajectory { states: states_at(&[[0.0, 0.0]; 4]) };
        let far = ObstacleSet::new(vec![Obstacle::fixed([3.0, 4.0], 1.0)]).unwrap();
        assert_eq!(obstacle_cost(&traj, &far, 1.0, 0.1, &w), (0.0, false));
        let near = ObstacleSet::new(vec![Obstacle::fixed([1.5, 0.0], 1.0)]).unwrap();
        assert_eq!(obstacle_cost(&traj, &near, 1.0, 0.1, &w), (1e6, true));
    }

    #[test]
    fn head_on_collision_step_matches_distance_table() {
        let seq = ControlSequence::constant(Control::new(1.0, 0.0), 30, 0.1);
        let traj = rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &seq).unwrap();
        let obs = ObstacleSet::new(vec![Obstacle {
            center: [5.0, 0.5],
            radius: 0.5,
            velocity: [-1.0, 0.0],
        }])
        .unwrap();
        // Exhaustive per-step distances.
        let table: Vec<f64> = (0..30)
            .map(|h| {
                let t = h as f64 * 0.1;
                let ax = t;
                let ox = 5.0 - t;
                ((ax - ox).powi(2) + 0.25).sqrt()
            })
            .collect();
        let h_star = table.iter().position(|&d| d <= 1.0).unwrap();
        assert_eq!(h_star, 21);
        assert_eq!(first_collision(&traj.states, &obs, 0.5, 0.1), Some(h_star));
        let (_, blocked) = obstacle_cost(&traj, &obs, 0.5, 0.1, &CostWeights::default());
        assert!(blocked);
    }

    #[test]
    fn final_state_is_not_checked() {
        let traj = Trajectory { states: states_at(&[[0.0, 0.0], [10.0, 0.0]]) };
        let obs = ObstacleSet::new(vec![Obstacle::fixed([10.0, 0.0], 0.5)]).unwrap();
        assert_eq!(first_collision(&traj.states, &obs, 0.5, 0.1), None);
    }

    #[test]
    fn total_cost_examples() {
        let w = CostWeights::default();
        let seq = ControlSequence::constant(Control::new(2.0, 0.1), 10, 0.1);
        let traj = rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &seq).unwrap();
        let c = total_cost(&seq, &traj, &ObstacleSet::default(), 1.0, &w);
        assert_eq!(c.total, 0.0);
        assert!(!c.blocked);

        // c_ang = 1, c_lin = 2
        let seq = seq_from(&[1.0, 1.0, 3.0], &[0.0, 1.0, 1.0]);
        let traj = rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &seq).unwrap();
        let c = total_cost(&seq, &traj, &ObstacleSet::default(), 1.0, &w);
        assert_eq!((c.c_ang, c.c_lin, c.total), (1.0, 2.0, 3.0));

        let obs = ObstacleSet::new(vec![Obstacle::fixed([0.5, 0.0], 0.5)]).unwrap();
        let c = total_cost(&seq, &traj, &obs, 1.0, &w);
        assert!(c.blocked && c.c_obs > 0.0 && c.total >= w.blocked_penalty);
    }

    #[test]
    fn surrogate_examples() {
        let obs = ObstacleSet::new(vec![Obstacle::fixed([0.0, 0.0], 0.5)]).unwrap();
        let far = states_at(&[[5.0, 0.0], [6.0, 0.0]]);
        assert_eq!(smooth_obstacle_surrogate(&far, &obs, 1.0, 0.25, 0.1), 0.0);
        let d = 1.0 + 0.5 + 0.25 - 0.1;
        let one = states_at(&[[d, 0.0], [50.0, 0.0]]);
        let s = smooth_obstacle_surrogate(&one, &obs, 1.0, 0.25, 0.1);
        assert!((s - 0.01).abs() < 1e-12);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let obs = ObstacleSet::new(
            (0..8)
                .map(|_| Obstacle {
                    center: [rng.random_range(0.0..6.0), rng.random_range(-2.0..2.0)],
                    radius: rng.random_range(0.2..0.8),
                    velocity: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                })
                .collect(),
        )
        .unwrap();
        let states: Vec<VehicleState> = (0..21)
            .map(|h| VehicleState::new(0.3 * h as f64, rng.random_range(-0.8..0.8), 0.0))
            .collect();
        let grad = smooth_obstacle_surrogate_grad(&states, &obs, 0.6, 0.25, 0.1);
        let eps = 1e-6;
        let mut checked = 0;
        for h in 0..states.len() {
            for k in 0..2 {
                let mut plus = states.clone();
                let mut minus = states.clone();
                if k == 0 {
                    plus[h].x += eps;
                    minus[h].x -= eps;
                } else {
                    plus[h].y += eps;
                    minus[h].y -= eps;
                }
                let fd = (smooth_obstacle_surrogate(&plus, &obs, 0.6, 0.25, 0.1)
                    - smooth_obstacle_surrogate(&minus, &obs, 0.6, 0.25, 0.1))
                    / (2.0 * eps);
                let g = grad[h][k];
                if g.abs() > 1e-8 || fd.abs() > 1e-8 {
                    checked += 1;
                    assert!((g - fd).abs() / g.abs().max(fd.abs()) < 1e-4, "h={h} k={k}: {g} vs {fd}");
                }
            }
        }
        assert!(checked > 5, "scene too sparse to exercise the gradient");
    }

    #[test]
    fn index_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let n = rng.random_range(0..60);
            let obs = ObstacleSet::new(
                (0..n)
                    .map(|i| Obstacle {
                        center: [rng.random_range(-5.0..20.0), rng.random_range(-8.0..8.0)],
                        radius: rng.random_range(0.1..1.2),
                        velocity: if i % 5 == 0 { [rng.random_range(-2.0..2.0), 0.3] } else { [0.0, 0.0] },
                    })
                    .collect(),
            )
            .unwrap();
            let seq = ControlSequence::new(
                (0..30)
                    .map(|_| Control::new(rng.random_range(0.0..8.0), rng.random_range(-1.0..1.0)))
                    .collect(),
                0.1,
            )
            .unwrap();
            let traj = rollout_unicycle(VehicleState::new(0.0, rng.random_range(-2.0..2.0), 0.1), &seq).unwrap();
            let ra = rng.random_range(0.3..1.5);
            let index = CollisionIndex::new(&obs, ra, 0.1);
            assert_eq!(index.first_collision(&traj.states), first_collision(&traj.states, &obs, ra, 0.1), "trial {trial}");
            let padded = CollisionIndex::with_padding(&obs, ra, 0.1, 0.25);
            assert_eq!(padded.first_collision(&traj.states), index.first_collision(&traj.states));
            let brute = smooth_obstacle_surrogate(&traj.states, &obs, ra, 0.25, 0.1);
            assert!((padded.surrogate(&traj.states, 0.25) - brute).abs() <= 1e-9 * (1.0 + brute), "trial {trial}");
        }
    }

    proptest! {
        #[test]
        fn smoothness_invariances(vals in proptest::collection::vec((0.0f64..8.0, -1.0f64..1.0), 1..40), shift in -3.0f64..3.0) {
            let seq = ControlSequence::new(vals.iter().map(|&(v, w)| Control::new(v, w)).collect(), 0.1).unwrap();
            let shifted: Vec<Control> = seq.controls.iter().map(|u| Control::new(u.v + shift, u.omega + shift)).collect();
            let reversed: Vec<Control> = seq.controls.iter().rev().copied().collect();
            let (a, l) = (smoothness_ang(&seq.controls), smoothness_lin(&seq.controls));
            prop_assert!((smoothness_ang(&shifted) - a).abs() < 1e-9);
            prop_assert!((smoothness_lin(&shifted) - l).abs() < 1e-9);
            prop_assert!((smoothness_ang(&reversed) - a).abs() < 1e-12);
            prop_assert!((smoothness_lin(&reversed) - l).abs() < 1e-12);
        }

        #[test]
        fn blocking_is_monotone_in_agent_radius(ox in 0.0f64..6.0, oy in -2.0f64..2.0, ro in 0.1f64..1.0, ra in 0.1f64..1.0, grow in 0.0f64..1.0, v in 0.0f64..4.0, w in -1.0f64..1.0) {
            let seq = ControlSequence::constant(Control::new(v, w), 20, 0.1);
            let traj = rollout_unicycle(VehicleState::new(0.0, 0.0, 0.0), &seq).unwrap();
            let obs = ObstacleSet::new(vec![Obstacle::fixed([ox, oy], ro)]).unwrap();
            let cw = CostWeights::default();
            let (_, small) = obstacle_cost(&traj, &obs, ra, 0.1, &cw);
            let (_, big) = obstacle_cost(&traj, &obs, ra + grow, 0.1, &cw);
            prop_assert!(!small || big);
            let s = smooth_obstacle_surrogate(&traj.states, &obs, ra, cw.margin, 0.1);
            prop_assert!(s >= 0.0);
            let clearance = traj.states[..20].iter().map(|st| (st.x - ox).hypot(st.y - oy) - ra - ro).fold(f64::INFINITY, f64::min);
            if clearance >= cw.margin {
                prop_assert_eq!(s, 0.0);
            }
        }

        #[test]
        fn zero_weights_and_scaling(vals in proptest::collection::vec(proptest::collection::vec((0.0f64..8.0, -1.0f64..1.0), 5), 2..10), k in 0.01f64..100.0) {
            let zero = CostWeights { w_ang: 0.0, w_lin: 0.0, w_o: 0.0, ..CostWeights::default() };
            let base = CostWeights { w_ang: 0.7, w_lin: 1.3, w_o: 1.0, ..CostWeights::default() };
            let scaled = CostWeights { w_ang: 0.7 * k, w_lin: 1.3 * k, w_o: k, ..base };
            let argmin = |w: &CostWeights| {
                let totals: Vec<f64> = vals.iter().map(|c| {
                    let controls: Vec<Control> = c.iter().map(|&(v, o)| Control::new(v, o)).collect();
                    combine(&controls, false, w).total
                }).collect();
                let mut best = 0;
                for (i, t) in totals.iter().enumerate() {
                    if *t < totals[best] { best = i; }
                }
                (best, totals)
            };
            let (_, zeros) = argmin(&zero);
            prop_assert!(zeros.iter().all(|&t| t == 0.0));
            let (b0, t0) = argmin(&base);
            let (b1, _) = argmin(&scaled);
            // Ties within rounding are not meaningful for argmin identity.
            let runner_up = t0.iter().enumerate().filter(|(i, _)| *i != b0).map(|(_, t)| *t).fold(f64::INFINITY, f64::min);
            if runner_up - t0[b0] > 1e-9 * (1.0 + t0[b0]) {
                prop_assert_eq!(b0, b1);
            }
        }
    }
}
