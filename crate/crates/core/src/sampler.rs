//! Sampling-based MPC: Gaussian control sampling, parallel rollout scoring,
//! MPPI and gradient-CEM mean updates, and the single-shot planner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{self, CollisionIndex, CostBreakdown, CostWeights};
use crate::error::{Error, Result};
use crate::kinematics::{rollout_into, Control, ControlBounds, ControlSequence, Trajectory, VehicleState};
use crate::occupancy::ObstacleSet;

/// Finite-difference step for the gradient-CEM objective.
const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    #[serde(rename = "N")]
    pub n_samples: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub sigma_v: f64,
    pub sigma_omega: f64,
    pub lambda: f64,
    pub elite_frac: f64,
    pub grad_step: f64,
    /// Update rounds for MPPI.
    pub iterations: usize,
    /// Update rounds when the gradient-CEM rule is selected.
    pub gradcem_iterations: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 512,
            horizon: 30,
            sigma_v: 0.5,
            sigma_omega: 0.15,
            lambda: 2.0,
            elite_frac: 0.1,
            grad_step: 0.05,
            iterations: 5,
            gradcem_iterations: 3,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_samples == 0 {
            return bad("sampler N must be at least 1");
        }
        if self.horizon == 0 {
            return bad("sampler H must be at least 1");
        }
        if !(self.lambda > 0.0) {
            return bad("sampler lambda must be positive");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return bad("sampler elite_frac must be in (0, 1]");
        }
        if !(self.sigma_v >= 0.0 && self.sigma_omega >= 0.0) {
            return bad("sampler sigmas must be non-negative");
        }
        if !(self.grad_step >= 0.0) {
            return bad("sampler grad_step must be non-negative");
        }
        Ok(())
    }

    /// Copy configured for `mode`'s iteration count.
    pub fn for_mode(&self, mode: PlanMode) -> Self {
        Self {
            iterations: match mode {
                PlanMode::Mppi => self.iterations,
                PlanMode::GradCem => self.gradcem_iterations,
            },
            ..*self
        }
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_frac * self.n_samples as f64).ceil() as usize).clamp(1, self.n_samples)
    }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer) so that
/// nearby indices give unrelated generator streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanMode {
    Mppi,
    GradCem,
}

/// Everything a planner needs to know about one planning instant.
#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub start: VehicleState,
    pub weights: CostWeights,
    pub bounds: ControlBounds,
    pub agent_radius: f64,
    pub dt: f64,
    obstacles: ObstacleSet,
    index: CollisionIndex,
}

impl PlanProblem {
    pub fn new(
        start: VehicleState,
        obstacles: ObstacleSet,
        weights: CostWeights,
        bounds: ControlBounds,
        agent_radius: f64,
        dt: f64,
    ) -> Self {
        let index = CollisionIndex::with_padding(&obstacles, agent_radius, dt, weights.margin);
        Self {
            start,
            weights,
            bounds,
            agent_radius,
            dt,
            obstacles,
            index,
        }
    }

    pub fn obstacles(&self) -> &ObstacleSet {
        &self.obstacles
    }

    fn score_with(&self, controls: &[Control], buf: &mut Vec<VehicleState>) -> CostBreakdown {
        rollout_into(self.start, controls, self.dt, buf);
        let blocked = self.index.first_collision(buf).is_some();
        costs::combine(controls, blocked, &self.weights)
    }

    /// Rollout plus full cost of one control sequence.
    pub fn evaluate(&self, seq: &ControlSequence) -> (Trajectory, CostBreakdown) {
        let mut buf = Vec::new();
        let c = self.score_with(&seq.controls, &mut buf);
        (Trajectory { states: buf }, c)
    }

    /// Smooth objective used by the gradient step.
    pub fn smooth_objective(&self, controls: &[Control], buf: &mut Vec<VehicleState>) -> f64 {
        rollout_into(self.start, controls, self.dt, buf);
        let w = &self.weights;
        w.w_ang * costs::smoothness_ang(controls)
            + w.w_lin * costs::smoothness_lin(controls)
            + w.w_o * self.index.surrogate(buf, w.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub best_total: f64,
    pub median_total: f64,
    pub blocked_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub mean_controls: ControlSequence,
    pub best_controls: ControlSequence,
    pub best_trajectory: Trajectory,
    pub best_cost: CostBreakdown,
    pub best_index: usize,
    pub all_costs: Vec<f64>,
    pub update_iterations: usize,
    pub blocked_best: bool,
    /// Statistics of every scored batch, update rounds first, final round last.
    pub rounds: Vec<IterationStats>,
}

/// Draws `N` perturbed copies of `mean`. Sample 0 is `mean` itself; the rest
/// add i.i.d. Gaussian noise per step and channel and are clamped.
pub fn sample_controls(
    mean: &ControlSequence,
    cfg: &SamplerConfig,
    bounds: &ControlBounds,
    rng: &mut ChaCha8Rng,
) -> Vec<ControlSequence> {
    let mut out = Vec::with_capacity(cfg.n_samples);
    out.push(mean.clone());
    for _ in 1..cfg.n_samples {
        let controls = mean
            .controls
            .iter()
            .map(|u| {
                let nv: f64 = StandardNormal.sample(rng);
                let nw: f64 = StandardNormal.sample(rng);
                bounds.clamp(Control::new(u.v + cfg.sigma_v * nv, u.omega + cfg.sigma_omega * nw))
            })
            .collect();
        out.push(ControlSequence { controls, dt: mean.dt });
    }
    out
}

/// Scores every sample in parallel; output order follows input order.
pub fn score_rollouts(samples: &[ControlSequence], problem: &PlanProblem) -> Vec<CostBreakdown> {
    samples
        .par_iter()
        .map_init(Vec::new, |buf, s| problem.score_with(&s.controls, buf))
        .collect()
}

/// Single-threaded reference for [`score_rollouts`].
pub fn score_rollouts_sequential(samples: &[ControlSequence], problem: &PlanProblem) -> Vec<CostBreakdown> {
    let mut buf = Vec::new();
    samples
        .iter()
        .map(|s| problem.score_with(&s.controls, &mut buf))
        .collect()
}

/// Min-shifted softmax weights `exp(-(C_i - C_min)/λ)`, normalized.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let c_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - c_min) / lambda).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

fn weighted_mean(samples: &[ControlSequence], weights: &[f64], bounds: &ControlBounds) -> ControlSequence {
    let h = samples[0].horizon();
    let mut acc = vec![Control::ZERO; h];
    for (s, &w) in samples.iter().zip(weights) {
        for (a, u) in acc.iter_mut().zip(&s.controls) {
            a.v += w * u.v;
            a.omega += w * u.omega;
        }
    }
    ControlSequence {
        controls: acc,
        dt: samples[0].dt,
    }
    .clamped(bounds)
}

/// Exponentially cost-weighted average of the samples.
pub fn mppi_update(
    samples: &[ControlSequence],
    costs: &[f64],
    lambda: f64,
    bounds: &ControlBounds,
) -> Result<ControlSequence> {
    if samples.is_empty() || samples.len() != costs.len() {
        return Err(Error::invalid("samples and costs must be non-empty and aligned"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    Ok(weighted_mean(samples, &mppi_weights(costs, lambda), bounds))
}

/// Indices of the `k` lowest-cost samples, ties by index.
fn lowest_k(costs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Elite averaging followed by one finite-difference gradient step on the
/// smooth objective.
pub fn gradcem_update(
    samples: &[ControlSequence],
    costs: &[f64],
    cfg: &SamplerConfig,
    problem: &PlanProblem,
) -> Result<ControlSequence> {
    if samples.is_empty() || samples.len() != costs.len() {
        return Err(Error::invalid("samples and costs must be non-empty and aligned"));
    }
    let k = ((cfg.elite_frac * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    let elite = lowest_k(costs, k);
    let w = 1.0 / k as f64;
    let h = samples[0].horizon();
    let mut mean = vec![Control::ZERO; h];
    for &i in &elite {
        for (a, u) in mean.iter_mut().zip(&samples[i].controls) {
            a.v += w * u.v;
            a.omega += w * u.omega;
        }
    }
    if cfg.grad_step > 0.0 {
        let grad = objective_gradient(&mean, problem);
        for (u, g) in mean.iter_mut().zip(grad.chunks_exact(2)) {
            u.v -= cfg.grad_step * g[0];
            u.omega -= cfg.grad_step * g[1];
        }
    }
    Ok(ControlSequence {
        controls: mean,
        dt: samples[0].dt,
    }
    .clamped(&problem.bounds))
}

/// Central-difference gradient of [`PlanProblem::smooth_objective`] over the
/// interleaved `(v, ω)` entries.
pub fn objective_gradient(controls: &[Control], problem: &PlanProblem) -> Vec<f64> {
    let n = controls.len() * 2;
    (0..n)
        .into_par_iter()
        .map_init(
            || (controls.to_vec(), Vec::new()),
            |(work, buf), j| {
                let (step, ch) = (j / 2, j % 2);
                let orig = work[step];
                let bump = |u: &mut Control, d: f64| {
                    if ch == 0 {
                        u.v += d
                    } else {
                        u.omega += d
                    }
                };
                bump(&mut work[step], FD_EPS);
                let plus = problem.smooth_objective(work, buf);
                work[step] = orig;
                bump(&mut work[step], -FD_EPS);
                let minus = problem.smooth_objective(work, buf);
                work[step] = orig;
                (plus - minus) / (2.0 * FD_EPS)
            },
        )
        .collect()
}

/// Best unblocked sample (lowest total, ties to the lowest index); when all
/// samples are blocked, the lowest-cost blocked one.
pub fn select_best(costs: &[CostBreakdown]) -> (usize, bool) {
    let pick = |want_blocked: bool| {
        costs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.blocked == want_blocked)
            .fold(None::<(usize, f64)>, |best, (i, c)| match best {
                Some((_, t)) if t <= c.total => best,
                _ => Some((i, c.total)),
            })
    };
    match pick(false) {
        Some((i, _)) => (i, false),
        None => (pick(true).map(|(i, _)| i).unwrap_or(0), true),
    }
}

fn round_stats(costs: &[CostBreakdown]) -> IterationStats {
    let mut totals: Vec<f64> = costs.iter().map(|c| c.total).collect();
    totals.sort_by(f64::total_cmp);
    let n = totals.len();
    let median = if n % 2 == 1 {
        totals[n / 2]
    } else {
        0.5 * (totals[n / 2 - 1] + totals[n / 2])
    };
    IterationStats {
        best_total: totals[0],
        median_total: median,
        blocked_fraction: costs.iter().filter(|c| c.blocked).count() as f64 / n as f64,
    }
}

fn check_mean(mean: &ControlSequence, cfg: &SamplerConfig) -> Result<()> {
    if mean.horizon() != cfg.horizon {
        return Err(Error::invalid(format!(
            "mean has horizon {}, sampler expects {}",
            mean.horizon(),
            cfg.horizon
        )));
    }
    if !(mean.dt > 0.0) {
        return Err(Error::invalid("mean dt must be positive"));
    }
    Ok(())
}

fn finish(
    mean: ControlSequence,
    samples: Vec<ControlSequence>,
    costs: Vec<CostBreakdown>,
    problem: &PlanProblem,
    update_iterations: usize,
    mut rounds: Vec<IterationStats>,
) -> PlanResult {
    rounds.push(round_stats(&costs));
    let (best_index, blocked_best) = select_best(&costs);
    let best_controls = samples[best_index].clone();
    let (best_trajectory, best_cost) = problem.evaluate(&best_controls);
    PlanResult {
        mean_controls: mean,
        best_controls,
        best_trajectory,
        best_cost,
        best_index,
        all_costs: costs.iter().map(|c| c.total).collect(),
        update_iterations,
        blocked_best,
        rounds,
    }
}

/// Iteratively refines the sampling mean for `cfg.iterations` rounds, then
/// samples once more around the final mean and keeps the best sample.
pub fn plan_iterative(
    initial_mean: &ControlSequence,
    problem: &PlanProblem,
    cfg: &SamplerConfig,
    mode: PlanMode,
) -> Result<PlanResult> {
    check_mean(initial_mean, cfg)?;
    if cfg.iterations == 0 {
        return Err(Error::invalid("iterative planning needs at least one iteration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut mean = initial_mean.clone();
    let mut rounds = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let samples = sample_controls(&mean, cfg, &problem.bounds, &mut rng);
        let scored = score_rollouts(&samples, problem);
        rounds.push(round_stats(&scored));
        let totals: Vec<f64> = scored.iter().map(|c| c.total).collect();
        mean = match mode {
            PlanMode::Mppi => mppi_update(&samples, &totals, cfg.lambda, &problem.bounds)?,
            PlanMode::GradCem => gradcem_update(&samples, &totals, cfg, problem)?,
        };
    }
    let samples = sample_controls(&mean, cfg, &problem.bounds, &mut rng);
    let scored = score_rollouts(&samples, problem);
    Ok(finish(mean, samples, scored, problem, cfg.iterations, rounds))
}

/// One sampling round around a predicted mean; no distribution updates.
pub fn plan_single_shot(
    predicted_mean: &ControlSequence,
    problem: &PlanProblem,
    cfg: &SamplerConfig,
) -> Result<PlanResult> {
    check_mean(predicted_mean, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let samples = sample_controls(predicted_mean, cfg, &problem.bounds, &mut rng);
    let scored = score_rollouts(&samples, problem);
    Ok(finish(predicted_mean.clone(), samples, scored, problem, 0, Vec::new()))
}

/// The control to execute now: step 1 of the best plan.
pub fn receding_horizon_step(plan: &PlanResult) -> Result<Control> {
    plan.best_controls
        .controls
        .get(1)
        .copied()
        .ok_or_else(|| Error::invalid("receding-horizon execution needs a horizon of at least 2"))
}
