//! Benchmark suites shared by the command line and the acceptance tests.
//!
//! Every suite returns rows in deterministic order. Rows that hit an error
//! carry its message instead of aborting the whole matrix.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RoadSegConfig, RunConfig};
use crate::error::{Error, Result};
use crate::roadseg::{accuracy, ransac_plane, roadseg_forward, synth_scene, train_roadseg, PointCloud, SegTraining};
use crate::sim::{plan_once, run_episode, scenario, HistoryMode, Planner};

pub const ITERATIONS_SCENARIO: &str = "static_obstacle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Iterations,
    Timing,
    Success,
    Roadseg,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Iterations, Suite::Timing, Suite::Success, Suite::Roadseg];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Iterations => "iterations",
            Suite::Timing => "timing",
            Suite::Success => "success",
            Suite::Roadseg => "roadseg",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!("unknown suite `{s}`; valid names: {}", names.join(", ")))
        })
    }
}

/// One planning call from the start of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRow {
    pub planner: String,
    pub scenario: String,
    pub seed: u64,
    pub update_iterations: usize,
    pub best_cost: f64,
    pub blocked: bool,
    pub plan_time_s: f64,
    pub error: Option<String>,
}

/// One closed-loop episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub planner: String,
    pub scenario: String,
    pub seed: u64,
    pub history: HistoryMode,
    pub success: bool,
    pub collisions: usize,
    pub steps: usize,
    pub min_clearance: f64,
    pub mean_iterations: f64,
    pub mean_plan_time_s: f64,
    pub blocked_fallbacks: usize,
    pub error: Option<String>,
}

fn cells<'a>(planners: &'a [Planner], scenarios: &'a [&'a str], seeds: &'a [u64]) -> Vec<(&'a Planner, &'a str, u64)> {
    let mut out = Vec::with_capacity(planners.len() * scenarios.len() * seeds.len());
    for p in planners {
        for &s in scenarios {
            for &seed in seeds {
                out.push((p, s, seed));
            }
        }
    }
    out
}

/// Plans once from the start of `scenario_name` for every planner and seed.
pub fn plan_rows(cfg: &RunConfig, planners: &[Planner], scenario_name: &str, seeds: &[u64], parallel: bool) -> Vec<PlanRow> {
    let names = [scenario_name];
    let work = cells(planners, &names, seeds);
    let run = |&(p, sc, seed): &(&Planner, &str, u64)| -> PlanRow {
        let started = Instant::now();
        let result = scenario(sc, seed).and_then(|scene| plan_once(&scene, p, &cfg.episode(seed)));
        let plan_time_s = started.elapsed().as_secs_f64();
        let (update_iterations, best_cost, blocked, error) = match result {
            Ok(r) => (r.update_iterations, r.best_cost.total, r.blocked_best, None),
            Err(e) => (0, f64::NAN, true, Some(e.to_string())),
        };
        PlanRow {
            planner: p.kind.name().into(),
            scenario: sc.into(),
            seed,
            update_iterations,
            best_cost,
            blocked,
            plan_time_s,
            error,
        }
    };
    if parallel {
        work.par_iter().map(run).collect()
    } else {
        work.iter().map(run).collect()
    }
}

/// Runs one closed-loop episode per planner, scenario and seed.
pub fn episode_rows(
    cfg: &RunConfig,
    planners: &[Planner],
    scenarios: &[&str],
    seeds: &[u64],
    history: HistoryMode,
    parallel: bool,
) -> Vec<EpisodeRow> {
    let work = cells(planners, scenarios, seeds);
    let run = |&(p, sc, seed): &(&Planner, &str, u64)| -> EpisodeRow {
        let ep_cfg = crate::sim::EpisodeConfig {
            history,
            ..cfg.episode(seed)
        };
        let mut row = EpisodeRow {
            planner: p.kind.name().into(),
            scenario: sc.into(),
            seed,
            history,
            success: false,
            collisions: 0,
            steps: 0,
            min_clearance: f64::NAN,
            mean_iterations: f64::NAN,
            mean_plan_time_s: f64::NAN,
            blocked_fallbacks: 0,
            error: None,
        };
        match scenario(sc, seed).and_then(|scene| run_episode(&scene, p, &ep_cfg)) {
            Ok(ep) => {
                let m = ep.metrics;
                row.success = m.success;
                row.collisions = m.collisions;
                row.steps = m.steps;
                row.min_clearance = m.min_clearance;
                row.mean_plan_time_s = m.mean_plan_time();
                row.mean_iterations =
                    m.update_iterations_per_step.iter().sum::<usize>() as f64 / m.steps.max(1) as f64;
                row.blocked_fallbacks = m.blocked_fallbacks;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    };
    if parallel {
        work.par_iter().map(run).collect()
    } else {
        work.iter().map(run).collect()
    }
}

/// Fraction of error-free rows of `planner` that succeeded.
pub fn success_rate(rows: &[EpisodeRow], planner: &str) -> f64 {
    let mine: Vec<&EpisodeRow> = rows.iter().filter(|r| r.planner == planner).collect();
    mine.iter().filter(|r| r.success && r.error.is_none()).count() as f64 / mine.len().max(1) as f64
}

/// Step-weighted mean planning time of `planner`.
pub fn mean_step_time(rows: &[EpisodeRow], planner: &str) -> f64 {
    let (t, n) = rows
        .iter()
        .filter(|r| r.planner == planner && r.error.is_none())
        .fold((0.0, 0usize), |(t, n), r| (t + r.mean_plan_time_s * r.steps as f64, n + r.steps));
    t / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegReport {
    /// Trained on dense clouds, tested on held-out dense clouds.
    pub dense_accuracy: f64,
    /// Trained on sparse clouds, tested on held-out dense clouds.
    pub transfer_accuracy: f64,
    pub ransac_accuracy: f64,
    pub throughput_points: usize,
    pub net_seconds: f64,
    pub ransac_seconds: f64,
}

impl SegReport {
    pub fn speedup(&self) -> f64 {
        self.ransac_seconds / self.net_seconds
    }
}

fn merged(clouds: &[PointCloud]) -> PointCloud {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in clouds {
        points.extend_from_slice(&c.points);
        labels.extend_from_slice(c.labels.as_deref().unwrap_or(&[]));
    }
    PointCloud {
        points,
        labels: Some(labels),
    }
}

/// Trains the dense and sparse networks, scores them on held-out scenes and
/// times both segmenters on a cloud of `throughput_points` points. Returns
/// the dense training run alongside the report.
pub fn roadseg_suite(cfg: &RoadSegConfig, seed: u64, throughput_points: usize) -> Result<(SegTraining, SegReport)> {
    if throughput_points == 0 {
        return Err(Error::invalid("throughput cloud must contain points"));
    }
    let scene_seed = |k: u64| crate::sampler::derive_seed(seed, k);
    let n = cfg.train_scenes as u64;
    let dense: Vec<PointCloud> = (0..n).map(|k| synth_scene(scene_seed(k), &cfg.scene)).collect();
    let sparse: Vec<PointCloud> = dense
        .iter()
        .enumerate()
        .map(|(k, c)| c.downsample(cfg.train_density, scene_seed(1000 + k as u64)))
        .collect();
    let test = merged(&(n..n + 2).map(|k| synth_scene(scene_seed(k), &cfg.scene)).collect::<Vec<_>>());
    let labels = test.labels.as_deref().unwrap_or(&[]);

    let train_cfg = crate::nn::TrainConfig {
        rng_seed: seed,
        ..cfg.train
    };
    let dense_run = train_roadseg(&dense, cfg.frequencies, &train_cfg)?;
    let sparse_run = train_roadseg(&sparse, cfg.frequencies, &train_cfg)?;
    let dense_accuracy = accuracy(&roadseg_forward(&dense_run.net, &test)?, labels);
    let transfer_accuracy = accuracy(&roadseg_forward(&sparse_run.net, &test)?, labels);
    let (_, mask) = ransac_plane(&test, cfg.ransac_iterations, cfg.ransac_threshold, seed)?;
    let ransac_accuracy = mask.iter().zip(labels).filter(|(m, l)| m == l).count() as f64 / labels.len() as f64;

    let base = cfg.scene.road_points + cfg.scene.boxes.iter().map(|b| b.points).sum::<usize>();
    let big_spec = cfg.scene.scaled(1.05 * throughput_points as f64 / base.max(1) as f64);
    let big = synth_scene(scene_seed(u64::MAX), &big_spec);
    let big = PointCloud {
        points: big.points.into_iter().take(throughput_points).collect(),
        labels: None,
    };
    let started = Instant::now();
    std::hint::black_box(roadseg_forward(&dense_run.net, &big)?);
    let net_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    std::hint::black_box(ransac_plane(&big, cfg.ransac_iterations, cfg.ransac_threshold, seed)?);
    let ransac_seconds = started.elapsed().as_secs_f64();

    let report = SegReport {
        dense_accuracy,
        transfer_accuracy,
        ransac_accuracy,
        throughput_points: big.points.len(),
        net_seconds,
        ransac_seconds,
    };
    Ok((dense_run, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::PlannerKind;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.sampler.n_samples = 32;
        cfg.sim.step_cap = 20;
        cfg
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        let err = "speed".parse::<Suite>().unwrap_err().to_string();
        assert!(err.contains("iterations") && err.contains("roadseg"));
    }

    #[test]
    fn plan_rows_report_iteration_counts_in_order() {
        let cfg = small();
        let planners: Vec<Planner> = [PlannerKind::Mppi, PlannerKind::GradCem, PlannerKind::NsmpcHeuristic]
            .into_iter()
            .map(|k| cfg.planner(k))
            .collect();
        let rows = plan_rows(&cfg, &planners, ITERATIONS_SCENARIO, &[0, 1], true);
        let got: Vec<(String, u64, usize)> = rows.iter().map(|r| (r.planner.clone(), r.seed, r.update_iterations)).collect();
        assert_eq!(
            got,
            vec![
                ("mppi".into(), 0, 5),
                ("mppi".into(), 1, 5),
                ("gradcem".into(), 0, 3),
                ("gradcem".into(), 1, 3),
                ("nsmpc-heuristic".into(), 0, 0),
                ("nsmpc-heuristic".into(), 1, 0),
            ]
        );
        let serial = plan_rows(&cfg, &planners, ITERATIONS_SCENARIO, &[0, 1], false);
        for (a, b) in rows.iter().zip(&serial) {
            assert_eq!((a.best_cost, a.blocked), (b.best_cost, b.blocked));
        }
    }

    #[test]
    fn episode_rows_record_errors_per_row() {
        let cfg = small();
        let planners = vec![cfg.planner(PlannerKind::NsmpcHeuristic), cfg.planner(PlannerKind::NsmpcLearned)];
        let rows = episode_rows(&cfg, &planners, &["straight_empty"], &[3], HistoryMode::True, true);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none() && rows[0].steps > 0);
        assert!(rows[0].mean_plan_time_s > 0.0);
        assert!(rows[1].error.as_deref().unwrap().contains("weights"));
        assert_eq!(success_rate(&rows, "nsmpc-learned"), 0.0);
        assert!(mean_step_time(&rows, "nsmpc-heuristic") > 0.0);
    }

    #[test]
    fn roadseg_suite_on_a_small_scene() {
        let mut cfg = RoadSegConfig::default();
        cfg.scene = cfg.scene.scaled(0.1);
        cfg.train_scenes = 2;
        cfg.train_density = 0.5;
        cfg.train.epochs = 5;
        cfg.train.batch_size = 64;
        cfg.ransac_iterations = 50;
        let (run, report) = roadseg_suite(&cfg, 1, 2000).unwrap();
        assert_eq!(run.curve.len(), 5);
        assert_eq!(report.throughput_points, 2000);
        assert!(report.dense_accuracy > 0.5 && report.transfer_accuracy > 0.5);
        assert!(report.net_seconds > 0.0 && report.ransac_seconds > 0.0);
        assert!(roadseg_suite(&cfg, 1, 0).is_err());
    }
}
