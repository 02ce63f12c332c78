mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use nsmpc_core::costs::combine;
use nsmpc_core::dataset::{allocate, generate_mix, Dataset};
use nsmpc_core::eval::{episode_rows, plan_rows, roadseg_suite, EpisodeRow, PlanRow, SegReport, ITERATIONS_SCENARIO};
use nsmpc_core::io::write_atomic;
use nsmpc_core::predictor::{fit, SpatioTemporalNet, TrainSample};
use nsmpc_core::roadseg::{accuracy, roadseg_forward, synth_scene, train_roadseg, PointCloud};
use nsmpc_core::sampler::derive_seed;
use nsmpc_core::sim::{run_episode, scenario, SCENARIOS};
use nsmpc_core::{HistoryMode, Planner, PlannerKind, RunConfig, Suite};

const SCHEMA: &str = "# schema=1";
const THROUGHPUT_POINTS: usize = 100_000;

#[derive(Parser)]
#[command(name = "nsmpc", version, about = "Neural-guided sampling MPC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label placed scenario snapshots with the iterative planner.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total number of records, split across `train.scenarios` by weight.
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Fit the mean predictor to a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the road segmentation network on synthetic or supplied clouds.
    TrainRoadseg {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Labeled `x,y,z,label` CSV to train on instead of synthetic scenes.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Drive one closed-loop episode.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        planner: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Predictor weights, required by nsmpc-learned.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// `true` or `replicate_newest`; overrides `sim.history`.
        #[arg(long)]
        history: Option<String>,
    },
    /// Run a benchmark suite and write results.csv plus a chart.
    Bench {
        #[arg(long)]
        suite: String,
        /// A count `N` (seeds 0..N), a range `a..b`, or a list `1,4,9`.
        #[arg(long, default_value = "20")]
        seeds: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Predictor weights; adds nsmpc-learned to the planner set.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated planner names; defaults to every available planner.
        #[arg(long)]
        planners: Option<String>,
        /// Comma-separated scenario names for the timing and success suites.
        #[arg(long)]
        scenarios: Option<String>,
        /// `true` or `replicate_newest`; overrides `sim.history`.
        #[arg(long)]
        history: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NSMPC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| anyhow!("NSMPC_THREADS must be a non-negative integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed, count } => gen_data(&load_config(config.as_deref())?, &out, seed, count),
        Command::Train { data, out, config } => train(&load_config(config.as_deref())?, &data, &out),
        Command::TrainRoadseg { out, config, seed, data } => {
            train_seg(&load_config(config.as_deref())?, &out, seed, data.as_deref())
        }
        Command::Run { scenario, planner, seed, out, config, weights, history } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(h) = history {
                cfg.sim.history = parse_history(&h)?;
            }
            run(&cfg, &scenario, &planner, seed, &out, weights.as_deref())
        }
        Command::Bench { suite, seeds, out, config, weights, planners, scenarios, history } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(h) = history {
                cfg.sim.history = parse_history(&h)?;
            }
            let suite: Suite = suite.parse()?;
            let seeds = parse_seeds(&seeds)?;
            let net = weights.as_deref().map(load_net).transpose()?;
            let planners = select_planners(&cfg, planners.as_deref(), net)?;
            let scenarios = match scenarios {
                Some(list) => split_list(&list),
                None => default_scenarios(suite),
            };
            for s in &scenarios {
                scenario(s, 0)?;
            }
            bench(&cfg, suite, &seeds, &planners, &scenarios, &out)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn parse_history(s: &str) -> Result<HistoryMode> {
    match s {
        "true" => Ok(HistoryMode::True),
        "replicate_newest" => Ok(HistoryMode::ReplicateNewest),
        other => bail!("unknown history mode `{other}`; valid names: true, replicate_newest"),
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || anyhow!("invalid --seeds `{spec}`; use a count, a range `a..b` or a list `1,4,9`");
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else if spec.contains(',') {
        split_list(spec).iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?
    } else {
        (0..spec.trim().parse::<u64>().map_err(|_| bad())?).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn load_net(path: &Path) -> Result<Arc<SpatioTemporalNet>> {
    let net = SpatioTemporalNet::load(path).with_context(|| format!("loading predictor weights {}", path.display()))?;
    Ok(Arc::new(net))
}

fn select_planners(cfg: &RunConfig, names: Option<&str>, net: Option<Arc<SpatioTemporalNet>>) -> Result<Vec<Planner>> {
    let kinds: Vec<PlannerKind> = match names {
        Some(list) => split_list(list).iter().map(|n| n.parse()).collect::<nsmpc_core::Result<_>>()?,
        None => PlannerKind::ALL
            .into_iter()
            .filter(|&k| k != PlannerKind::NsmpcLearned || net.is_some())
            .collect(),
    };
    kinds
        .into_iter()
        .map(|k| {
            let mut p = cfg.planner(k);
            if let Some(n) = &net {
                p = p.with_net(n.clone());
            }
            p.validate()?;
            Ok(p)
        })
        .collect()
}

fn default_scenarios(suite: Suite) -> Vec<String> {
    match suite {
        Suite::Timing => vec!["random_mixed".into()],
        _ => SCENARIOS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Writes the effective configuration into `dir`.
fn snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    Ok(())
}

fn gen_data(cfg: &RunConfig, out: &Path, seed: u64, count: usize) -> Result<()> {
    let mix = allocate(count, &cfg.train.scenarios)?;
    let data = generate_mix(&mix, &cfg.label(), seed)?;
    data.save(out)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        snapshot(cfg, dir)?;
    } else {
        snapshot(cfg, Path::new("."))?;
    }
    println!("wrote {} records to {}", data.samples.len(), out.display());
    println!("{:<18} {:>6} {:>10} {:>10} {:>10}", "scenario", "count", "mean_cost", "min_cost", "max_cost");
    let mut start = 0;
    for (name, n) in &mix {
        let costs: Vec<f64> = data.samples[start..start + n]
            .iter()
            .map(|s| combine(&s.label.controls, false, &cfg.costs).total)
            .collect();
        start += n;
        if costs.is_empty() {
            println!("{name:<18} {n:>6}");
            continue;
        }
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{name:<18} {n:>6} {mean:>10.4} {min:>10.4} {max:>10.4}");
    }
    Ok(())
}

fn loss_csv<I: IntoIterator<Item = (usize, f64, f64)>>(rows: I) -> String {
    let mut s = format!("{SCHEMA}\nepoch,train_loss,val_loss\n");
    for (e, t, v) in rows {
        let _ = writeln!(s, "{e},{t},{v}");
    }
    s
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::load(data)?;
    let shape = cfg.net_shape();
    if ds.grid != cfg.grid || ds.horizon != shape.horizon {
        bail!(
            "configuration error: dataset has grid {}x{} and horizon {}, the config expects {}x{} and {}",
            ds.grid.height,
            ds.grid.width,
            ds.horizon,
            cfg.grid.height,
            cfg.grid.width,
            shape.horizon
        );
    }
    let samples: Vec<TrainSample> = ds.samples.iter().map(|s| TrainSample::new(&s.stack, &s.label)).collect();
    let mut net = SpatioTemporalNet::new(shape, cfg.predictor.init_seed)?;
    let curve = fit(&mut net, &samples, &cfg.train.predictor)?;
    net.save(&out.join("predictor.bin"))?;
    write_atomic(
        &out.join("loss.csv"),
        loss_csv(curve.iter().map(|e| (e.epoch, e.train_loss, e.val_loss))).as_bytes(),
    )?;
    snapshot(cfg, out)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!(
            "trained on {} samples for {} epochs: train loss {:.4} -> {:.4}, val loss {:.4} -> {:.4}",
            samples.len(),
            curve.len(),
            first.train_loss,
            last.train_loss,
            first.val_loss,
            last.val_loss
        );
    }
    println!("weights: {}", out.join("predictor.bin").display());
    Ok(())
}

fn train_seg(cfg: &RunConfig, out: &Path, seed: u64, data: Option<&Path>) -> Result<()> {
    let rs = &cfg.train.roadseg;
    let clouds: Vec<PointCloud> = match data {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            vec![PointCloud::from_csv(&text)?]
        }
        None => (0..rs.train_scenes as u64)
            .map(|k| synth_scene(derive_seed(seed, k), &rs.scene).downsample(rs.train_density, derive_seed(seed, 1000 + k)))
            .collect(),
    };
    let train_cfg = nsmpc_core::nn::TrainConfig {
        rng_seed: seed,
        ..rs.train
    };
    let run = train_roadseg(&clouds, rs.frequencies, &train_cfg)?;
    run.net.save(&out.join("roadseg.bin"))?;
    write_atomic(
        &out.join("loss.csv"),
        loss_csv(run.curve.iter().map(|e| (e.epoch, e.train_loss, e.val_loss))).as_bytes(),
    )?;
    snapshot(cfg, out)?;
    let held_out = synth_scene(derive_seed(seed, u64::MAX - 1), &rs.scene);
    let acc = accuracy(&roadseg_forward(&run.net, &held_out)?, held_out.labels.as_deref().unwrap_or(&[]));
    println!(
        "trained on {} points: loss {:.4} -> {:.4}; held-out dense accuracy {:.4}",
        clouds.iter().map(|c| c.len()).sum::<usize>(),
        run.initial_loss,
        run.final_loss,
        acc
    );
    Ok(())
}

fn run(cfg: &RunConfig, name: &str, planner: &str, seed: u64, out: &Path, weights: Option<&Path>) -> Result<()> {
    let scene = scenario(name, seed)?;
    let kind: PlannerKind = planner.parse()?;
    let mut p = cfg.planner(kind);
    if let Some(w) = weights {
        p = p.with_net(load_net(w)?);
    }
    p.validate()?;
    let ep = run_episode(&scene, &p, &cfg.episode(seed))?;
    write_atomic(&out.join("log.jsonl"), ep.to_jsonl(false)?.as_bytes())?;
    write_atomic(&out.join("metrics.json"), serde_json::to_string_pretty(&ep.metrics)?.as_bytes())?;
    snapshot(cfg, out)?;
    let m = &ep.metrics;
    println!(
        "scenario={name} planner={planner} seed={seed} success={} collisions={} steps={} min_clearance={:.3} mean_plan_time_ms={:.3} blocked_fallbacks={}",
        m.success,
        m.collisions,
        m.steps,
        m.min_clearance,
        1e3 * m.mean_plan_time(),
        m.blocked_fallbacks
    );
    Ok(())
}

const PLAN_HEADER: &str =
    "suite,planner,scenario,seed,history,iterations,plan_time_s,success,min_clearance,collisions,steps,best_cost,blocked,error";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn history_name(h: HistoryMode) -> &'static str {
    match h {
        HistoryMode::True => "true",
        HistoryMode::ReplicateNewest => "replicate_newest",
    }
}

fn plan_csv(rows: &[PlanRow], history: HistoryMode) -> String {
    let mut s = format!("{SCHEMA}\n{PLAN_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "iterations,{},{},{},{},{},{},,,,,{},{},{}",
            r.planner,
            r.scenario,
            r.seed,
            history_name(history),
            r.update_iterations,
            r.plan_time_s,
            r.best_cost,
            r.blocked,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    s
}

fn episode_csv(suite: Suite, rows: &[EpisodeRow]) -> String {
    let mut s = format!("{SCHEMA}\n{PLAN_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},,,{}",
            suite.name(),
            r.planner,
            r.scenario,
            r.seed,
            history_name(r.history),
            r.mean_iterations,
            r.mean_plan_time_s,
            r.success,
            r.min_clearance,
            r.collisions,
            r.steps,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    s
}

fn seg_csv(report: &SegReport) -> String {
    let mut s = format!("{SCHEMA}\nsuite,method,metric,value\n");
    let rows = [
        ("net", "dense_accuracy", report.dense_accuracy),
        ("net", "transfer_accuracy", report.transfer_accuracy),
        ("ransac", "accuracy", report.ransac_accuracy),
        ("net", "seconds", report.net_seconds),
        ("ransac", "seconds", report.ransac_seconds),
        ("net", "points_per_second", report.throughput_points as f64 / report.net_seconds),
        ("ransac", "points_per_second", report.throughput_points as f64 / report.ransac_seconds),
    ];
    for (m, k, v) in rows {
        let _ = writeln!(s, "roadseg,{m},{k},{v}");
    }
    s
}

fn per_planner<T>(planners: &[Planner], rows: &[T], name: impl Fn(&T) -> &str, value: impl Fn(&[&T]) -> f64) -> Vec<(String, f64)> {
    planners
        .iter()
        .map(|p| {
            let mine: Vec<&T> = rows.iter().filter(|r| name(r) == p.kind.name()).collect();
            (p.kind.name().to_string(), value(&mine))
        })
        .collect()
}

fn bench(cfg: &RunConfig, suite: Suite, seeds: &[u64], planners: &[Planner], scenarios: &[String], out: &Path) -> Result<()> {
    let names: Vec<&str> = scenarios.iter().map(String::as_str).collect();
    let (csv, chart, failures) = match suite {
        Suite::Iterations => {
            let rows = plan_rows(cfg, planners, ITERATIONS_SCENARIO, seeds, true);
            let bars = per_planner(planners, &rows, |r| &r.planner, |rs| {
                rs.iter().map(|r| r.update_iterations as f64).sum::<f64>() / rs.len().max(1) as f64
            });
            for (p, v) in &bars {
                println!("{p:<16} mean update iterations {v}");
            }
            let chart = svg::bar_chart("Update iterations per planning call", "iterations", &bars);
            (plan_csv(&rows, cfg.sim.history), chart, rows.iter().filter(|r| r.error.is_some()).count())
        }
        Suite::Timing | Suite::Success => {
            let rows = episode_rows(cfg, planners, &names, seeds, cfg.sim.history, suite == Suite::Success);
            let chart = if suite == Suite::Timing {
                let bars: Vec<(String, f64)> = planners
                    .iter()
                    .map(|p| (p.kind.name().to_string(), 1e3 * nsmpc_core::eval::mean_step_time(&rows, p.kind.name())))
                    .collect();
                for (p, v) in &bars {
                    println!("{p:<16} mean plan time {v:.3} ms/step");
                }
                svg::bar_chart("Mean planning time per step", "milliseconds", &bars)
            } else {
                let mut bars = Vec::new();
                for p in planners {
                    for sc in &names {
                        let mine: Vec<&EpisodeRow> =
                            rows.iter().filter(|r| r.planner == p.kind.name() && r.scenario == *sc).collect();
                        let rate = mine.iter().filter(|r| r.success).count() as f64 / mine.len().max(1) as f64;
                        println!("{:<16} {sc:<18} success {rate:.3}", p.kind.name());
                        bars.push((format!("{} / {sc}", p.kind.name()), rate));
                    }
                }
                svg::bar_chart("Closed-loop success rate", "success rate", &bars)
            };
            (episode_csv(suite, &rows), chart, rows.iter().filter(|r| r.error.is_some()).count())
        }
        Suite::Roadseg => {
            let seed = seeds[0];
            let (_, report) = roadseg_suite(&cfg.train.roadseg, seed, THROUGHPUT_POINTS)?;
            println!(
                "dense accuracy {:.4}, sparse-to-dense accuracy {:.4}, ransac accuracy {:.4}, speedup {:.2}x at {} points",
                report.dense_accuracy,
                report.transfer_accuracy,
                report.ransac_accuracy,
                report.speedup(),
                report.throughput_points
            );
            let bars = vec![
                ("net dense".to_string(), report.dense_accuracy),
                ("net sparse-to-dense".to_string(), report.transfer_accuracy),
                ("ransac".to_string(), report.ransac_accuracy),
            ];
            let chart = svg::bar_chart("Road segmentation accuracy", "accuracy", &bars);
            (seg_csv(&report), chart, 0)
        }
    };
    write_atomic(&out.join("results.csv"), csv.as_bytes())?;
    write_atomic(&out.join(format!("{}.svg", suite.name())), chart.as_bytes())?;
    snapshot(cfg, out)?;
    if failures > 0 {
        bail!("{failures} benchmark rows failed; see the error column of {}", out.join("results.csv").display());
    }
    Ok(())
}
