use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use nsmpc_core::kinematics::{rollout_unicycle, Control, ControlSequence, VehicleState};
use nsmpc_core::sim::{plan_once, scenario, EpisodeConfig};
use nsmpc_core::{Planner, PlannerKind, RunConfig, SpatioTemporalNet};

fn rollout(c: &mut Criterion) {
    let seq = ControlSequence::constant(Control { v: 5.0, omega: 0.2 }, 30, 0.1);
    c.bench_function("rollout_h30", |b| {
        b.iter(|| rollout_unicycle(black_box(VehicleState::new(0.0, 0.0, 0.0)), black_box(&seq)).unwrap())
    });
}

fn planning(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let scene = scenario("static_obstacle", 0).unwrap();
    let episode = EpisodeConfig { seed: 1, ..cfg.episode(1) };
    let net = Arc::new(SpatioTemporalNet::new(cfg.net_shape(), 0).unwrap());
    let mut group = c.benchmark_group("plan_step_n512");
    group.sample_size(20);
    for kind in PlannerKind::ALL {
        let planner: Planner = cfg.planner(kind).with_net(net.clone());
        group.bench_function(kind.name(), |b| b.iter(|| plan_once(black_box(&scene), &planner, &episode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, rollout, planning);
criterion_main!(benches);
