use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nsmpc_core::roadseg::{ransac_plane, roadseg_forward, synth_scene, NormBounds, SceneSpec};
use nsmpc_core::RoadSegNet;

fn segmentation(c: &mut Criterion) {
    let cloud = synth_scene(1, &SceneSpec::default());
    let net = RoadSegNet::new(6, NormBounds::of(&cloud.points).unwrap(), 0).unwrap();
    let mut group = c.benchmark_group("segment_cloud");
    group.throughput(Throughput::Elements(cloud.len() as u64));
    group.sample_size(20);
    group.bench_with_input(BenchmarkId::new("mlp", cloud.len()), &cloud, |b, cl| {
        b.iter(|| roadseg_forward(&net, black_box(cl)).unwrap())
    });
    for iters in [100, 1000] {
        group.bench_with_input(BenchmarkId::new(format!("ransac_{iters}"), cloud.len()), &cloud, |b, cl| {
            b.iter(|| ransac_plane(black_box(cl), iters, 0.05, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, segmentation);
criterion_main!(benches);
