use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvsfuse_bench::{center_mask, random_image, ring_cameras, surface_cloud};
use mvsfuse_core::{
    align_clouds, distribute_points, estimate_sim3, eval_scene, filter_outliers, frequency_fuse, match_poses,
    poisson_blend, IcpParams, KdTree, Mat3, OutOfRangePolicy, OutlierParams, PoissonMode, Sim3Transform, Vec3,
};

fn kd_tree(c: &mut Criterion) {
    let mut group = c.benchmark_group("kd_tree");
    for n in [10_000, 100_000] {
        let cloud = surface_cloud(n, 1);
        let queries = surface_cloud(1_000, 2);
        group.bench_with_input(BenchmarkId::new("build", n), &cloud, |b, cloud| {
            b.iter(|| KdTree::new(black_box(cloud.positions())))
        });
        let tree = KdTree::new(cloud.positions());
        group.bench_with_input(BenchmarkId::new("nearest_1k", n), &queries, |b, queries| {
            b.iter(|| {
                for q in queries.positions() {
                    black_box(tree.nearest(q));
                }
            })
        });
    }
    group.finish();
}

fn transform() -> Sim3Transform {
    let rot = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    Sim3Transform::new(1.7, rot, Vec3::new(0.5, -2.0, 1.0)).unwrap()
}

fn registration(c: &mut Criterion) {
    let cams = ring_cameras(200);
    let to_source = transform().inverse();
    let moved: Vec<_> = cams.iter().map(|c| c.transformed(&to_source)).collect();
    c.bench_function("estimate_sim3_200", |b| {
        b.iter(|| estimate_sim3(&match_poses(black_box(&cams), black_box(&moved)).unwrap()).unwrap())
    });

    let target = surface_cloud(20_000, 3);
    let source = target.transformed(&to_source);
    let few = ring_cameras(20);
    let few_moved: Vec<_> = few.iter().map(|c| c.transformed(&to_source)).collect();
    let params = IcpParams::for_target(&target);
    c.bench_function("align_clouds_20k", |b| {
        b.iter(|| align_clouds(&source, &few_moved, &target, &few, &params).unwrap())
    });
}

fn evaluation(c: &mut Criterion) {
    let gt = surface_cloud(50_000, 4);
    let pred = surface_cloud(50_000, 5);
    c.bench_function("eval_scene_50k", |b| {
        b.iter(|| eval_scene("bench", &pred, &gt, 0.01).unwrap())
    });
}

fn prepare(c: &mut Criterion) {
    let cloud = surface_cloud(50_000, 6);
    let cams = ring_cameras(20);
    c.bench_function("distribute_50k_20cams", |b| {
        b.iter(|| distribute_points(&cloud, &cams, OutOfRangePolicy::Strict).unwrap())
    });
    c.bench_function("filter_outliers_50k", |b| {
        b.iter(|| filter_outliers(&cloud, &OutlierParams::default()).unwrap())
    });
}

fn blending(c: &mut Criterion) {
    let mut group = c.benchmark_group("blending");
    for size in [64u32, 256] {
        let target = random_image(size, size, 3, 7);
        let source = random_image(size, size, 3, 8);
        let mask = center_mask(size, size);
        group.bench_with_input(BenchmarkId::new("poisson", size), &size, |b, _| {
            b.iter(|| poisson_blend(&target, &source, &mask, PoissonMode::NormalClone).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("frequency", size), &size, |b, _| {
            b.iter(|| frequency_fuse(&target, &source, 0.1).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kd_tree, registration, evaluation, prepare, blending
}
criterion_main!(benches);
