use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use photoalign::colorxform::solve_color_transform;
use photoalign::sampler::Sampler;
use photoalign::synthbench::{apply_color_effects, generate_scene, perturb_pose, PerturbationSpec, Scene, SceneSpec};
use photoalign::{forward_pass, pose_gradient, AlignConfig, GradientStrategy, Rgb};
use std::hint::black_box;

fn scene(size: usize) -> Scene {
    let mut s = generate_scene(&SceneSpec {
        image_size: (size, size),
        ..SceneSpec::default()
    })
    .unwrap();
    s.image = apply_color_effects(&s.image, 1);
    s
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_pass");
    group.sample_size(20);
    for size in [128, 256] {
        let s = scene(size);
        let theta = perturb_pose(&s.theta_gt, &PerturbationSpec::default());
        let cfg = AlignConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| forward_pass(&s.pc, &s.image, &s.intrinsics, black_box(&theta), &cfg).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let s = scene(256);
    let theta = perturb_pose(&s.theta_gt, &PerturbationSpec::default());
    let cfg = AlignConfig::default();
    let state = forward_pass(&s.pc, &s.image, &s.intrinsics, &theta, &cfg).unwrap();
    c.bench_function("pose_gradient/256", |b| b.iter(|| pose_gradient(black_box(&state), &cfg)));
}

fn color_fit(c: &mut Criterion) {
    let s = scene(256);
    let theta = perturb_pose(&s.theta_gt, &PerturbationSpec::default());
    let state = forward_pass(&s.pc, &s.image, &s.intrinsics, &theta, &AlignConfig::default()).unwrap();
    let img: Vec<Rgb> = state.samples.iter().map(|x| x.color).collect();
    let pc: Vec<Rgb> = state.visible.iter().map(|&i| s.pc.colors()[i]).collect();
    let mut group = c.benchmark_group("color_fit");
    group.sample_size(20);
    group.bench_function("second_order", |b| b.iter(|| solve_color_transform(black_box(&img), &pc, 0.3, 5).unwrap()));
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let s = scene(256);
    let coords: Vec<(f64, f64)> = (0..4096)
        .map(|i| (1.0 + (i % 251) as f64 * 0.997, 1.0 + (i / 17) as f64 * 1.003))
        .collect();
    let mut group = c.benchmark_group("sample_4096");
    for strategy in [GradientStrategy::A, GradientStrategy::B] {
        let sampler = Sampler::new(&s.image, strategy);
        group.bench_function(format!("{strategy:?}"), |b| {
            b.iter(|| {
                coords
                    .iter()
                    .map(|&(u, v)| sampler.sample(u, v).unwrap().grad_u.x)
                    .sum::<f64>()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, gradient, color_fit, sampling);
criterion_main!(benches);
