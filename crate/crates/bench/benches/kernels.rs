use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pdan_bench::{input, small_config};
use pdan_core::arch::{build_network, NetworkConfig};
use pdan_core::cost::network_cost;
use pdan_core::data::{bicubic_dataset, bicubic_resize, ssim_y};
use pdan_core::tensor::conv2d;
use pdan_core::train::{TrainConfig, Trainer};
use pdan_core::ConvSpec;
use std::hint::black_box;

fn convolutions(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let x = input(&[1, 64, 48, 48], 1);
    // The widest pyramid layer, the dilated attention conv and the trunk conv.
    for (name, spec) in [
        ("grouped_160_80_g5", ConvSpec::new(160, 80, 3).with_groups(5)),
        ("dilated_2_1_d3", ConvSpec::new(2, 1, 3).with_dilation(3)),
        ("dense_64_64", ConvSpec::new(64, 64, 3)),
    ] {
        let x = if spec.in_channels == 64 { x.clone() } else { input(&[1, spec.in_channels, 48, 48], 2) };
        let w = input(&[spec.out_channels, spec.in_channels / spec.groups, 3, 3], 3);
        group.bench_function(name, |b| b.iter(|| conv2d(black_box(&x), &spec, &w, None).unwrap()));
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let model = build_network(&NetworkConfig::default()).unwrap();
    let mut group = c.benchmark_group("forward_x4");
    group.sample_size(10);
    for side in [16, 32] {
        let x = input(&[3, side, side], 4);
        group.bench_with_input(BenchmarkId::from_parameter(side), &x, |b, x| b.iter(|| model.forward(x).unwrap()));
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let hr = input(&[3, 64, 64], 5);
    let data = bicubic_dataset(vec![("hr".into(), hr)], 2).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        patch_size: 16,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(build_network(&small_config()).unwrap(), cfg).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_small_x2", |b| b.iter(|| trainer.train_step(&data).unwrap()));
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let img = input(&[3, 256, 256], 6);
    let other = input(&[3, 256, 256], 7);
    c.bench_function("bicubic_down_x4_256", |b| b.iter(|| bicubic_resize(black_box(&img), 0.25).unwrap()));
    c.bench_function("ssim_y_256", |b| b.iter(|| ssim_y(&img, &other, 4).unwrap()));
    c.bench_function("cost_report_x4_512", |b| {
        b.iter(|| network_cost(black_box(&NetworkConfig::default()), 512).unwrap())
    });
}

criterion_group!(benches, convolutions, forward, training_step, pipeline);
criterion_main!(benches);
