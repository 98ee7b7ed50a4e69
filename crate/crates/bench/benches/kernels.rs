use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use quatsign_bench::{dataset, motion_pair, tiny_model};
use quatsign_core::losses::geodesic_loss;
use quatsign_core::metrics::{dtw_align, mbae, mje};
use quatsign_core::trainer::{self, TrainConfig};
use quatsign_core::{decode, encode, OutputMode};

fn codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("codec");
    for frames in [32, 128] {
        let (sk, pose, _) = motion_pair(frames, 0);
        let rot = encode(&pose, &sk).unwrap();
        group.bench_with_input(BenchmarkId::new("encode", frames), &frames, |b, _| {
            b.iter(|| encode(black_box(&pose), &sk).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decode", frames), &frames, |b, _| {
            b.iter(|| decode(black_box(&rot), &sk).unwrap())
        });
    }
    group.finish();
}

fn losses_and_metrics(c: &mut Criterion) {
    let (sk, a, b) = motion_pair(64, 1);
    let (ra, rb) = (encode(&a, &sk).unwrap(), encode(&b, &sk).unwrap());
    c.bench_function("geodesic_loss/64", |bn| {
        bn.iter(|| geodesic_loss(black_box(&ra), &rb).unwrap())
    });
    c.bench_function("mje/64", |bn| bn.iter(|| mje(black_box(&a), &b).unwrap()));
    c.bench_function("mbae/64", |bn| bn.iter(|| mbae(black_box(&ra), &rb).unwrap()));

    let mut group = c.benchmark_group("dtw_align");
    for n in [64, 256] {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.13).cos()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bn, _| {
            bn.iter(|| dtw_align(black_box(&x), &y, |p, q| (p - q).abs()).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let data = dataset(8, 16, 2);
    for mode in [OutputMode::Cartesian, OutputMode::Quaternion] {
        let model = tiny_model(&data, mode, 0);
        let mut config = TrainConfig::toy(model.config().clone());
        config.epochs = 1;
        config.scheduled_sampling = 0.0;
        c.bench_function(&format!("train_epoch/{mode}"), |b| {
            b.iter(|| trainer::train(black_box(&data), &config).unwrap())
        });
        let glosses = data.samples[0].glosses.clone();
        c.bench_function(&format!("generate/{mode}"), |b| {
            b.iter(|| model.generate(black_box(&glosses)).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = codec, losses_and_metrics, model
}
criterion_main!(benches);
