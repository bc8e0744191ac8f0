//! Benchmarks of the data-parallel hot loops.
//!
//! Build with the default `parallel` feature for the rayon path and with
//! `--no-default-features` for the sequential fallback; comparing the two
//! runs shows the parallel speedup per kernel:
//!
//! ```text
//! cargo bench -p boundseg-core
//! cargo bench -p boundseg-core --no-default-features
//! ```

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use boundseg_core::morphology::{distance_transform, erode, StructuringElement};
use boundseg_core::nn::{conv3_forward, Tensor};
use boundseg_core::volume::{LabelVolume, ProbabilityMap, ScalarVolume, VolumeShape};

fn rand_scalar(shape: VolumeShape, seed: u64) -> ScalarVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarVolume::new(shape, (0..shape.num_voxels()).map(|_| rng.gen()).collect()).unwrap()
}

fn bench_conv3(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (cin, cout) = (8, 8);
    let side = 32;
    let input = Tensor::from_vec(
        1,
        cin,
        side,
        side,
        side,
        (0..cin * side * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let weights: Vec<f32> = (0..cout * cin * 27).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let bias: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.2..0.2)).collect();
    c.bench_function("conv3x3x3_8to8_32cubed", |b| {
        b.iter(|| black_box(conv3_forward(black_box(&input), &weights, &bias, cout)))
    });
}

fn bench_erode(c: &mut Criterion) {
    let shape = VolumeShape::cube(96);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.4) as u8).collect();
    let se = StructuringElement::default();
    c.bench_function("erode_26conn_96cubed", |b| {
        b.iter(|| black_box(erode(black_box(&mask), shape, &se)))
    });
}

fn bench_distance_transform(c: &mut Criterion) {
    let shape = VolumeShape::cube(96);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.001) as u8).collect();
    c.bench_function("distance_transform_96cubed", |b| {
        b.iter(|| black_box(distance_transform(black_box(&mask), shape).unwrap()))
    });
}

fn bench_resample(c: &mut Criterion) {
    let vol = rand_scalar(VolumeShape::cube(96), 4);
    let target = VolumeShape::cube(144);
    c.bench_function("trilinear_resample_96_to_144", |b| {
        b.iter(|| black_box(vol.resample(target).unwrap()))
    });
}

fn bench_argmax_and_dice(c: &mut Criterion) {
    let shape = VolumeShape::cube(64);
    let classes = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let region: Vec<f32> = (0..classes * shape.num_voxels()).map(|_| rng.gen()).collect();
    let prob = ProbabilityMap::new(shape, classes, region).unwrap();
    let names: Vec<String> = (0..classes).map(|i| format!("c{i}")).collect();
    let gt = {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        LabelVolume::new(
            shape,
            (0..shape.num_voxels()).map(|_| rng.gen_range(0..classes) as u8).collect(),
            names.clone(),
        )
        .unwrap()
    };
    c.bench_function("argmax_9class_64cubed", |b| {
        b.iter(|| {
            black_box(boundseg_core::volume::argmax_labels(black_box(&prob), &names).unwrap())
        })
    });
    let pred = boundseg_core::volume::argmax_labels(&prob, &names).unwrap();
    c.bench_function("mean_foreground_dice_9class_64cubed", |b| {
        b.iter(|| {
            black_box(
                boundseg_core::evaluation::mean_foreground_dice(black_box(&pred), &gt).unwrap(),
            )
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_conv3, bench_erode, bench_distance_transform, bench_resample, bench_argmax_and_dice
}
criterion_main!(benches);
