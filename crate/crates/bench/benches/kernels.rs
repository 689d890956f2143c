use std::hint::black_box;

use atyvc_core::dsp::{mel_spectrogram, Waveform, SAMPLE_RATE};
use atyvc_core::eval::edit_distance;
use atyvc_core::nn::{forward, init_layer, LayerSpec, ParamStore, Tensor2D};
use atyvc_core::speaker::ge2e_loss;
use criterion::{criterion_group, criterion_main, Criterion};

fn wiggle(n: usize, k: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * k).sin() * 0.5).collect()
}

fn mel(c: &mut Criterion) {
    let w = Waveform::new(wiggle(SAMPLE_RATE as usize, 0.031), SAMPLE_RATE);
    c.bench_function("mel_80_one_second", |b| b.iter(|| mel_spectrogram(black_box(&w), 80).unwrap()));
}

fn blstm(c: &mut Criterion) {
    let spec = LayerSpec::blstm("b", 80, 64, 1);
    let mut params = ParamStore::new(1);
    init_layer(&spec, &mut params).unwrap();
    let x = Tensor2D::from_vec(100, 80, wiggle(8000, 0.17)).unwrap();
    c.bench_function("blstm_64_100_frames", |b| b.iter(|| forward(&spec, &params, black_box(&x)).unwrap()));
}

fn edit(c: &mut Criterion) {
    let a: Vec<u8> = (0..200).map(|i| (i * 7 % 13) as u8).collect();
    let h: Vec<u8> = (0..180).map(|i| (i * 5 % 13) as u8).collect();
    c.bench_function("edit_distance_200", |b| b.iter(|| edit_distance(black_box(&a), black_box(&h)).unwrap()));
}

fn ge2e(c: &mut Criterion) {
    let e = Tensor2D::from_vec(16, 256, wiggle(16 * 256, 0.37)).unwrap();
    c.bench_function("ge2e_4x4_256", |b| b.iter(|| ge2e_loss(black_box(&e), 4, 4, 10.0, -5.0).unwrap()));
}

criterion_group!(kernels, mel, blstm, edit, ge2e);
criterion_main!(kernels);
