use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use std::hint::black_box;

use fadec_core::nn::{conv2d_float, conv2d_quant, grid_sample, lut_apply, ActKind, ActLut, ConvSpec, Grid};
use fadec_core::numerics::{max_exp_for, quantize_tensor, FTensor, QTensor, Tensor};
use fadec_core::rng::SeedTree;
use fadec_core::schedule::{build_dependency_graph, reference_profile, simulate_schedule};
use fadec_core::workload::{analyze, reference_graph};

fn random(shape: &[usize], seed: &str) -> FTensor {
    let mut rng = SeedTree::new(1).child(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn quant(t: &FTensor, bits: u8) -> QTensor {
    quantize_tensor(t, max_exp_for(t, bits), bits).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv 32→32 @ 32×48");
    for (k, s) in [(1, 1), (3, 1), (5, 2)] {
        let spec = ConvSpec::new(k, s, 32, 32).unwrap();
        let x = random(&[32, 32, 48], "x");
        let w = random(&spec.weight_shape(), "w");
        let b = random(&[32], "b");
        let sc = FTensor::full(&[32], 0.75);
        g.bench_with_input(BenchmarkId::new("float", format!("{k}x{k}/{s}")), &spec, |bch, spec| {
            bch.iter(|| conv2d_float(black_box(&x), spec, &w, &b, &sc).unwrap())
        });
        let (xq, wq, bq, sq) = (quant(&x, 16), quant(&w, 8), quant(&b, 32), quant(&sc, 8));
        g.bench_with_input(BenchmarkId::new("quant", format!("{k}x{k}/{s}")), &spec, |bch, spec| {
            bch.iter(|| conv2d_quant(black_box(&xq), spec, &wq, &bq, &sq, 12, 16).unwrap())
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let x = random(&[32, 32, 48], "feature");
    let g = Grid::from_fn(32, 48, |r, q| (r as f32 * 0.97 + 0.3, q as f32 * 1.02 - 0.4)).unwrap();
    c.bench_function("grid_sample 32×32×48", |b| {
        b.iter(|| grid_sample(black_box(&x), &g).unwrap())
    });
}

fn lut(c: &mut Criterion) {
    let x = quant(&random(&[1 << 16], "lut").map(|v| v * 8.0), 16);
    for (kind, half) in [
        (ActKind::Sigmoid, false),
        (ActKind::Sigmoid, true),
        (ActKind::Elu, false),
    ] {
        let lut = ActLut::new(kind, 256, 8.0, half).unwrap().with_exps(x.exp(), 12, 16);
        let name = format!("lut {kind:?}{} 64k", if half { " half" } else { "" });
        c.bench_function(&name, |b| b.iter(|| lut_apply(&lut, black_box(&x)).unwrap()));
    }
}

fn workload(c: &mut Criterion) {
    c.bench_function("reference graph + analysis", |b| {
        b.iter(|| analyze(&reference_graph().unwrap()).unwrap())
    });
    let graph = build_dependency_graph(&reference_profile()).unwrap();
    c.bench_function("schedule 16 frames", |b| {
        b.iter(|| simulate_schedule(black_box(&graph), 16))
    });
}

criterion_group!(benches, conv, sampling, lut, workload);
criterion_main!(benches);
