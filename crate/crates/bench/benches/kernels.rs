//! Hot-path timings: score and Hessian-vector products through the
//! production-sized energy network, one full Gibbs step, a DSM minibatch
//! gradient, and an MMD evaluation.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use mmgibbs::datasets::{generate, DatasetKind, DatasetSpec};
use mmgibbs::evaluation::{mmd, DEFAULT_BANDWIDTHS};
use mmgibbs::models::{EnergyModel, GaussianMixture, MlpEnergy};
use mmgibbs::numgrad::{MlpParams, MlpShape};
use mmgibbs::sampler::{run_chain, ChainConfig, PosteriorChoice};
use mmgibbs::training::dsm_minibatch_loss;

fn production_net() -> MlpEnergy {
    let shape = MlpShape::new(2, &[400, 400, 400], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    MlpEnergy::new(MlpParams::random(&shape, &mut rng)).unwrap()
}

fn bench_network(c: &mut Criterion) {
    let net = production_net();
    let x = [0.3, -0.8];
    let v = [1.0, -1.0];
    c.bench_function("score 2-400x3-1", |b| {
        b.iter(|| black_box(net.score(black_box(&x), 0.2)))
    });
    c.bench_function("hvp 2-400x3-1", |b| {
        b.iter(|| black_box(net.hvp(black_box(&x), black_box(&v), 0.2)))
    });
}

fn bench_gibbs_step(c: &mut Criterion) {
    let mog = GaussianMixture::four_corners();
    let cfg = ChainConfig { steps: 100, ..ChainConfig::default() };
    c.bench_function("gibbs 100 steps, analytic full", |b| {
        b.iter(|| black_box(run_chain(&mog, &PosteriorChoice::MmFull, &cfg).unwrap()))
    });
    let net = production_net();
    let cfg = ChainConfig { steps: 10, ..ChainConfig::default() };
    c.bench_function("gibbs 10 steps, net diag:3", |b| {
        b.iter(|| {
            black_box(run_chain(&net, &PosteriorChoice::MmDiag { probes: 3 }, &cfg).unwrap())
        })
    });
}

fn bench_dsm_minibatch(c: &mut Criterion) {
    let net = production_net();
    let spec = DatasetSpec { kind: DatasetKind::Mog4 { std: 0.2 }, n: 100, seed: 3 };
    let data = generate(&spec).unwrap();
    let batch: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i)).collect();
    c.bench_function("dsm minibatch 100 × 2-400x3-1", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(1),
            |mut rng| black_box(dsm_minibatch_loss(&net.params, &batch, 0.2, &mut rng).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn bench_mmd(c: &mut Criterion) {
    let a = generate(&DatasetSpec { kind: DatasetKind::Mog4 { std: 0.2 }, n: 1000, seed: 1 })
        .unwrap();
    let b2 = generate(&DatasetSpec { kind: DatasetKind::Mog4 { std: 0.2 }, n: 1000, seed: 2 })
        .unwrap();
    c.bench_function("mmd 1000 vs 1000, 5 bandwidths", |b| {
        b.iter(|| black_box(mmd(&a, &b2, &DEFAULT_BANDWIDTHS).unwrap()))
    });
}

criterion_group!(benches, bench_network, bench_gibbs_step, bench_dsm_minibatch, bench_mmd);
criterion_main!(benches);
