//! Parallel vs sequential batch paths: per-utterance projector forwards and
//! synthetic entry generation. On a single-core machine both paths should
//! land within noise of each other.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyalign::bridgeformer::{BridgeFormer, BridgeFormerConfig};
use tinyalign::datakit::synth::synth_entry;
use tinyalign::datakit::{SynthSpec, ToyVocab};
use tinyalign::par;
use tinyalign::Tensor;

fn inputs(count: usize, d_a: usize) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(30..90);
            Tensor::new(vec![1, n, d_a], (0..n * d_a).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap()
        })
        .collect()
}

fn forward_batch(c: &mut Criterion) {
    let cfg = BridgeFormerConfig {
        d_l: 64,
        ..BridgeFormerConfig::default()
    };
    let model = BridgeFormer::<f32>::init(cfg.clone()).unwrap();
    let xs = inputs(16, cfg.d_a);
    let run = |i: usize| model.forward(&xs[i]).unwrap().0;
    let mut group = c.benchmark_group("forward_batch");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", par::current_threads()), |b| {
        b.iter(|| par::map_indexed(xs.len(), run))
    });
    group.bench_function("sequential", |b| b.iter(|| par::map_indexed_seq(xs.len(), run)));
    group.finish();
}

fn synth_batch(c: &mut Criterion) {
    let spec = SynthSpec {
        vocab_size: 64,
        ..SynthSpec::default()
    };
    let vocab = ToyVocab::synthetic(spec.vocab_size).unwrap();
    let run = |i: usize| synth_entry(&spec, &vocab, i).unwrap();
    let mut group = c.benchmark_group("synth_batch");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", par::current_threads()), |b| {
        b.iter(|| par::map_indexed(32, run))
    });
    group.bench_function("sequential", |b| b.iter(|| par::map_indexed_seq(32, run)));
    group.finish();
}

criterion_group!(benches, forward_batch, synth_batch);
criterion_main!(benches);
