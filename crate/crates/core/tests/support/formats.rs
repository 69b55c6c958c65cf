//! Randomized feature files and checkpoints.

use rand::Rng;
use tinyalign::checkpoint::{Checkpoint, ModelKind};
use tinyalign::datakit::{FeatureSequence, RegimeKind};
use tinyalign::params::ParamSet;
use tinyalign::Tensor;

pub const REGIMES: [RegimeKind; 3] = [RegimeKind::FeatureBased, RegimeKind::TransformerBased, RegimeKind::Generative];
pub const KINDS: [ModelKind; 5] = [
    ModelKind::Bridgeformer,
    ModelKind::Toylm,
    ModelKind::EmbeddingTable,
    ModelKind::ToyEncoder,
    ModelKind::Mlp2Projector,
];

pub fn random_values(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => -0.0,
            2 => f32::MIN_POSITIVE,
            3 => rng.gen_range(-1e30..1e30),
            _ => rng.gen_range(-4.0..4.0),
        })
        .collect()
}

pub fn random_features(rng: &mut impl Rng, i: usize) -> FeatureSequence {
    let n = rng.gen_range(1..=40);
    let d = rng.gen_range(1..=48);
    let regime = REGIMES[rng.gen_range(0..3)];
    let id = format!("utt-{i}-é✓-{}", rng.gen::<u32>());
    FeatureSequence::new(regime, id, Tensor::new(vec![1, n, d], random_values(rng, n * d)).unwrap()).unwrap()
}

pub fn random_checkpoint(rng: &mut impl Rng) -> Checkpoint {
    let mut params = ParamSet::new();
    for p in 0..rng.gen_range(0..=6) {
        let rank = rng.gen_range(1..=3);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=7)).collect();
        let n = shape.iter().product();
        params.push(format!("block.{p}.w"), Tensor::new(shape, random_values(rng, n)).unwrap());
    }
    let config = serde_json::json!({
        "hidden": rng.gen_range(1..512),
        "name": format!("cfg-{}", rng.gen::<u16>()),
        "rate": rng.gen_range(0.0..1.0),
        "nested": {"z": [1, 2, 3], "a": null},
    });
    Checkpoint::new(KINDS[rng.gen_range(0..KINDS.len())], &config, params).unwrap()
}
