//! Seeded synthetic corpora with a learnable feature→token correspondence.
//!
//! Every token id owns a spectral signature (three sinusoid partials over the
//! feature axis). An utterance is a sequence of `slots` segments; segment `i`
//! renders the signature of the `i`-th id of the cast transcript, so the
//! projector's pooling bin `i` sees exactly the frames of token `i` whenever
//! the frame count is a multiple of the slot count.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{write_features, FeatureRegime, FeatureSequence, RegimeKind};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::vocab::{ToyVocab, PAD_ID};
use crate::binio::canonical_json;
use crate::checkpoint::Checkpoint;
use crate::embedlink::{cast_tokens, EmbeddingTable};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub const DEFAULT_NOISE: f64 = 0.05;
pub const DEFAULT_AMPLITUDE: f64 = 0.1;
const PARTIALS: usize = 3;
const FREQ_RANGE: (f64, f64) = (1.0, 24.0);
const PAD_GAIN: f64 = 0.2;

/// Stream-splitting seed for item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partial {
    /// Cycles across the whole feature axis.
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
    /// Phase advance across one segment.
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub partials: [Partial; PARTIALS],
}

/// Deterministic id → signature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codebook {
    seed: u64,
}

impl Codebook {
    pub fn new(seed: u64) -> Self {
        Codebook { seed }
    }

    pub fn signature(&self, id: u32) -> Signature {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, id as u64));
        let gain = if id == PAD_ID { PAD_GAIN } else { 1.0 };
        let partials = std::array::from_fn(|_| Partial {
            freq: rng.gen_range(FREQ_RANGE.0..FREQ_RANGE.1),
            amp: gain * rng.gen_range(0.5..1.0),
            phase: rng.gen_range(0.0..TAU),
            drift: rng.gen_range(-0.5..0.5),
        });
        Signature { partials }
    }
}

/// Render `n` frames of width `d`; frame `f` belongs to segment
/// `floor(f·S/n)` of the `S = sigs.len()` signatures.
pub fn render(sigs: &[Signature], n: usize, d: usize, noise: f64, rng: &mut impl Rng) -> Vec<f32> {
    let s = sigs.len();
    let mut out = Vec::with_capacity(n * d);
    for f in 0..n {
        let seg = f * s / n;
        // position of this frame inside its segment, in [0, 1)
        let seg_start = (seg * n).div_ceil(s);
        let seg_end = ((seg + 1) * n).div_ceil(s);
        let tau = (f - seg_start) as f64 / (seg_end - seg_start).max(1) as f64;
        let sig = &sigs[seg];
        for j in 0..d {
            let x = j as f64 / d as f64;
            let clean: f64 = sig
                .partials
                .iter()
                .map(|p| p.amp * (TAU * p.freq * x + p.phase + p.drift * tau).sin())
                .sum();
            let eps: f64 = StandardNormal.sample(rng);
            out.push((clean + noise * eps) as f32);
        }
    }
    out
}

/// Scale `n × d` row-major frames by `gain`, then optionally remove the
/// per-dimension mean over frames.
pub fn condition(v: &mut [f32], n: usize, d: usize, gain: f32, center: bool) {
    v.iter_mut().for_each(|x| *x *= gain);
    if !center || n == 0 {
        return;
    }
    for j in 0..d {
        let m: f32 = (0..n).map(|i| v[i * d + j]).sum::<f32>() / n as f32;
        for i in 0..n {
            v[i * d + j] -= m;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_pairs: usize,
    pub regime: FeatureRegime,
    pub vocab_size: usize,
    /// Width of the generated embedding table.
    pub d_l: usize,
    /// Segments per utterance; equals the casted token size.
    pub slots: usize,
    /// Inclusive range of frames per segment for duration-scaled regimes.
    pub frames_per_slot: (usize, usize),
    /// Width of the pre-feature raw signal per frame.
    pub samples_per_frame: usize,
    pub noise: f64,
    /// Gain applied to rendered features.
    pub amplitude: f64,
    /// Subtract each feature dimension's mean over the utterance.
    pub center: bool,
    /// Trailing fraction of entries tagged `eval`.
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_pairs: 100,
            regime: FeatureRegime::default(),
            vocab_size: 64,
            d_l: 64,
            slots: 30,
            frames_per_slot: (1, 2),
            samples_per_frame: 64,
            noise: DEFAULT_NOISE,
            amplitude: DEFAULT_AMPLITUDE,
            center: true,
            eval_fraction: 0.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.vocab_size < 3 || self.d_l == 0 || self.slots == 0 || self.samples_per_frame == 0 {
            return Err(Error::Config(format!(
                "vocab_size >= 3 and positive d_l, slots, samples_per_frame required: {self:?}"
            )));
        }
        let (lo, hi) = self.frames_per_slot;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad frames_per_slot range ({lo}, {hi})")));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) || !(self.noise >= 0.0) || !(self.amplitude > 0.0) {
            return Err(Error::Config(
                "eval_fraction must be in [0, 1), noise >= 0 and amplitude > 0".into(),
            ));
        }
        if self.regime.kind == RegimeKind::TransformerBased && self.regime.fixed_len < self.slots {
            return Err(Error::Config("fixed_len must be at least the slot count".into()));
        }
        Ok(())
    }

    fn n_eval(&self) -> usize {
        ((self.n_pairs as f64) * self.eval_fraction).round() as usize
    }

    fn codebook(&self) -> Codebook {
        Codebook::new(derive_seed(self.seed, u64::MAX))
    }

    /// Feature dimension, drawn once per dataset for the generative regime.
    pub fn feature_dim(&self) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX - 1));
        self.regime.dim(&mut rng)
    }

    fn table_seed(&self) -> u64 {
        derive_seed(self.seed, u64::MAX - 2)
    }
}

/// One generated utterance before it is written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthEntry {
    pub text: String,
    pub ids: Vec<u32>,
    pub features: FeatureSequence,
    pub raw: FeatureSequence,
    pub split: Split,
}

/// Generate entry `index` of the dataset described by `spec`.
pub fn synth_entry(spec: &SynthSpec, vocab: &ToyVocab, index: usize) -> Result<SynthEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let s = spec.slots;
    let words = rng.gen_range(s.div_ceil(3)..=s);
    let content = vocab.content_ids();
    let ids: Vec<u32> = (0..words).map(|_| rng.gen_range(content.clone())).collect();
    let text = vocab.detokenize(&ids);
    let cast = cast_tokens(&vocab.tokenize(&text), s, PAD_ID)?;

    let n = match spec.regime.kind {
        RegimeKind::TransformerBased => spec.regime.fixed_len,
        _ => s * rng.gen_range(spec.frames_per_slot.0..=spec.frames_per_slot.1),
    };
    let d = spec.feature_dim();
    let codebook = spec.codebook();
    let sigs: Vec<Signature> = cast.ids().iter().map(|&id| codebook.signature(id)).collect();
    let source = format!("synth-{:06}", index);
    let mut feats = render(&sigs, n, d, spec.noise, &mut rng);
    condition(&mut feats, n, d, spec.amplitude as f32, spec.center);
    let raw = render(&sigs, n, spec.samples_per_frame, spec.noise, &mut rng);
    let split = if index >= spec.n_pairs - spec.n_eval() {
        Split::Eval
    } else {
        Split::Train
    };
    Ok(SynthEntry {
        text,
        ids,
        features: FeatureSequence::new(spec.regime.kind, source.clone(), Tensor::new(vec![1, n, d], feats)?)?,
        raw: FeatureSequence::new(
            spec.regime.kind,
            format!("{source}.raw"),
            Tensor::new(vec![1, n, spec.samples_per_frame], raw)?,
        )?,
        split,
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const TABLE_FILE: &str = "embedding.tabf";
pub const SPEC_FILE: &str = "dataset.json";

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub vocab: ToyVocab,
    pub table: EmbeddingTable,
    pub spec: SynthSpec,
}

impl SyntheticDataset {
    /// Open a directory previously written by [`build_synthetic_dataset`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec_path = dir.join(SPEC_FILE);
        let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)?;
        Ok(SyntheticDataset {
            dir: dir.to_path_buf(),
            manifest: DatasetManifest::load(dir.join(MANIFEST_FILE))?,
            vocab: ToyVocab::read(dir.join(VOCAB_FILE))?,
            table: Checkpoint::read(dir.join(TABLE_FILE))?.into_table()?,
            spec,
        })
    }

    pub fn files(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = [MANIFEST_FILE, VOCAB_FILE, TABLE_FILE, SPEC_FILE]
            .iter()
            .map(|f| self.dir.join(f))
            .collect();
        for e in self.manifest.entries() {
            out.push(self.manifest.resolve(&e.features));
            if let Some(r) = &e.raw {
                out.push(self.manifest.resolve(r));
            }
        }
        out
    }
}

/// Write `spec.n_pairs` feature/raw files plus manifest, vocabulary,
/// embedding table and the spec itself under `dir`.
pub fn build_synthetic_dataset(dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let dir = dir.as_ref();
    for sub in ["features", "raw"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let vocab = ToyVocab::synthetic(spec.vocab_size)?;
    let table = EmbeddingTable::random_unit(spec.vocab_size, spec.d_l, PAD_ID, spec.table_seed())?;

    let entries = par::try_map_indexed(spec.n_pairs, |i| -> Result<ManifestEntry> {
        let e = synth_entry(spec, &vocab, i)?;
        let feat_rel = format!("features/{i:06}.taf");
        let raw_rel = format!("raw/{i:06}.taf");
        write_features(&e.features, dir.join(&feat_rel))?;
        write_features(&e.raw, dir.join(&raw_rel))?;
        Ok(ManifestEntry {
            features: feat_rel,
            text: e.text,
            split: Some(e.split),
            raw: Some(raw_rel),
        })
    })?;

    let manifest = DatasetManifest::new(dir, entries);
    manifest.write(dir.join(MANIFEST_FILE))?;
    vocab.write(dir.join(VOCAB_FILE))?;
    Checkpoint::from_table(&table)?.write(dir.join(TABLE_FILE))?;
    let spec_path = dir.join(SPEC_FILE);
    std::fs::write(&spec_path, canonical_json(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    Ok(SyntheticDataset {
        dir: dir.to_path_buf(),
        manifest,
        vocab,
        table,
        spec: spec.clone(),
    })
}
