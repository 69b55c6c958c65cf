//! ROUGE-1 / ROUGE-L, the dual-path evaluation and convergence timing.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::bridgeformer::BridgeFormer;
use crate::datakit::{synth::derive_seed, DatasetManifest, ToyVocab};
use crate::embedlink::{cast_tokens, embed_text, EmbeddingTable, TokenSequence, TrainReport};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;
use crate::toylm::{embed_instruction, inject_instruction, GenerationSettings, ToyLm};

pub const DEFAULT_TARGET_LOSS: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Score from a match count; empty sides follow the 0-unless-both rule.
    pub fn from_counts(matches: usize, ref_len: usize, hyp_len: usize, beta: f64) -> Self {
        match (ref_len, hyp_len) {
            (0, 0) => return RougeScore { precision: 1.0, recall: 1.0, f1: 1.0 },
            (0, _) | (_, 0) => return RougeScore::default(),
            _ => {}
        }
        let precision = matches as f64 / hyp_len as f64;
        let recall = matches as f64 / ref_len as f64;
        let b2 = beta * beta;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            (1.0 + b2) * precision * recall / (recall + b2 * precision)
        };
        RougeScore { precision, recall, f1 }
    }
}

/// Clipped unigram overlap.
pub fn unigram_overlap<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut hits = 0;
    for t in hypothesis {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

/// Longest common subsequence length, two-row DP.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge1<T: Eq + Hash>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    let m = unigram_overlap(reference, hypothesis);
    RougeScore::from_counts(m, reference.len(), hypothesis.len(), 1.0)
}

pub fn rouge_l<T: Eq>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    rouge_l_beta(reference, hypothesis, 1.0)
}

/// ROUGE-L with the weighted F-measure `(1+β²)PR / (R + β²P)`.
pub fn rouge_l_beta<T: Eq>(reference: &[T], hypothesis: &[T], beta: f64) -> RougeScore {
    let l = lcs_len(reference, hypothesis);
    RougeScore::from_counts(l, reference.len(), hypothesis.len(), beta)
}

/// First epoch whose loss is at or below `target`, with the crossing time
/// interpolated linearly inside that epoch.
pub fn convergence_time(report: &TrainReport, target: f64) -> Option<(usize, f64)> {
    let e = report.loss_history.iter().position(|&l| l <= target)?;
    let end = report.epoch_seconds.get(e).copied().unwrap_or(report.wall_clock_seconds);
    if e == 0 {
        return Some((1, end));
    }
    let (l0, l1) = (report.loss_history[e - 1], report.loss_history[e]);
    let t0 = report.epoch_seconds[e - 1];
    let frac = if l0 > l1 { ((l0 - target) / (l0 - l1)).clamp(0.0, 1.0) } else { 1.0 };
    Some((e + 1, t0 + frac * (end - t0)))
}

/// What the projector path sees for one entry.
pub struct EvalInput<'a> {
    pub features: &'a Tensor<f32>,
    /// Pre-feature signal, loaded only for embedders that ask for it.
    pub raw: Option<&'a Tensor<f32>>,
    /// Transcript ids after casting.
    pub cast_text: &'a TokenSequence,
}

/// Anything that turns an entry into `[1, T, D_l]` embeddings.
pub trait AudioEmbedder: Sync {
    fn embed(&self, input: &EvalInput<'_>) -> Result<Tensor<f32>>;

    fn needs_raw(&self) -> bool {
        false
    }
}

impl AudioEmbedder for BridgeFormer<f32> {
    fn embed(&self, input: &EvalInput<'_>) -> Result<Tensor<f32>> {
        Ok(self.forward(input.features)?.0)
    }
}

/// Emits the exact text embeddings; the fixed point of the evaluation.
pub struct TextOracle<'a> {
    pub table: &'a EmbeddingTable,
}

impl AudioEmbedder for TextOracle<'_> {
    fn embed(&self, input: &EvalInput<'_>) -> Result<Tensor<f32>> {
        embed_text(self.table, input.cast_text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub index: usize,
    pub features: String,
    pub rouge1: RougeScore,
    pub rouge_l: RougeScore,
    pub audio_output: Vec<u32>,
    pub text_output: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPathResult {
    /// Means of the per-entry precision, recall and F1.
    pub rouge1: RougeScore,
    pub rouge_l: RougeScore,
    pub entries: Vec<EntryScore>,
    pub skipped: Vec<SkippedEntry>,
    pub n_entries: usize,
}

fn mean_score(scores: impl Iterator<Item = RougeScore> + Clone) -> RougeScore {
    let n = scores.clone().count();
    if n == 0 {
        return RougeScore::default();
    }
    let sum = scores.fold(RougeScore::default(), |a, s| RougeScore {
        precision: a.precision + s.precision,
        recall: a.recall + s.recall,
        f1: a.f1 + s.f1,
    });
    RougeScore {
        precision: sum.precision / n as f64,
        recall: sum.recall / n as f64,
        f1: sum.f1 / n as f64,
    }
}

impl DualPathResult {
    pub fn from_entries(entries: Vec<EntryScore>, skipped: Vec<SkippedEntry>) -> Self {
        DualPathResult {
            rouge1: mean_score(entries.iter().map(|e| e.rouge1)),
            rouge_l: mean_score(entries.iter().map(|e| e.rouge_l)),
            n_entries: entries.len(),
            entries,
            skipped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualPathSettings {
    pub instruction: String,
    pub generation: GenerationSettings,
    pub token_cast: usize,
    /// Weight of recall in the ROUGE-L F-measure.
    pub rouge_l_beta: f64,
}

impl Default for DualPathSettings {
    fn default() -> Self {
        DualPathSettings {
            instruction: String::new(),
            generation: GenerationSettings::default(),
            token_cast: 30,
            rouge_l_beta: 1.0,
        }
    }
}

/// Generate from the projector path and from the ground-truth text path
/// through the same frozen decoder, then score one against the other.
///
/// Entry `i` samples with seed `derive_seed(settings.seed, i)` on both
/// paths. Unreadable entries are skipped and listed in the result.
pub fn dual_path_eval(
    embedder: &dyn AudioEmbedder,
    lm: &ToyLm,
    vocab: &ToyVocab,
    manifest: &DatasetManifest,
    settings: &DualPathSettings,
) -> Result<DualPathResult> {
    if !lm.is_frozen() {
        return Err(Error::Contract("evaluation needs a frozen toy decoder".into()));
    }
    settings.generation.validate(lm.vocab_size())?;
    let table = lm.table();
    let e_inst = embed_instruction(table, &settings.instruction, vocab)?;
    let outcomes = par::map_indexed(manifest.len(), |i| -> Result<std::result::Result<EntryScore, String>> {
        let entry = &manifest.entries()[i];
        let loaded = manifest.load_features(i).and_then(|f| {
            let raw = if embedder.needs_raw() {
                Some(manifest.load_raw(i)?.into_data())
            } else {
                None
            };
            Ok((f.into_data(), raw))
        });
        let (features, raw) = match loaded {
            Ok(x) => x,
            Err(e) if e.is_data_error() => return Ok(Err(e.to_string())),
            Err(e) => return Err(e),
        };
        let cast = cast_tokens(&vocab.tokenize(&entry.text), settings.token_cast, table.pad_id())?;
        let input = EvalInput {
            features: &features,
            raw: raw.as_ref(),
            cast_text: &cast,
        };
        let e_audio = embedder.embed(&input)?;
        let e_text = embed_text(table, &cast)?;
        let gen = GenerationSettings {
            seed: derive_seed(settings.generation.seed, i as u64),
            ..settings.generation.clone()
        };
        let out_a = lm.generate(&inject_instruction(&e_inst, &e_audio)?, &gen)?;
        let out_l = lm.generate(&inject_instruction(&e_inst, &e_text)?, &gen)?;
        Ok(Ok(EntryScore {
            index: i,
            features: entry.features.clone(),
            rouge1: rouge1(out_l.ids(), out_a.ids()),
            rouge_l: rouge_l_beta(out_l.ids(), out_a.ids(), settings.rouge_l_beta),
            audio_output: out_a.ids().to_vec(),
            text_output: out_l.ids().to_vec(),
        }))
    });
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            Ok(s) => entries.push(s),
            Err(reason) => {
                log::warn!("skipping manifest entry {i}: {reason}");
                skipped.push(SkippedEntry { index: i, reason });
            }
        }
    }
    Ok(DualPathResult::from_entries(entries, skipped))
}
