//! A small causal decoder over the toy vocabulary, used frozen for
//! evaluation and as the language model inside the baselines.
//!
//! The model reads embedding rows directly, so projector output and
//! looked-up text embeddings enter through the same door. The output head
//! is the transposed embedding table.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::datakit::ToyVocab;
use crate::embedlink::{embed_text, EmbeddingTable, TokenSequence};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{kernels, Graph, Tensor, Var};
use crate::transformer::{self, BLOCK_PARAMS};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLmConfig {
    pub heads: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            heads: 4,
            layers: 2,
            seed: 7,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    #[serde(flatten)]
    config: ToyLmConfig,
    pad_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLm {
    config: ToyLmConfig,
    table: EmbeddingTable,
    decoder: ParamSet<f32>,
    frozen: bool,
}

impl ToyLm {
    /// Seeded decoder over `table`; starts frozen.
    pub fn init(table: EmbeddingTable, config: ToyLmConfig) -> Result<Self> {
        let d = table.d_l();
        if config.heads == 0 || d % config.heads != 0 {
            return Err(Error::Config(format!(
                "toy decoder width {d} is not divisible by {} heads",
                config.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut decoder = ParamSet::new();
        for layer in 0..config.layers {
            transformer::init_block(&mut decoder, &format!("layers.{layer}"), d, &mut rng);
        }
        Ok(ToyLm {
            config,
            table,
            decoder,
            frozen: true,
        })
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn decoder(&self) -> &ParamSet<f32> {
        &self.decoder
    }

    pub fn d_l(&self) -> usize {
        self.table.d_l()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Mutable decoder weights; refused while frozen.
    pub fn decoder_mut(&mut self) -> Result<&mut ParamSet<f32>> {
        if self.frozen {
            return Err(Error::Contract("toy decoder is frozen".into()));
        }
        Ok(&mut self.decoder)
    }

    /// Hash over decoder weights and the tied table.
    pub fn fingerprint(&self) -> String {
        let mut all = self.decoder.clone();
        all.push("embedding.weight", self.table.weights().clone());
        all.fingerprint()
    }

    pub fn bind(&self, g: &mut Graph<f32>, trainable: bool) -> Vec<Var> {
        self.decoder.bind(g, trainable)
    }

    /// `[D_l, V]` constant for the tied output head.
    pub fn bind_head(&self, g: &mut Graph<f32>) -> Result<Var> {
        let t = kernels::permute(self.table.weights(), &[1, 0])?;
        Ok(g.constant(t))
    }

    /// Logits `[1, L, V]` for an embedded input `[1, L, D_l]`.
    pub fn forward_graph(&self, g: &mut Graph<f32>, vars: &[Var], head: Var, input: Var) -> Result<Var> {
        match *g.shape(input) {
            [1, l, d] if l > 0 && d == self.d_l() => {}
            ref s => {
                return Err(Error::Shape(format!(
                    "toy decoder expects [1, L>0, {}], got {s:?}",
                    self.d_l()
                )))
            }
        }
        let mut x = input;
        for layer in 0..self.config.layers {
            let off = layer * BLOCK_PARAMS;
            x = transformer::block_forward(g, &vars[off..off + BLOCK_PARAMS], x, self.config.heads, true)?;
        }
        g.matmul(x, head)
    }

    pub fn logits(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let head = self.bind_head(&mut g)?;
        let x = g.constant(input.clone());
        let out = self.forward_graph(&mut g, &vars, head, x)?;
        Ok(g.value(out).clone())
    }

    pub fn logits_for_ids(&self, ids: &TokenSequence) -> Result<Tensor<f32>> {
        self.logits(&embed_text(&self.table, ids)?)
    }

    /// Teacher-forced next-token cross-entropy of `targets` after `prefix`.
    ///
    /// The decoder sees `[prefix; embed(targets[..T-1])]`; the logits at
    /// positions `P-1 .. P+T-2` are scored against `targets`.
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph<f32>,
        vars: &[Var],
        head: Var,
        prefix: Var,
        targets: &TokenSequence,
    ) -> Result<Var> {
        let p = g.shape(prefix)[1];
        let t = targets.len();
        if p == 0 || t == 0 {
            return Err(Error::Input("teacher forcing needs a non-empty prefix and target".into()));
        }
        let input = if t > 1 {
            let shifted = TokenSequence::new(targets.ids()[..t - 1].to_vec());
            let text = g.constant(embed_text(&self.table, &shifted)?);
            g.concat(prefix, text, 1)?
        } else {
            prefix
        };
        let logits = self.forward_graph(g, vars, head, input)?;
        let scored = g.narrow(logits, 1, p - 1, t)?;
        let ids: Vec<usize> = targets.ids().iter().map(|&i| i as usize).collect();
        g.cross_entropy(scored, &ids)
    }

    /// Autoregressive decoding from an embedding prefix.
    pub fn generate(&self, prefix: &Tensor<f32>, settings: &GenerationSettings) -> Result<TokenSequence> {
        settings.validate(self.vocab_size())?;
        let mut out = Vec::with_capacity(settings.max_len);
        if settings.max_len == 0 {
            return Ok(TokenSequence::new(out));
        }
        let d = self.d_l();
        let v = self.vocab_size();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut seq = prefix.clone();
        for _ in 0..settings.max_len {
            let logits = self.logits(&seq)?;
            let l = logits.shape()[1];
            let last = &logits.data()[(l - 1) * v..l * v];
            let id = settings.pick(last, &mut rng);
            out.push(id);
            let row = Tensor::new(vec![1, 1, d], self.table.row(id)?.to_vec())?;
            seq = kernels::concat(&seq, &row, 1)?;
        }
        Ok(TokenSequence::new(out))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut params = self.decoder.clone();
        params.push("embedding.weight", self.table.weights().clone());
        let stored = StoredConfig {
            config: self.config.clone(),
            pad_id: self.table.pad_id(),
        };
        Checkpoint::new(ModelKind::Toylm, &stored, params)
    }

    /// Restored models come back frozen.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Toylm)?;
        let stored: StoredConfig = ckpt.config_as()?;
        let mut decoder: ParamSet<f32> = ParamSet::new();
        let mut weight = None;
        for p in ckpt.params.iter() {
            if p.name == "embedding.weight" {
                weight = Some(p.value.clone());
            } else {
                decoder.push(p.name.clone(), p.value.clone());
            }
        }
        let weight = weight.ok_or_else(|| Error::Input("toy decoder checkpoint has no embedding.weight".into()))?;
        let table = EmbeddingTable::new(weight, stored.pad_id)?;
        let template = Self::init(table, stored.config)?;
        template.decoder.check_layout(&decoder)?;
        Ok(ToyLm { decoder, ..template })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    /// 0 means greedy argmax.
    pub temperature: f64,
    pub top_k: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            max_len: 30,
            seed: 0,
        }
    }
}

impl GenerationSettings {
    pub fn greedy(max_len: usize) -> Self {
        GenerationSettings {
            temperature: 0.0,
            top_k: 1,
            max_len,
            seed: 0,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::Config(format!(
                "top_k must be in 1..={vocab_size}, got {}",
                self.top_k
            )));
        }
        Ok(())
    }

    /// Next id from one row of logits.
    fn pick(&self, logits: &[f32], rng: &mut impl Rng) -> u32 {
        if self.temperature == 0.0 || self.top_k == 1 {
            return argmax(logits);
        }
        let mut order: Vec<usize> = (0..logits.len()).collect();
        // descending logit, ascending id among equals
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        order.truncate(self.top_k);
        let top = logits[order[0]] as f64;
        let weights: Vec<f64> = order
            .iter()
            .map(|&i| ((logits[i] as f64 - top) / self.temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (&i, w) in order.iter().zip(&weights) {
            if u < *w {
                return i as u32;
            }
            u -= w;
        }
        order[order.len() - 1] as u32
    }
}

/// Largest entry, ties to the smallest index.
fn argmax(xs: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Instruction rows first, then the audio rows.
pub fn inject_instruction(e_inst: &Tensor<f32>, e_audio: &Tensor<f32>) -> Result<Tensor<f32>> {
    match (e_inst.shape(), e_audio.shape()) {
        ([1, _, a], [1, _, b]) if a == b => kernels::concat(e_inst, e_audio, 1),
        (a, b) => Err(Error::Shape(format!(
            "cannot inject instruction {a:?} before audio {b:?}"
        ))),
    }
}

/// Tokenize and look up, keeping the natural length (no casting).
pub fn embed_instruction(table: &EmbeddingTable, text: &str, vocab: &ToyVocab) -> Result<Tensor<f32>> {
    embed_text(table, &vocab.tokenize(text))
}

/// Per-row nearest table entry by Euclidean distance, ties to the smallest id.
pub fn nearest_token_decode(e: &Tensor<f32>, table: &EmbeddingTable) -> Result<TokenSequence> {
    let d = table.d_l();
    if e.rank() != 3 || e.shape()[0] != 1 || e.shape()[2] != d {
        return Err(Error::Shape(format!("expected [1, L, {d}], got {:?}", e.shape())));
    }
    let w = table.weights().data();
    let ids = e
        .data()
        .chunks(d)
        .map(|row| {
            let mut best = (f64::INFINITY, 0u32);
            for (id, t) in w.chunks(d).enumerate() {
                let dist: f64 = row.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, id as u32);
                }
            }
            best.1
        })
        .collect();
    Ok(TokenSequence::new(ids))
}
