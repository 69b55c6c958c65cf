//! Embedding-layer supervision: the projector is trained to reproduce the
//! frozen embedding-table rows of the (cast) transcript directly, so no
//! language-model generation happens during training.

mod optim;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

pub use optim::{AdamW, AdamWConfig};
pub use train::{
    lr_at, train_step, train_until_converged, write_loss_csv, run_epochs, AlignPair, StopReason, StopRule,
    TrainConfig, TrainReport,
};

/// Frozen vocabulary-to-vector lookup; the training target source.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    weights: Tensor<f32>,
    pad_id: u32,
}

impl EmbeddingTable {
    pub fn new(weights: Tensor<f32>, pad_id: u32) -> Result<Self> {
        if weights.rank() != 2 || weights.shape().contains(&0) {
            return Err(Error::Shape(format!(
                "embedding table must be [V, D_l], got {:?}",
                weights.shape()
            )));
        }
        if pad_id as usize >= weights.shape()[0] {
            return Err(Error::Index {
                what: "vocabulary (pad id)",
                index: pad_id as usize,
                size: weights.shape()[0],
            });
        }
        Ok(EmbeddingTable { weights, pad_id })
    }

    /// Seeded Gaussian rows, each scaled to unit length.
    pub fn random_unit(vocab_size: usize, d_l: usize, pad_id: u32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(vocab_size * d_l);
        for _ in 0..vocab_size {
            let row: Vec<f64> = (0..d_l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            data.extend(row.iter().map(|x| (x / norm) as f32));
        }
        Self::new(Tensor::new(vec![vocab_size, d_l], data)?, pad_id)
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn d_l(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn weights(&self) -> &Tensor<f32> {
        &self.weights
    }

    pub fn row(&self, id: u32) -> Result<&[f32]> {
        let v = self.vocab_size();
        if id as usize >= v {
            return Err(Error::Index {
                what: "vocabulary",
                index: id as usize,
                size: v,
            });
        }
        let d = self.d_l();
        Ok(&self.weights.data()[id as usize * d..(id as usize + 1) * d])
    }

    pub fn fingerprint(&self) -> String {
        self.weights.fingerprint()
    }
}

/// Token ids plus the length they had before casting.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TokenSequence {
    ids: Vec<u32>,
    original_len: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        let original_len = ids.len();
        TokenSequence { ids, original_len }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::Index {
                what: "vocabulary",
                index: id as usize,
                size: vocab_size,
            }),
            None => Ok(()),
        }
    }
}

/// Truncate to the first `t` ids or pad the tail with `pad_id`.
pub fn cast_tokens(tokens: &TokenSequence, t: usize, pad_id: u32) -> Result<TokenSequence> {
    if t == 0 {
        return Err(Error::Input("casted token size must be at least 1".into()));
    }
    let mut ids: Vec<u32> = tokens.ids.iter().copied().take(t).collect();
    ids.resize(t, pad_id);
    Ok(TokenSequence {
        ids,
        original_len: tokens.original_len,
    })
}

/// Row lookup: `[1, L, D_l]` with row `i` equal to `table[ids[i]]`.
pub fn embed_text(table: &EmbeddingTable, tokens: &TokenSequence) -> Result<Tensor<f32>> {
    let d = table.d_l();
    let mut data = Vec::with_capacity(tokens.len() * d);
    for &id in tokens.ids() {
        data.extend_from_slice(table.row(id)?);
    }
    Tensor::new(vec![1, tokens.len(), d], data)
}

/// Weights of the squared-error and cosine terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config(format!(
                "loss weights need alpha, beta >= 0 and alpha + beta > 0 (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `alpha·MSE + beta·(1 − mean per-position cosine)` recorded on `g`.
pub fn combined_loss_graph<F: Element>(
    g: &mut Graph<F>,
    e_audio: Var,
    e_text: Var,
    w: LossWeights,
) -> Result<Var> {
    let mse = g.mse(e_audio, e_text)?;
    let cos = g.row_cosine(e_audio, e_text)?;
    let mean_cos = g.mean(cos);
    let cos_term = g.affine(mean_cos, F::of(-w.beta), F::of(w.beta));
    let mse_term = g.scale(mse, F::of(w.alpha));
    g.add(mse_term, cos_term)
}

pub fn combined_loss<F: Element>(e_audio: &Tensor<F>, e_text: &Tensor<F>, w: LossWeights) -> Result<F> {
    let mut g = Graph::new();
    let a = g.constant(e_audio.clone());
    let b = g.constant(e_text.clone());
    let loss = combined_loss_graph(&mut g, a, b, w)?;
    g.value(loss).item()
}
