//! Post-norm transformer block shared by the projector encoder and the toy
//! decoder: `x = LN(x + MHA(x)); x = LN(x + FFN(x))`.

use rand::Rng;

use crate::error::Result;
use crate::params::{xavier_uniform, ParamSet};
use crate::tensor::{Element, Graph, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// FFN inner width as a multiple of the model width.
pub const FFN_MULT: usize = 4;

/// Number of tensors per block, in [`BLOCK_PARAM_NAMES`] order.
pub const BLOCK_PARAMS: usize = 16;

pub const BLOCK_PARAM_NAMES: [&str; BLOCK_PARAMS] = [
    "attn.q.weight",
    "attn.q.bias",
    "attn.k.weight",
    "attn.k.bias",
    "attn.v.weight",
    "attn.v.bias",
    "attn.o.weight",
    "attn.o.bias",
    "norm1.gain",
    "norm1.bias",
    "ffn.fc1.weight",
    "ffn.fc1.bias",
    "ffn.fc2.weight",
    "ffn.fc2.bias",
    "norm2.gain",
    "norm2.bias",
];

/// Scalar count of one block of width `hidden`.
pub fn block_param_count(hidden: usize) -> usize {
    let ffn = FFN_MULT * hidden;
    4 * (hidden * hidden + hidden) + 2 * hidden + (hidden * ffn + ffn) + (ffn * hidden + hidden) + 2 * hidden
}

pub fn init_block<F: Element>(set: &mut ParamSet<F>, prefix: &str, hidden: usize, rng: &mut impl Rng) {
    let ffn = FFN_MULT * hidden;
    for (i, name) in BLOCK_PARAM_NAMES.iter().enumerate() {
        let t = match i {
            0 | 2 | 4 | 6 => xavier_uniform(rng, hidden, hidden),
            8 | 14 => Tensor::full(vec![hidden], F::one()),
            10 => xavier_uniform(rng, hidden, ffn),
            11 => Tensor::zeros(vec![ffn]),
            12 => xavier_uniform(rng, ffn, hidden),
            _ => Tensor::zeros(vec![hidden]),
        };
        set.push(format!("{prefix}.{name}"), t);
    }
}

/// Multi-head self-attention over `x: [1, L, H]`, no positional terms.
pub fn self_attention<F: Element>(
    g: &mut Graph<F>,
    w: &[Var],
    x: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let &[b, len, hidden] = g.shape(x) else {
        return Err(crate::Error::Shape(format!(
            "attention expects [B, L, H], got {:?}",
            g.shape(x)
        )));
    };
    let dh = hidden / heads;
    let split = [b, len, heads, dh];

    let q = g.linear(x, w[0], w[1])?;
    let q = g.reshape(q, &split)?;
    let q = g.permute(q, &[0, 2, 1, 3])?; // [B, M, L, dh]

    let k = g.linear(x, w[2], w[3])?;
    let k = g.reshape(k, &split)?;
    let kt = g.permute(k, &[0, 2, 3, 1])?; // [B, M, dh, L]

    let v = g.linear(x, w[4], w[5])?;
    let v = g.reshape(v, &split)?;
    let v = g.permute(v, &[0, 2, 1, 3])?;

    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, F::of(1.0 / (dh as f64).sqrt()));
    let attn = if causal {
        g.softmax_causal(scores)?
    } else {
        g.softmax(scores)?
    };
    let ctx = g.matmul(attn, v)?; // [B, M, L, dh]
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, len, hidden])?;
    g.linear(ctx, w[6], w[7])
}

pub fn block_forward<F: Element>(
    g: &mut Graph<F>,
    w: &[Var],
    x: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    debug_assert_eq!(w.len(), BLOCK_PARAMS);
    let eps = F::of(LN_EPS);
    let attn = self_attention(g, &w[..8], x, heads, causal)?;
    let x = g.add(x, attn)?;
    let x = g.layer_norm(x, w[8], w[9], eps)?;
    let h = g.linear(x, w[10], w[11])?;
    let h = g.gelu(h);
    let h = g.linear(h, w[12], w[13])?;
    let x = g.add(x, h)?;
    g.layer_norm(x, w[14], w[15], eps)
}
