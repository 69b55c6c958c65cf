//! The transformer projector: input MLP, encoder layers without positional
//! encoding, adaptive mean pooling to the casted token size, output MLP.
//!
//! ```text
//! features [1, N, D_a]
//!   -> GELU(x·W_in + b_in)            e_in    [1, N, H]
//!   -> E post-norm encoder blocks      e_trans [1, N, H]
//!   -> adaptive mean pool over N       e_pool  [1, T, H]
//!   -> x·W_out + b_out                 e_out   [1, T, D_l]
//! ```
//!
//! Nothing in the model is indexed by absolute position; frame order only
//! enters through the pooling bins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamSet};
use crate::tensor::{Element, Graph, Tensor, Var};
use crate::transformer::{self, BLOCK_PARAMS, BLOCK_PARAM_NAMES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeFormerConfig {
    /// Input feature dimension.
    pub d_a: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Casted token size: output sequence length.
    pub token_cast: usize,
    /// Output (language-model embedding) dimension.
    pub d_l: usize,
    pub seed: u64,
}

impl Default for BridgeFormerConfig {
    fn default() -> Self {
        BridgeFormerConfig {
            d_a: 768,
            hidden: 256,
            heads: 4,
            layers: 4,
            token_cast: 30,
            d_l: 2048,
            seed: 0,
        }
    }
}

impl BridgeFormerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_a", self.d_a),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("token_cast", self.token_cast),
            ("d_l", self.d_l),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Trainable scalar count, from the layer formulas.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let (h, d_a, d_l) = (self.hidden, self.d_a, self.d_l);
        Ok(d_a * h + h + self.layers * transformer::block_param_count(h) + h * d_l + d_l)
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace<F> {
    pub e_in: Tensor<F>,
    pub e_trans: Tensor<F>,
    pub e_pool: Tensor<F>,
    pub e_out: Tensor<F>,
}

/// Graph handles for the same four activations.
#[derive(Clone, Copy, Debug)]
pub struct TraceVars {
    pub e_in: Var,
    pub e_trans: Var,
    pub e_pool: Var,
    pub e_out: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeFormer<F> {
    config: BridgeFormerConfig,
    params: ParamSet<F>,
}

impl<F: Element> BridgeFormer<F> {
    /// Seeded Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(config: BridgeFormerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, d_a, d_l) = (config.hidden, config.d_a, config.d_l);
        let mut params = ParamSet::new();
        params.push("input.weight", xavier_uniform(&mut rng, d_a, h));
        params.push("input.bias", Tensor::zeros(vec![h]));
        for layer in 0..config.layers {
            transformer::init_block(&mut params, &format!("layers.{layer}"), h, &mut rng);
        }
        params.push("output.weight", xavier_uniform(&mut rng, h, d_l));
        params.push("output.bias", Tensor::zeros(vec![d_l]));
        Ok(BridgeFormer { config, params })
    }

    /// Rebuild from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: BridgeFormerConfig, params: ParamSet<F>) -> Result<Self> {
        let template = Self::init(config.clone())?;
        template.params.check_layout(&params)?;
        Ok(BridgeFormer { config, params })
    }

    pub fn config(&self) -> &BridgeFormerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn cast<G: Element>(&self) -> BridgeFormer<G> {
        BridgeFormer {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Shape checks for a `[1, N, D_a]` input.
    pub fn check_input(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [1, n, d] if d == self.config.d_a => {
                if n == 0 {
                    Err(Error::Input("feature sequence has no frames".into()))
                } else {
                    Ok(n)
                }
            }
            _ => Err(Error::Shape(format!(
                "expected features [1, N, {}], got {:?}",
                self.config.d_a, shape
            ))),
        }
    }

    /// Record the forward pass on `g` using bound parameter `vars`.
    pub fn forward_graph(&self, g: &mut Graph<F>, vars: &[Var], input: Var) -> Result<TraceVars> {
        self.check_input(g.shape(input))?;
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} vars bound for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let x = g.linear(input, vars[0], vars[1])?;
        let e_in = g.gelu(x);
        let mut x = e_in;
        for layer in 0..self.config.layers {
            let off = 2 + layer * BLOCK_PARAMS;
            x = transformer::block_forward(g, &vars[off..off + BLOCK_PARAMS], x, self.config.heads, false)?;
        }
        let e_trans = x;
        let e_pool = g.adaptive_pool(e_trans, self.config.token_cast)?;
        let n = vars.len();
        let e_out = g.linear(e_pool, vars[n - 2], vars[n - 1])?;
        Ok(TraceVars {
            e_in,
            e_trans,
            e_pool,
            e_out,
        })
    }

    /// Inference pass: `[1, N, D_a]` features to `[1, T, D_l]` embeddings.
    pub fn forward(&self, features: &Tensor<F>) -> Result<(Tensor<F>, ActivationTrace<F>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let input = g.constant(features.clone());
        let t = self.forward_graph(&mut g, &vars, input)?;
        let trace = ActivationTrace {
            e_in: g.value(t.e_in).clone(),
            e_trans: g.value(t.e_trans).clone(),
            e_pool: g.value(t.e_pool).clone(),
            e_out: g.value(t.e_out).clone(),
        };
        Ok((trace.e_out.clone(), trace))
    }
}

/// Every parameter name the model can carry, for structural audits.
pub fn parameter_names(config: &BridgeFormerConfig) -> Vec<String> {
    let mut names = vec!["input.weight".to_string(), "input.bias".to_string()];
    for layer in 0..config.layers {
        names.extend(BLOCK_PARAM_NAMES.iter().map(|n| format!("layers.{layer}.{n}")));
    }
    names.push("output.weight".into());
    names.push("output.bias".into());
    names
}
