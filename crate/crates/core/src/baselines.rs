//! The three conventional alignment strategies, at toy scale, next to
//! embedding-level training:
//!
//! - `A1`: projector trained through the frozen decoder's next-token loss.
//! - `A2`: projector and decoder trained jointly on the same loss.
//! - `A3`: only a feature encoder in front of a frozen projector is trained.
//! - `tiny_align`: projector trained against the embedding table directly.
//!
//! All four share [`run_epochs`], so order, budget and stopping agree.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridgeformer::{BridgeFormer, BridgeFormerConfig};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::embedlink::{
    combined_loss_graph, run_epochs, AdamW, TokenSequence, TrainConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::metrics::{convergence_time, AudioEmbedder, EvalInput, RougeScore};
use crate::params::{xavier_uniform, ParamSet};
use crate::tensor::{Graph, Tensor, Var};
use crate::toylm::ToyLm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    A1,
    A2,
    A3,
    TinyAlign,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::A1, Approach::A2, Approach::A3, Approach::TinyAlign];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::A1 => "a1",
            Approach::A2 => "a2",
            Approach::A3 => "a3",
            Approach::TinyAlign => "tiny_align",
        }
    }

    /// Components whose weights the approach updates.
    pub fn trainable(self) -> Vec<Component> {
        match self {
            Approach::A1 | Approach::TinyAlign => vec![Component::Projector],
            Approach::A2 => vec![Component::Projector, Component::Toylm],
            Approach::A3 => vec![Component::Encoder],
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "a1" => Ok(Approach::A1),
            "a2" => Ok(Approach::A2),
            "a3" => Ok(Approach::A3),
            "tiny_align" | "tinyalign" => Ok(Approach::TinyAlign),
            _ => Err(Error::Config(format!("unknown approach {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    Projector,
    Toylm,
}

/// Trainable affine+GELU map from raw frames `[1, N, S]` to features
/// `[1, N, D_a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    config: ToyEncoderConfig,
    params: ParamSet<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub samples_per_frame: usize,
    pub d_a: usize,
    pub seed: u64,
}

impl ToyEncoder {
    pub fn init(config: ToyEncoderConfig) -> Result<Self> {
        if config.samples_per_frame == 0 || config.d_a == 0 {
            return Err(Error::Config("toy encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        params.push("weight", xavier_uniform(&mut rng, config.samples_per_frame, config.d_a));
        params.push("bias", Tensor::zeros(vec![config.d_a]));
        Ok(ToyEncoder { config, params })
    }

    pub fn config(&self) -> &ToyEncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn forward_graph(&self, g: &mut Graph<f32>, vars: &[Var], raw: Var) -> Result<Var> {
        match *g.shape(raw) {
            [1, n, s] if n > 0 && s == self.config.samples_per_frame => {}
            ref s => {
                return Err(Error::Shape(format!(
                    "toy encoder expects [1, N, {}], got {s:?}",
                    self.config.samples_per_frame
                )))
            }
        }
        let x = g.linear(raw, vars[0], vars[1])?;
        Ok(g.gelu(x))
    }

    pub fn forward(&self, raw: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = g.constant(raw.clone());
        let y = self.forward_graph(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(ModelKind::ToyEncoder, &self.config, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::ToyEncoder)?;
        let config: ToyEncoderConfig = ckpt.config_as()?;
        let template = Self::init(config)?;
        template.params.check_layout(&ckpt.params)?;
        Ok(ToyEncoder {
            params: ckpt.params,
            ..template
        })
    }
}

/// Two affine layers with a GELU between, applied per frame, then mean
/// pooled to the casted token size.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2Projector {
    config: BridgeFormerConfig,
    params: ParamSet<f32>,
}

impl Mlp2Projector {
    /// Uses `d_a`, `hidden`, `token_cast`, `d_l` and `seed` of `config`.
    pub fn init(config: BridgeFormerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        params.push("fc1.weight", xavier_uniform(&mut rng, config.d_a, config.hidden));
        params.push("fc1.bias", Tensor::zeros(vec![config.hidden]));
        params.push("fc2.weight", xavier_uniform(&mut rng, config.hidden, config.d_l));
        params.push("fc2.bias", Tensor::zeros(vec![config.d_l]));
        Ok(Mlp2Projector { config, params })
    }

    fn forward_graph(&self, g: &mut Graph<f32>, vars: &[Var], input: Var) -> Result<Var> {
        let h = g.linear(input, vars[0], vars[1])?;
        let h = g.gelu(h);
        let h = g.adaptive_pool(h, self.config.token_cast)?;
        g.linear(h, vars[2], vars[3])
    }
}

/// The module that maps features to `[1, T, D_l]` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub enum Projector {
    BridgeFormer(BridgeFormer<f32>),
    Mlp2(Mlp2Projector),
}

impl Projector {
    pub fn params(&self) -> &ParamSet<f32> {
        match self {
            Projector::BridgeFormer(m) => m.params(),
            Projector::Mlp2(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        match self {
            Projector::BridgeFormer(m) => m.params_mut(),
            Projector::Mlp2(m) => &mut m.params,
        }
    }

    pub fn config(&self) -> &BridgeFormerConfig {
        match self {
            Projector::BridgeFormer(m) => m.config(),
            Projector::Mlp2(m) => &m.config,
        }
    }

    pub fn forward_graph(&self, g: &mut Graph<f32>, vars: &[Var], input: Var) -> Result<Var> {
        match self {
            Projector::BridgeFormer(m) => Ok(m.forward_graph(g, vars, input)?.e_out),
            Projector::Mlp2(m) => {
                match *g.shape(input) {
                    [1, n, d] if n > 0 && d == m.config.d_a => {}
                    ref s => return Err(Error::Shape(format!("expected features [1, N, {}], got {s:?}", m.config.d_a))),
                }
                m.forward_graph(g, vars, input)
            }
        }
    }

    pub fn forward(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let vars = self.params().bind(&mut g, false);
        let x = g.constant(features.clone());
        let y = self.forward_graph(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Projector::BridgeFormer(m) => Checkpoint::from_bridgeformer(m),
            Projector::Mlp2(m) => Checkpoint::new(ModelKind::Mlp2Projector, &m.config, m.params.clone()),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        match ckpt.kind {
            ModelKind::Mlp2Projector => {
                let config: BridgeFormerConfig = ckpt.config_as()?;
                let template = Mlp2Projector::init(config)?;
                template.params.check_layout(&ckpt.params)?;
                Ok(Projector::Mlp2(Mlp2Projector {
                    params: ckpt.params,
                    ..template
                }))
            }
            _ => Ok(Projector::BridgeFormer(ckpt.into_bridgeformer()?)),
        }
    }
}

impl AudioEmbedder for Projector {
    fn embed(&self, input: &EvalInput<'_>) -> Result<Tensor<f32>> {
        self.forward(input.features)
    }
}

/// Encoder followed by projector, fed from the raw signal.
pub struct EncodedProjector<'a> {
    pub encoder: &'a ToyEncoder,
    pub projector: &'a Projector,
}

impl AudioEmbedder for EncodedProjector<'_> {
    fn embed(&self, input: &EvalInput<'_>) -> Result<Tensor<f32>> {
        let raw = input
            .raw
            .ok_or_else(|| Error::Input("encoder path needs the raw signal".into()))?;
        self.projector.forward(&self.encoder.forward(raw)?)
    }

    fn needs_raw(&self) -> bool {
        true
    }
}

/// One training example as every approach sees it.
#[derive(Clone, Debug)]
pub struct BaselineItem {
    pub features: Tensor<f32>,
    /// Pre-feature signal; required by `A3`.
    pub raw: Option<Tensor<f32>>,
    /// Transcript ids after casting.
    pub cast: TokenSequence,
    /// Table rows of `cast`.
    pub target: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub encoder: Option<String>,
    pub projector: String,
    pub toylm: String,
}

impl Fingerprints {
    pub fn take(encoder: Option<&ToyEncoder>, projector: &Projector, lm: &ToyLm) -> Self {
        Fingerprints {
            encoder: encoder.map(|e| e.params().fingerprint()),
            projector: projector.params().fingerprint(),
            toylm: lm.fingerprint(),
        }
    }

    /// Components whose hash differs between `self` and `after`.
    pub fn changed(&self, after: &Fingerprints) -> Vec<Component> {
        let mut out = Vec::new();
        if self.encoder != after.encoder {
            out.push(Component::Encoder);
        }
        if self.projector != after.projector {
            out.push(Component::Projector);
        }
        if self.toylm != after.toylm {
            out.push(Component::Toylm);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub approach: Approach,
    pub report: TrainReport,
    pub trainable_param_sets: Vec<Component>,
    pub before: Fingerprints,
    pub after: Fingerprints,
    /// Identifies the training data; compared across runs.
    pub dataset_id: String,
    pub config: TrainConfig,
    /// Filled in by the harness after evaluation.
    #[serde(default)]
    pub rouge1: Option<RougeScore>,
    #[serde(default)]
    pub rouge_l: Option<RougeScore>,
}

impl BaselineRun {
    /// Exactly the declared components changed.
    pub fn freeze_check(&self) -> Result<()> {
        let changed = self.before.changed(&self.after);
        if changed != self.trainable_param_sets {
            return Err(Error::Contract(format!(
                "{}: declared trainable {:?} but {:?} changed",
                self.approach, self.trainable_param_sets, changed
            )));
        }
        Ok(())
    }
}

/// Teacher-forced decoder loss for one item, prefix from `prefix_of`.
fn decoder_step(
    lm: &ToyLm,
    lm_trainable: bool,
    item: &BaselineItem,
    prefix_of: impl FnOnce(&mut Graph<f32>) -> Result<Var>,
) -> Result<(f64, Graph<f32>, Var, Vec<Var>)> {
    let mut g = Graph::new();
    let lm_vars = lm.bind(&mut g, lm_trainable);
    let head = lm.bind_head(&mut g)?;
    let prefix = prefix_of(&mut g)?;
    let loss = lm.teacher_forced_loss(&mut g, &lm_vars, head, prefix, &item.cast)?;
    let value = g.value(loss).item()? as f64;
    Ok((value, g, loss, lm_vars))
}

fn run_record(
    approach: Approach,
    report: TrainReport,
    before: Fingerprints,
    after: Fingerprints,
    dataset_id: &str,
    cfg: &TrainConfig,
) -> BaselineRun {
    BaselineRun {
        approach,
        report,
        trainable_param_sets: approach.trainable(),
        before,
        after,
        dataset_id: dataset_id.to_string(),
        config: cfg.clone(),
        rouge1: None,
        rouge_l: None,
    }
}

fn require_frozen(lm: &ToyLm) -> Result<()> {
    if lm.is_frozen() {
        Ok(())
    } else {
        Err(Error::Contract("this approach needs a frozen toy decoder".into()))
    }
}

/// `A1`: train the projector through the frozen decoder.
pub fn train_a1(
    projector: &mut Projector,
    lm: &ToyLm,
    items: &[BaselineItem],
    dataset_id: &str,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    require_frozen(lm)?;
    let before = Fingerprints::take(None, projector, lm);
    let mut opt = AdamW::new(projector.params(), cfg.optimizer);
    let report = run_epochs(items.len(), cfg, |i, lr| {
        let item = &items[i];
        let (loss, grads) = {
            let mut pvars = Vec::new();
            let (loss, mut g, l, _) = decoder_step(lm, false, item, |g| {
                pvars = projector.params().bind(g, true);
                let x = g.constant(item.features.clone());
                projector.forward_graph(g, &pvars, x)
            })?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            (loss, g.backward(l)?.collect(&pvars)?)
        };
        opt.step(projector.params_mut(), &grads, lr)?;
        Ok(loss)
    })?;
    let after = Fingerprints::take(None, projector, lm);
    Ok(run_record(Approach::A1, report, before, after, dataset_id, cfg))
}

/// `A2`: projector and decoder trained together. The tied embedding table
/// stays fixed; it is the shared vocabulary of every approach.
pub fn train_a2(
    projector: &mut Projector,
    lm: &mut ToyLm,
    items: &[BaselineItem],
    dataset_id: &str,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    let before = Fingerprints::take(None, projector, lm);
    let was_frozen = lm.is_frozen();
    lm.set_frozen(false);
    let mut p_opt = AdamW::new(projector.params(), cfg.optimizer);
    let mut l_opt = AdamW::new(lm.decoder(), cfg.optimizer);
    let report = run_epochs(items.len(), cfg, |i, lr| {
        let item = &items[i];
        let (loss, p_grads, l_grads) = {
            let mut pvars = Vec::new();
            let (loss, mut g, l, lvars) = decoder_step(lm, true, item, |g| {
                pvars = projector.params().bind(g, true);
                let x = g.constant(item.features.clone());
                projector.forward_graph(g, &pvars, x)
            })?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            let grads = g.backward(l)?;
            (loss, grads.collect(&pvars)?, grads.collect(&lvars)?)
        };
        p_opt.step(projector.params_mut(), &p_grads, lr)?;
        l_opt.step(lm.decoder_mut()?, &l_grads, lr)?;
        Ok(loss)
    });
    lm.set_frozen(was_frozen);
    let report = report?;
    let after = Fingerprints::take(None, projector, lm);
    Ok(run_record(Approach::A2, report, before, after, dataset_id, cfg))
}

/// `A3`: only the encoder in front of the frozen projector learns.
pub fn train_a3(
    encoder: &mut ToyEncoder,
    projector: &Projector,
    lm: &ToyLm,
    items: &[BaselineItem],
    dataset_id: &str,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    require_frozen(lm)?;
    if let Some(i) = items.iter().position(|it| it.raw.is_none()) {
        return Err(Error::Input(format!("item {i} has no raw signal for the encoder")));
    }
    let before = Fingerprints::take(Some(encoder), projector, lm);
    let mut opt = AdamW::new(encoder.params(), cfg.optimizer);
    let report = run_epochs(items.len(), cfg, |i, lr| {
        let item = &items[i];
        let (loss, grads) = {
            let mut evars = Vec::new();
            let (loss, mut g, l, _) = decoder_step(lm, false, item, |g| {
                evars = encoder.params().bind(g, true);
                let pvars = projector.params().bind(g, false);
                let raw = g.constant(item.raw.clone().expect("checked above"));
                let feats = encoder.forward_graph(g, &evars, raw)?;
                projector.forward_graph(g, &pvars, feats)
            })?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            (loss, g.backward(l)?.collect(&evars)?)
        };
        opt.step(encoder.params_mut(), &grads, lr)?;
        Ok(loss)
    })?;
    let after = Fingerprints::take(Some(encoder), projector, lm);
    Ok(run_record(Approach::A3, report, before, after, dataset_id, cfg))
}

/// Embedding-level training of the projector, recorded like the others.
pub fn train_tiny_align(
    projector: &mut Projector,
    lm: &ToyLm,
    items: &[BaselineItem],
    dataset_id: &str,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    let before = Fingerprints::take(None, projector, lm);
    let mut opt = AdamW::new(projector.params(), cfg.optimizer);
    let report = run_epochs(items.len(), cfg, |i, lr| {
        let item = &items[i];
        let (loss, grads) = {
            let mut g = Graph::new();
            let vars = projector.params().bind(&mut g, true);
            let x = g.constant(item.features.clone());
            let target = g.constant(item.target.clone());
            let out = projector.forward_graph(&mut g, &vars, x)?;
            let l = combined_loss_graph(&mut g, out, target, cfg.weights)?;
            let loss = g.value(l).item()? as f64;
            if !loss.is_finite() {
                return Ok(loss);
            }
            (loss, g.backward(l)?.collect(&vars)?)
        };
        opt.step(projector.params_mut(), &grads, lr)?;
        Ok(loss)
    })?;
    let after = Fingerprints::take(None, projector, lm);
    Ok(run_record(Approach::TinyAlign, report, before, after, dataset_id, cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub approach: Approach,
    pub epochs_to_target: Option<usize>,
    pub seconds_to_target: Option<f64>,
    pub final_loss: Option<f64>,
    pub epochs_run: usize,
    pub rouge1_f1: Option<f64>,
    pub rouge_l_f1: Option<f64>,
}

impl ComparisonRow {
    pub fn converged(&self) -> bool {
        self.epochs_to_target.is_some()
    }

    /// Time to target, or the marker for runs that never got there.
    pub fn time_label(&self) -> String {
        match self.seconds_to_target {
            Some(s) => format!("{s:.3}"),
            None => "did not converge".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub target_loss: f64,
    /// Fastest to target first; runs that never reached it go last.
    pub rows: Vec<ComparisonRow>,
}

/// Tabulate runs made under one protocol.
pub fn compare_runs(runs: &[BaselineRun], target_loss: f64) -> Result<ComparisonTable> {
    let Some(first) = runs.first() else {
        return Ok(ComparisonTable {
            target_loss,
            rows: Vec::new(),
        });
    };
    for r in runs {
        if r.dataset_id != first.dataset_id {
            return Err(Error::Protocol(format!(
                "{} ran on dataset {} but {} on {}",
                r.approach, r.dataset_id, first.approach, first.dataset_id
            )));
        }
        let (a, b) = (&r.config, &first.config);
        if a.seed != b.seed || a.max_epochs != b.max_epochs || a.lr0 != b.lr0 || a.optimizer != b.optimizer {
            return Err(Error::Protocol(format!(
                "{} and {} differ in seed, epoch limit or optimizer settings",
                r.approach, first.approach
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|r| {
            let ct = convergence_time(&r.report, target_loss);
            ComparisonRow {
                approach: r.approach,
                epochs_to_target: ct.map(|c| c.0),
                seconds_to_target: ct.map(|c| c.1),
                final_loss: r.report.final_loss(),
                epochs_run: r.report.epochs_run,
                rouge1_f1: r.rouge1.map(|s| s.f1),
                rouge_l_f1: r.rouge_l.map(|s| s.f1),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &ComparisonRow| r.seconds_to_target.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.approach.cmp(&b.approach))
    });
    Ok(ComparisonTable { target_loss, rows })
}

impl ComparisonTable {
    /// Timing-free CSV in fixed approach order, for byte-stable output.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.approach);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "approach",
            "converged",
            "epochs_to_target",
            "epochs_run",
            "final_loss",
            "rouge1_f1",
            "rougeL_f1",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &rows {
            w.write_record([
                r.approach.to_string(),
                r.converged().to_string(),
                r.epochs_to_target.map(|e| e.to_string()).unwrap_or_default(),
                r.epochs_run.to_string(),
                opt(r.final_loss),
                opt(r.rouge1_f1),
                opt(r.rouge_l_f1),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned text table, with wall-clock times.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:>18} {:>8} {:>10} {:>8} {:>8}\n",
            "approach", "C-T seconds", "epochs", "final", "R-1", "R-L"
        );
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>18} {:>8} {:>10} {:>8} {:>8}\n",
                r.approach.as_str(),
                r.time_label(),
                r.epochs_to_target.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                f(r.final_loss),
                f(r.rouge1_f1),
                f(r.rouge_l_f1)
            ));
        }
        out
    }
}
