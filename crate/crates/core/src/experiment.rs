//! Experiment plumbing: one serializable config, data loading, the
//! train / evaluate / compare pipelines and their on-disk outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    compare_runs, train_a1, train_a2, train_a3, train_tiny_align, Approach, BaselineItem, BaselineRun,
    ComparisonTable, EncodedProjector, Mlp2Projector, Projector, ToyEncoder, ToyEncoderConfig,
};
use crate::binio::canonical_json;
use crate::bridgeformer::{BridgeFormer, BridgeFormerConfig};
use crate::datakit::{build_synthetic_dataset, DatasetManifest, Split, SynthSpec, SyntheticDataset};
use crate::embedlink::{
    cast_tokens, embed_text, train_until_converged, write_loss_csv, AlignPair, TrainConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::metrics::{convergence_time, dual_path_eval, AudioEmbedder, DualPathResult, DualPathSettings};
use crate::toylm::{ToyLm, ToyLmConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    #[default]
    Bridgeformer,
    Mlp2,
}

/// Where the data comes from: an existing dataset directory, or a
/// synthesis spec rendered into the run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSource {
    pub dir: Option<PathBuf>,
    pub synth: SynthSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_name: String,
    /// Seeds the projector, the epoch order and sampling.
    pub seed: u64,
    pub dataset: DatasetSource,
    /// `d_a` is taken from the data when the run starts.
    pub model: BridgeFormerConfig,
    pub projector: ProjectorKind,
    pub train: TrainConfig,
    pub toylm: ToyLmConfig,
    pub eval: DualPathSettings,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        ExperimentConfig {
            run_name: "run".into(),
            seed: 0,
            model: BridgeFormerConfig {
                d_a: synth.regime.d_f,
                d_l: synth.d_l,
                token_cast: synth.slots,
                ..BridgeFormerConfig::default()
            },
            dataset: DatasetSource { dir: None, synth },
            projector: ProjectorKind::Bridgeformer,
            train: TrainConfig::default(),
            toylm: ToyLmConfig::default(),
            eval: DualPathSettings::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }

    /// One seed for the projector, the epoch order and sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync();
        self
    }

    /// Propagate the shared fields (seed, token cast, embedding width).
    pub fn sync(&mut self) {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.generation.seed = self.seed;
        self.eval.token_cast = self.model.token_cast;
        self.dataset.synth.slots = self.model.token_cast;
        self.dataset.synth.d_l = self.model.d_l;
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad run name {:?}", self.run_name)));
        }
        if self.eval.token_cast != self.model.token_cast {
            return Err(Error::Config("eval and model token casts differ".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.dataset.dir.is_none() {
            self.dataset.synth.validate()?;
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_name)
    }
}

/// A loaded dataset plus the split used for evaluation.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub data: SyntheticDataset,
    pub train: DatasetManifest,
    pub eval: DatasetManifest,
}

impl Corpus {
    /// Evaluate on the `eval` split when there is one, else on everything.
    pub fn new(data: SyntheticDataset) -> Self {
        let train = data.manifest.with_split(Split::Train);
        let eval = data.manifest.with_split(Split::Eval);
        let eval = if eval.is_empty() { data.manifest.clone() } else { eval };
        Corpus { data, train, eval }
    }

    /// Feature width shared by every entry.
    pub fn feature_dim(&self) -> Result<usize> {
        let first = self.data.manifest.load_features(0)?;
        Ok(first.d_a())
    }

    pub fn id(&self) -> Result<String> {
        self.data.manifest.content_hash()
    }
}

/// Open `cfg.dataset.dir`, or synthesize into `<run>/data`.
pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let data = match &cfg.dataset.dir {
        Some(dir) => SyntheticDataset::open(dir)?,
        None => build_synthetic_dataset(cfg.run_dir().join("data"), &cfg.dataset.synth)?,
    };
    if data.manifest.is_empty() {
        return Err(Error::Input(format!("{}: dataset has no entries", data.dir.display())));
    }
    Ok(Corpus::new(data))
}

/// Features with their table-row targets.
pub fn load_align_pairs(data: &SyntheticDataset, manifest: &DatasetManifest, token_cast: usize) -> Result<Vec<AlignPair<f32>>> {
    load_items(data, manifest, token_cast, false)?
        .into_iter()
        .map(|it| {
            Ok(AlignPair {
                features: it.features,
                target: it.target,
            })
        })
        .collect()
}

pub fn load_items(
    data: &SyntheticDataset,
    manifest: &DatasetManifest,
    token_cast: usize,
    with_raw: bool,
) -> Result<Vec<BaselineItem>> {
    (0..manifest.len())
        .map(|i| {
            let e = &manifest.entries()[i];
            let cast = cast_tokens(&data.vocab.tokenize(&e.text), token_cast, data.table.pad_id())?;
            Ok(BaselineItem {
                features: manifest.load_features(i)?.into_data(),
                raw: if with_raw {
                    Some(manifest.load_raw(i)?.into_data())
                } else {
                    None
                },
                target: embed_text(&data.table, &cast)?,
                cast,
            })
        })
        .collect()
}

fn model_config(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<BridgeFormerConfig> {
    let mut m = cfg.model.clone();
    m.d_a = corpus.feature_dim()?;
    if m.d_l != corpus.data.table.d_l() {
        return Err(Error::Config(format!(
            "model d_l {} does not match the embedding table width {}",
            m.d_l,
            corpus.data.table.d_l()
        )));
    }
    Ok(m)
}

pub fn init_projector(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Projector> {
    let m = model_config(cfg, corpus)?;
    Ok(match cfg.projector {
        ProjectorKind::Bridgeformer => Projector::BridgeFormer(BridgeFormer::init(m)?),
        ProjectorKind::Mlp2 => Projector::Mlp2(Mlp2Projector::init(m)?),
    })
}

pub fn init_toylm(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<ToyLm> {
    ToyLm::init(corpus.data.table.clone(), cfg.toylm.clone())
}

pub struct TrainOutcome {
    pub projector: Projector,
    pub report: TrainReport,
}

/// Embedding-level training on the train split.
pub fn train_projector(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let pairs = load_align_pairs(&corpus.data, &corpus.train, cfg.model.token_cast)?;
    let mut projector = init_projector(cfg, corpus)?;
    let report = match &mut projector {
        Projector::BridgeFormer(m) => train_until_converged(m, &pairs, &cfg.train)?,
        other => {
            let lm = init_toylm(cfg, corpus)?;
            let items = load_items(&corpus.data, &corpus.train, cfg.model.token_cast, false)?;
            train_tiny_align(other, &lm, &items, "", &cfg.train)?.report
        }
    };
    Ok(TrainOutcome { projector, report })
}

pub fn evaluate(
    embedder: &dyn AudioEmbedder,
    lm: &ToyLm,
    corpus: &Corpus,
    settings: &DualPathSettings,
) -> Result<DualPathResult> {
    dual_path_eval(embedder, lm, &corpus.data.vocab, &corpus.eval, settings)
}

/// Scores with and without the configured instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionEffect {
    pub instruction: String,
    pub with_instruction: DualPathResult,
    pub without_instruction: DualPathResult,
}

pub fn instruction_effect(
    embedder: &dyn AudioEmbedder,
    lm: &ToyLm,
    corpus: &Corpus,
    settings: &DualPathSettings,
) -> Result<InstructionEffect> {
    let bare = DualPathSettings {
        instruction: String::new(),
        ..settings.clone()
    };
    Ok(InstructionEffect {
        instruction: settings.instruction.clone(),
        with_instruction: evaluate(embedder, lm, corpus, settings)?,
        without_instruction: evaluate(embedder, lm, corpus, &bare)?,
    })
}

/// Run the requested approaches under one protocol, evaluate each and
/// tabulate. Every run starts from the same initial weights.
pub fn run_baselines(cfg: &ExperimentConfig, corpus: &Corpus, approaches: &[Approach]) -> Result<(Vec<BaselineRun>, ComparisonTable)> {
    let dataset_id = corpus.id()?;
    let needs_raw = approaches.contains(&Approach::A3);
    let items = load_items(&corpus.data, &corpus.train, cfg.model.token_cast, needs_raw)?;
    let projector0 = init_projector(cfg, corpus)?;
    let lm0 = init_toylm(cfg, corpus)?;
    let mut runs = Vec::new();
    for &a in approaches {
        let mut projector = projector0.clone();
        let mut lm = lm0.clone();
        let (mut run, encoder) = match a {
            Approach::A1 => (train_a1(&mut projector, &lm, &items, &dataset_id, &cfg.train)?, None),
            Approach::A2 => (train_a2(&mut projector, &mut lm, &items, &dataset_id, &cfg.train)?, None),
            Approach::TinyAlign => (train_tiny_align(&mut projector, &lm, &items, &dataset_id, &cfg.train)?, None),
            Approach::A3 => {
                let raw_width = items
                    .first()
                    .and_then(|it| it.raw.as_ref())
                    .map(|r| r.last_dim())
                    .ok_or_else(|| Error::Input("no raw signal for the encoder".into()))?;
                let mut encoder = ToyEncoder::init(ToyEncoderConfig {
                    samples_per_frame: raw_width,
                    d_a: projector.config().d_a,
                    seed: cfg.seed,
                })?;
                let run = train_a3(&mut encoder, &projector, &lm, &items, &dataset_id, &cfg.train)?;
                (run, Some(encoder))
            }
        };
        run.freeze_check()?;
        let result = match &encoder {
            Some(enc) => evaluate(
                &EncodedProjector {
                    encoder: enc,
                    projector: &projector,
                },
                &lm,
                corpus,
                &cfg.eval,
            )?,
            None => evaluate(&projector, &lm, corpus, &cfg.eval)?,
        };
        run.rouge1 = Some(result.rouge1);
        run.rouge_l = Some(result.rouge_l);
        runs.push(run);
    }
    let target = cfg.train.target_loss.unwrap_or(crate::metrics::DEFAULT_TARGET_LOSS);
    let table = compare_runs(&runs, target)?;
    Ok((runs, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub epochs_to_target: Option<usize>,
    /// Wall-clock; kept out of the CSV.
    pub seconds_to_target: Option<f64>,
    pub final_loss: Option<f64>,
    pub rouge1_f1: f64,
}

/// Train and evaluate on nested prefixes of the training split.
pub fn scaling_study(cfg: &ExperimentConfig, corpus: &Corpus, sizes: &[usize]) -> Result<Vec<ScalingRow>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("scaling sizes must be non-empty and positive".into()));
    }
    let lm = init_toylm(cfg, corpus)?;
    let target = cfg.train.target_loss.unwrap_or(crate::metrics::DEFAULT_TARGET_LOSS);
    sizes
        .iter()
        .map(|&size| {
            if size > corpus.train.len() {
                return Err(Error::Config(format!(
                    "scaling size {size} exceeds the {} training entries",
                    corpus.train.len()
                )));
            }
            let sub = Corpus {
                train: corpus.train.take(size),
                ..corpus.clone()
            };
            let out = train_projector(cfg, &sub)?;
            let ct = convergence_time(&out.report, target);
            let eval = evaluate(&out.projector, &lm, &sub, &cfg.eval)?;
            Ok(ScalingRow {
                size,
                epochs_to_target: ct.map(|c| c.0),
                seconds_to_target: ct.map(|c| c.1),
                final_loss: out.report.final_loss(),
                rouge1_f1: eval.rouge1.f1,
            })
        })
        .collect()
}

pub fn scaling_csv(rows: &[ScalingRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["size", "epochs_to_target", "final_loss", "rouge1_f1"])?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            r.epochs_to_target.map(|e| e.to_string()).unwrap_or_default(),
            r.final_loss.map(|l| l.to_string()).unwrap_or_default(),
            r.rouge1_f1.to_string(),
        ])?;
    }
    into_string(w)
}

/// Per-entry scores as CSV.
pub fn entries_csv(result: &DualPathResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "features", "rouge1_p", "rouge1_r", "rouge1_f1", "rougeL_p", "rougeL_r", "rougeL_f1"])?;
    for e in &result.entries {
        w.write_record([
            e.index.to_string(),
            e.features.clone(),
            e.rouge1.precision.to_string(),
            e.rouge1.recall.to_string(),
            e.rouge1.f1.to_string(),
            e.rouge_l.precision.to_string(),
            e.rouge_l.recall.to_string(),
            e.rouge_l.f1.to_string(),
        ])?;
    }
    into_string(w)
}

pub fn loss_csv(report: &TrainReport) -> Result<String> {
    let mut buf = Vec::new();
    write_loss_csv(report, &mut buf, false)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn timing_csv(report: &TrainReport) -> Result<String> {
    let mut buf = Vec::new();
    write_loss_csv(report, &mut buf, true)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Deterministic training summary (no timings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs_run: usize,
    pub converged_epoch: Option<usize>,
    pub stop_reason: crate::embedlink::StopReason,
    pub final_loss: Option<f64>,
    pub epochs_to_target: Option<usize>,
    pub parameter_count: usize,
}

impl TrainMetrics {
    pub fn new(report: &TrainReport, target: f64, parameter_count: usize) -> Self {
        TrainMetrics {
            epochs_run: report.epochs_run,
            converged_epoch: report.converged_epoch,
            stop_reason: report.stop_reason,
            final_loss: report.final_loss(),
            epochs_to_target: convergence_time(report, target).map(|c| c.0),
            parameter_count,
        }
    }
}

/// Collects written files for `artifacts.json`.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
    timing: Vec<String>,
}

impl RunOutput {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RunOutput {
            dir,
            files: Vec::new(),
            started: Instant::now(),
            timing: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.record(name);
        Ok(p)
    }

    /// Note a file written by other means.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = canonical_json(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// A line for `timing.log`.
    pub fn time(&mut self, what: &str, seconds: f64) {
        self.timing.push(format!("{what}\t{seconds:.6}"));
    }

    /// Write `timing.log` and `artifacts.json`.
    pub fn finish(mut self, command: &str) -> Result<Vec<String>> {
        let total = self.started.elapsed().as_secs_f64();
        self.time("total", total);
        let mut log = self.timing.join("\n");
        log.push('\n');
        self.write("timing.log", log)?;
        self.record("artifacts.json");
        let mut files = self.files.clone();
        files.sort();
        let manifest = serde_json::json!({ "command": command, "files": files });
        let mut text = canonical_json(&manifest)?;
        text.push('\n');
        let p = self.path("artifacts.json");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_roundtrip() {
        let cfg = ExperimentConfig::default().with_seed(9);
        let json = cfg.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(cfg.train.seed, 9);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let partial = ExperimentConfig::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn defaults_line_up() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.model.d_l, cfg.dataset.synth.d_l);
        assert_eq!(cfg.model.token_cast, cfg.dataset.synth.slots);
        assert_eq!(cfg.eval.token_cast, cfg.model.token_cast);
        assert_eq!((cfg.model.hidden, cfg.model.heads, cfg.model.layers), (256, 4, 4));
    }

    #[test]
    fn run_output_records_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::create(dir.path().join("r")).unwrap();
        out.write("b.csv", "x\n").unwrap();
        out.json("a.json", &serde_json::json!({"k": 1})).unwrap();
        let files = out.finish("test").unwrap();
        assert_eq!(files, vec!["a.json", "artifacts.json", "b.csv", "timing.log"]);
        let art = std::fs::read_to_string(dir.path().join("r/artifacts.json")).unwrap();
        assert!(art.contains("\"command\":\"test\""));
    }
}
