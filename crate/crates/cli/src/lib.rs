//! Command-line harness: `synth`, `train`, `baseline`, `eval`, `infer`,
//! `scale` and `report`, all driven by one [`ExperimentConfig`].
//!
//! Outputs land under `<out>/<run-name>/`. `train` writes there directly;
//! every other subcommand writes to `<out>/<run-name>/<subcommand>/`, and a
//! synthesized dataset lives in `<out>/<run-name>/data/`. CSV and JSON
//! outputs never contain timings; those go to `timing.log` and `report.txt`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tinyalign::baselines::{Approach, Projector};
use tinyalign::checkpoint::Checkpoint;
use tinyalign::datakit::{read_features, RegimeKind};
use tinyalign::embedlink::cast_tokens;
use tinyalign::experiment::{
    entries_csv, init_projector, init_toylm, instruction_effect, loss_csv, prepare_corpus, run_baselines,
    scaling_csv, scaling_study, timing_csv, train_projector, Corpus, ExperimentConfig, ProjectorKind, RunOutput,
    TrainMetrics,
};
use tinyalign::metrics::{convergence_time, TextOracle, DEFAULT_TARGET_LOSS};
use tinyalign::toylm::{embed_instruction, inject_instruction};
use tinyalign::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const THREADS_ENV: &str = "TINY_ALIGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tiny-align", version, about = "Speech-feature to LM-embedding alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a synthetic dataset.
    Synth(Common),
    /// Train the projector against the embedding table.
    Train(TrainArgs),
    /// Compare the alignment approaches under one protocol.
    Baseline(BaselineArgs),
    /// Dual-path ROUGE evaluation of a trained projector.
    Eval(EvalArgs),
    /// Generate tokens for one feature file.
    Infer(InferArgs),
    /// Convergence and ROUGE-1 across nested training-set sizes.
    Scale(ScaleArgs),
    /// Summarize CSV outputs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// feature, transformer or generative
    #[arg(long)]
    regime: Option<RegimeKind>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    token_cast: Option<usize>,
    #[arg(long)]
    instruction: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
    /// Existing dataset directory instead of synthesizing one.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Train the two-layer MLP projector instead of BridgeFormer.
    #[arg(long)]
    mlp2: bool,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of a1,a2,a3,tiny_align.
    #[arg(long, value_delimiter = ',')]
    approaches: Option<Vec<Approach>>,
    #[arg(long)]
    mlp2: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Projector checkpoint; defaults to the run's `checkpoint.tabf`.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Score the text-lookup oracle instead of a projector.
    #[arg(long)]
    oracle: bool,
    /// Score a freshly initialized projector.
    #[arg(long, conflicts_with_all = ["checkpoint", "oracle"])]
    untrained: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Feature file to decode.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Debug, Args)]
struct ScaleArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    sizes: Vec<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// CSV files to summarize; defaults to every CSV under the run directory.
    #[arg(long, num_args = 1..)]
    inputs: Vec<PathBuf>,
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Usage and configuration problems map to 1, everything else to 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_ENV) else { return };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // a pool built earlier in this process stays in place
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("rayon pool already initialized");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={v:?}"),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => synth(&c),
        Command::Train(a) => train(&a),
        Command::Baseline(a) => baseline(&a),
        Command::Eval(a) => eval(&a),
        Command::Infer(a) => infer(&a),
        Command::Scale(a) => scale(&a),
        Command::Report(a) => report(&a),
    }
}

/// Config file (or defaults) with the command-line overrides applied.
fn build_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.regime {
        cfg.dataset.synth.regime.kind = k;
    }
    if let Some(n) = c.pairs {
        cfg.dataset.synth.n_pairs = n;
    }
    if let Some(a) = c.alpha {
        cfg.train.weights.alpha = a;
    }
    if let Some(b) = c.beta {
        cfg.train.weights.beta = b;
    }
    if let Some(e) = c.epsilon {
        cfg.train.epsilon = e;
    }
    if let Some(t) = c.target_loss {
        cfg.train.target_loss = Some(t);
    }
    if let Some(m) = c.max_epochs {
        cfg.train.max_epochs = m;
    }
    if let Some(t) = c.token_cast {
        cfg.model.token_cast = t;
    }
    if let Some(i) = &c.instruction {
        cfg.eval.instruction = i.clone();
    }
    if let Some(t) = c.temperature {
        cfg.eval.generation.temperature = t;
    }
    if let Some(k) = c.top_k {
        cfg.eval.generation.top_k = k;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(r) = &c.run_name {
        cfg.run_name = r.clone();
    }
    if let Some(d) = &c.data {
        cfg.dataset.dir = Some(d.clone());
    }
    cfg.sync();
    cfg.validate()?;
    Ok(cfg)
}

fn target(cfg: &ExperimentConfig) -> f64 {
    cfg.train.target_loss.unwrap_or(DEFAULT_TARGET_LOSS)
}

fn open_output(cfg: &ExperimentConfig, sub: Option<&str>) -> Result<RunOutput> {
    let dir = match sub {
        Some(s) => cfg.run_dir().join(s),
        None => cfg.run_dir(),
    };
    let mut out = RunOutput::create(dir)?;
    out.write("config.json", format!("{}\n", cfg.to_json()?))?;
    Ok(out)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn synth(c: &Common) -> Result<()> {
    let mut cfg = build_config(c)?;
    // synthesis always renders, even when a data directory is configured
    cfg.dataset.dir = None;
    let mut out = open_output(&cfg, Some("synth"))?;
    let (corpus, secs) = timed(|| prepare_corpus(&cfg))?;
    out.time("synthesis", secs);
    let m = &corpus.data.manifest;
    let shapes = (0..m.len())
        .map(|i| m.load_features(i).map(|f| f.data().shape().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let summary = json!({
        "dataset_dir": corpus.data.dir,
        "content_hash": corpus.id()?,
        "n_pairs": m.len(),
        "n_train": corpus.train.len(),
        "regime": corpus.data.spec.regime.kind,
        "feature_shapes": shapes,
        "vocab_size": corpus.data.vocab.len(),
        "d_l": corpus.data.table.d_l(),
    });
    out.json("dataset.json", &summary)?;
    out.write(
        "report.txt",
        format!(
            "synthesized {} pairs into {}\nregime {}\nseconds {secs:.3}\n",
            m.len(),
            corpus.data.dir.display(),
            corpus.data.spec.regime.kind.as_str()
        ),
    )?;
    out.finish("synth")?;
    println!("{}", corpus.data.dir.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = build_config(&a.common)?;
    if a.mlp2 {
        cfg.projector = ProjectorKind::Mlp2;
    }
    let corpus = prepare_corpus(&cfg)?;
    let mut out = open_output(&cfg, None)?;
    let outcome = train_projector(&cfg, &corpus)?;
    let report = &outcome.report;
    out.time("training", report.wall_clock_seconds);
    outcome.projector.to_checkpoint()?.write(out.path("checkpoint.tabf"))?;
    out.record("checkpoint.tabf");
    out.write("loss.csv", loss_csv(report)?)?;
    out.write("epoch_timing.log", timing_csv(report)?)?;
    let metrics = TrainMetrics::new(report, target(&cfg), outcome.projector.params().num_elements());
    out.json("metrics.json", &metrics)?;

    let mut text = String::new();
    let _ = writeln!(text, "run {}", cfg.run_name);
    let _ = writeln!(text, "epochs run {}", report.epochs_run);
    let _ = writeln!(text, "stop reason {:?}", report.stop_reason);
    if let Some(l) = report.final_loss() {
        let _ = writeln!(text, "final loss {l:.6}");
    }
    match convergence_time(report, target(&cfg)) {
        Some((e, s)) => {
            let _ = writeln!(text, "reached {:.3} at epoch {e} after {s:.3} s", target(&cfg));
        }
        None => {
            let _ = writeln!(text, "did not reach {:.3}", target(&cfg));
        }
    }
    let _ = writeln!(text, "training seconds {:.3}", report.wall_clock_seconds);
    out.write("report.txt", &text)?;
    out.finish("train")?;
    print!("{text}");
    Ok(())
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let mut cfg = build_config(&a.common)?;
    if a.mlp2 {
        cfg.projector = ProjectorKind::Mlp2;
    }
    let approaches = a.approaches.clone().unwrap_or_else(|| Approach::ALL.to_vec());
    if approaches.is_empty() {
        return Err(Error::Config("no approaches selected".into()));
    }
    let corpus = prepare_corpus(&cfg)?;
    let mut out = open_output(&cfg, Some("baseline"))?;
    let (runs, table) = run_baselines(&cfg, &corpus, &approaches)?;
    for r in &runs {
        out.time(&format!("training {}", r.approach), r.report.wall_clock_seconds);
    }
    out.write("comparison.csv", table.to_csv()?)?;
    let summary: Vec<_> = runs
        .iter()
        .map(|r| {
            json!({
                "approach": r.approach,
                "trainable": r.trainable_param_sets,
                "before": r.before,
                "after": r.after,
                "epochs_run": r.report.epochs_run,
                "loss_history": r.report.loss_history,
                "rouge1": r.rouge1,
                "rouge_l": r.rouge_l,
            })
        })
        .collect();
    out.json("metrics.json", &json!({ "dataset_id": corpus.id()?, "runs": summary }))?;
    let text = table.to_text();
    out.write("report.txt", &text)?;
    out.finish("baseline")?;
    print!("{text}");
    Ok(())
}

fn load_projector(path: &Path) -> Result<Projector> {
    Projector::from_checkpoint(Checkpoint::read(path)?)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let corpus = prepare_corpus(&cfg)?;
    let lm = init_toylm(&cfg, &corpus)?;
    let (label, projector) = if a.oracle {
        ("oracle", None)
    } else if a.untrained {
        ("untrained", Some(init_projector(&cfg, &corpus)?))
    } else {
        let path = a.checkpoint.clone().unwrap_or_else(|| cfg.run_dir().join("checkpoint.tabf"));
        ("checkpoint", Some(load_projector(&path)?))
    };
    let oracle = TextOracle { table: &corpus.data.table };
    let embedder: &dyn tinyalign::metrics::AudioEmbedder = match &projector {
        Some(p) => p,
        None => &oracle,
    };
    let mut out = open_output(&cfg, Some("eval"))?;
    let t = Instant::now();
    let effect = instruction_effect(embedder, &lm, &corpus, &cfg.eval)?;
    out.time("evaluation", t.elapsed().as_secs_f64());
    let main = &effect.with_instruction;
    out.write("eval.csv", entries_csv(main)?)?;
    out.write("eval_no_instruction.csv", entries_csv(&effect.without_instruction)?)?;
    let metrics = json!({
        "embedder": label,
        "instruction": effect.instruction,
        "with_instruction": summary(main),
        "without_instruction": summary(&effect.without_instruction),
    });
    out.json("metrics.json", &metrics)?;
    let text = format!(
        "embedder {label}\ninstruction {:?}\nwith instruction    rouge1 {:.4} rougeL {:.4}\nwithout instruction rouge1 {:.4} rougeL {:.4}\nskipped {}\n",
        effect.instruction,
        main.rouge1.f1,
        main.rouge_l.f1,
        effect.without_instruction.rouge1.f1,
        effect.without_instruction.rouge_l.f1,
        main.skipped.len(),
    );
    out.write("report.txt", &text)?;
    out.finish("eval")?;
    print!("{text}");
    Ok(())
}

fn summary(r: &tinyalign::metrics::DualPathResult) -> serde_json::Value {
    json!({
        "rouge1": r.rouge1,
        "rouge_l": r.rouge_l,
        "n_entries": r.n_entries,
        "n_scored": r.entries.len(),
        "skipped": r.skipped,
    })
}

fn infer(a: &InferArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let corpus: Corpus = prepare_corpus(&cfg)?;
    let path = a.checkpoint.clone().unwrap_or_else(|| cfg.run_dir().join("checkpoint.tabf"));
    let projector = load_projector(&path)?;
    let features = read_features(&a.features)?;
    let lm = init_toylm(&cfg, &corpus)?;
    let vocab = &corpus.data.vocab;
    let e_audio = projector.forward(features.data())?;
    let e_inst = embed_instruction(&corpus.data.table, &cfg.eval.instruction, vocab)?;
    let prefix = inject_instruction(&e_inst, &e_audio)?;
    let ids = lm.generate(&prefix, &cfg.eval.generation)?;
    let text = vocab.detokenize(ids.ids());
    // padded to the cast length so the output can be compared with casts
    let cast = cast_tokens(&ids, cfg.model.token_cast, corpus.data.table.pad_id())?;
    let mut out = open_output(&cfg, Some("infer"))?;
    out.json(
        "infer.json",
        &json!({
            "features": a.features,
            "instruction": cfg.eval.instruction,
            "ids": ids.ids(),
            "cast_ids": cast.ids(),
            "text": text,
        }),
    )?;
    out.write("report.txt", format!("{text}\n"))?;
    out.finish("infer")?;
    println!("{text}");
    Ok(())
}

fn scale(a: &ScaleArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let corpus = prepare_corpus(&cfg)?;
    let mut out = open_output(&cfg, Some("scale"))?;
    let rows = scaling_study(&cfg, &corpus, &a.sizes)?;
    out.write("scaling.csv", scaling_csv(&rows)?)?;
    let mut text = format!("{:>6} {:>14} {:>8} {:>10} {:>8}\n", "size", "C-T seconds", "epochs", "final", "R-1");
    for r in &rows {
        if let Some(s) = r.seconds_to_target {
            out.time(&format!("size {}", r.size), s);
        }
        let _ = writeln!(
            text,
            "{:>6} {:>14} {:>8} {:>10} {:>8.4}",
            r.size,
            r.seconds_to_target.map(|s| format!("{s:.3}")).unwrap_or_else(|| "did not converge".into()),
            r.epochs_to_target.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
            r.final_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
            r.rouge1_f1,
        );
    }
    out.write("report.txt", &text)?;
    out.finish("scale")?;
    print!("{text}");
    Ok(())
}

fn collect_csvs(dir: &Path, skip: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p == skip {
            continue;
        }
        if p.is_dir() {
            collect_csvs(&p, skip, acc)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            acc.push(p);
        }
    }
    Ok(())
}

/// Per-column count, mean, min and max of every numeric column.
fn summarize_csv(path: &Path, w: &mut csv::Writer<Vec<u8>>, text: &mut String, label: &str) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut rows = 0usize;
    for rec in r.records() {
        let rec = rec?;
        rows += 1;
        for (i, v) in rec.iter().enumerate() {
            if let Ok(x) = v.parse::<f64>() {
                if let Some(c) = cols.get_mut(i) {
                    c.push(x);
                }
            }
        }
    }
    let _ = writeln!(text, "{label}: {rows} rows");
    for (name, vals) in headers.iter().zip(&cols) {
        if vals.is_empty() {
            continue;
        }
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            label.to_string(),
            name.to_string(),
            n.to_string(),
            mean.to_string(),
            min.to_string(),
            max.to_string(),
        ])?;
        let _ = writeln!(text, "  {name:<18} n={n:<5} mean={mean:<12.6} min={min:<12.6} max={max:.6}");
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let run_dir = cfg.run_dir();
    let own = run_dir.join("report");
    let inputs = if a.inputs.is_empty() {
        let mut acc = Vec::new();
        if run_dir.is_dir() {
            collect_csvs(&run_dir, &own, &mut acc)?;
        }
        acc
    } else {
        a.inputs.clone()
    };
    if inputs.is_empty() {
        return Err(Error::Input(format!("no CSV files found under {}", run_dir.display())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "column", "count", "mean", "min", "max"])?;
    let mut text = String::new();
    for p in &inputs {
        let label = p.strip_prefix(&run_dir).unwrap_or(p).display().to_string();
        summarize_csv(p, &mut w, &mut text, &label)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    let mut out = open_output(&cfg, Some("report"))?;
    out.write("summary.csv", bytes)?;
    out.write("report.txt", &text)?;
    out.finish("report")?;
    print!("{text}");
    Ok(())
}
