use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{combined_loss_graph, AdamW, AdamWConfig, LossWeights};
use crate::bridgeformer::BridgeFormer;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor};

/// Which convergence test ends a run before `max_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// |mean(last window) − mean(previous window)| < epsilon.
    Stabilized,
    /// Epoch mean loss ≤ target_loss.
    TargetLoss,
    /// Whichever fires first.
    Either,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub max_epochs: usize,
    pub epsilon: f64,
    pub window: usize,
    pub target_loss: Option<f64>,
    pub stop_rule: StopRule,
    pub weights: LossWeights,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            max_epochs: 400,
            epsilon: 1e-3,
            window: 10,
            target_loss: Some(0.05),
            stop_rule: StopRule::Either,
            weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {}", self.window)));
        }
        if self.stop_rule == StopRule::TargetLoss && self.target_loss.is_none() {
            return Err(Error::Config("stop rule target_loss needs a target_loss".into()));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    Stabilized,
    EpochLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pre-update loss of each epoch.
    pub loss_history: Vec<f64>,
    /// Learning rate at the first step of each epoch.
    pub lr_history: Vec<f64>,
    /// Cumulative seconds at the end of each epoch.
    pub epoch_seconds: Vec<f64>,
    /// 1-based epoch at which a stop rule fired.
    pub converged_epoch: Option<usize>,
    pub stop_reason: StopReason,
    pub wall_clock_seconds: f64,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Linear decay from `lr0` to 0 over `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    (lr0 * (1.0 - step as f64 / total_steps as f64)).max(0.0)
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Drive `step(item, lr)` over shuffled epochs until a stop rule fires.
///
/// Shared by every training approach so they get the same budget, order
/// and stopping semantics. `step` returns the pre-update loss.
pub fn run_epochs(
    n_items: usize,
    cfg: &TrainConfig,
    mut step: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if n_items == 0 {
        return Err(Error::Input("training dataset is empty".into()));
    }
    let total_steps = cfg.max_epochs * n_items;
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut report = TrainReport {
        loss_history: Vec::new(),
        lr_history: Vec::new(),
        epoch_seconds: Vec::new(),
        converged_epoch: None,
        stop_reason: StopReason::EpochLimit,
        wall_clock_seconds: 0.0,
        epochs_run: 0,
    };
    let start = Instant::now();
    let mut global_step = 0;
    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        report.lr_history.push(lr_at(global_step, total_steps, cfg.lr0));
        let mut sum = 0.0;
        for &item in &order {
            let lr = lr_at(global_step, total_steps, cfg.lr0);
            let loss = step(item, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch: epoch + 1,
                    step: global_step,
                });
            }
            sum += loss;
            global_step += 1;
        }
        report.loss_history.push(sum / n_items as f64);
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
        report.epochs_run = epoch + 1;

        if let Some(reason) = check_stop(&report.loss_history, cfg) {
            report.converged_epoch = Some(epoch + 1);
            report.stop_reason = reason;
            break;
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn check_stop(history: &[f64], cfg: &TrainConfig) -> Option<StopReason> {
    let last = *history.last()?;
    let use_target = matches!(cfg.stop_rule, StopRule::TargetLoss | StopRule::Either);
    let use_delta = matches!(cfg.stop_rule, StopRule::Stabilized | StopRule::Either);
    if use_target {
        if let Some(target) = cfg.target_loss {
            if last <= target {
                return Some(StopReason::TargetReached);
            }
        }
    }
    let w = cfg.window;
    if use_delta && history.len() >= 2 * w {
        let n = history.len();
        let delta = window_mean(&history[n - w..]) - window_mean(&history[n - 2 * w..n - w]);
        if delta.abs() < cfg.epsilon {
            return Some(StopReason::Stabilized);
        }
    }
    None
}

/// One feature sequence with its precomputed target embeddings.
#[derive(Clone, Debug)]
pub struct AlignPair<F> {
    /// `[1, N, D_a]`
    pub features: Tensor<F>,
    /// `[1, T, D_l]`, the table rows of the cast transcript.
    pub target: Tensor<F>,
}

/// One AdamW update on the projector; returns the pre-update loss.
pub fn train_step<F: Element>(
    model: &mut BridgeFormer<F>,
    pair: &AlignPair<F>,
    weights: LossWeights,
    opt: &mut AdamW<F>,
    lr: f64,
) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, true);
        let input = g.constant(pair.features.clone());
        let target = g.constant(pair.target.clone());
        let trace = model.forward_graph(&mut g, &vars, input)?;
        let loss = combined_loss_graph(&mut g, trace.e_out, target, weights)?;
        let value = g.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: value,
                epoch: 0,
                step: opt.steps_taken() as usize,
            });
        }
        (value, g.backward(loss)?.collect(&vars)?)
    };
    opt.step(model.params_mut(), &grads, lr)?;
    Ok(loss)
}

/// Train the projector against table embeddings until a stop rule fires.
pub fn train_until_converged<F: Element>(
    model: &mut BridgeFormer<F>,
    pairs: &[AlignPair<F>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut opt = AdamW::new(model.params(), cfg.optimizer);
    run_epochs(pairs.len(), cfg, |item, lr| {
        train_step(model, &pairs[item], cfg.weights, &mut opt, lr)
    })
}

/// `epoch,mean_loss,lr[,elapsed_seconds]`, one row per epoch.
pub fn write_loss_csv(report: &TrainReport, out: impl Write, with_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch", "mean_loss", "lr"];
    if with_timing {
        header.push("elapsed_seconds");
    }
    w.write_record(&header)?;
    for (i, loss) in report.loss_history.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), loss.to_string(), report.lr_history[i].to_string()];
        if with_timing {
            row.push(format!("{:.6}", report.epoch_seconds[i]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("loss csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_points() {
        assert_eq!(lr_at(0, 1000, 1e-3), 1e-3);
        assert_eq!(lr_at(1000, 1000, 1e-3), 0.0);
        assert!((lr_at(500, 1000, 1e-3) - 5e-4).abs() < 1e-18);
        assert_eq!(lr_at(1200, 1000, 1e-3), 0.0);
    }

    #[test]
    fn zero_epoch_budget() {
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let report = run_epochs(3, &cfg, |_, _| Ok(1.0)).unwrap();
        assert!(report.loss_history.is_empty());
        assert_eq!(report.converged_epoch, None);
        assert_eq!(report.epochs_run, 0);
    }

    #[test]
    fn empty_dataset_is_an_input_error() {
        let r = run_epochs(0, &TrainConfig::default(), |_, _| Ok(1.0));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn stabilized_rule_uses_two_windows() {
        let cfg = TrainConfig {
            stop_rule: StopRule::Stabilized,
            window: 3,
            epsilon: 1e-3,
            ..TrainConfig::default()
        };
        let report = run_epochs(1, &cfg, |_, _| Ok(0.7)).unwrap();
        assert_eq!(report.converged_epoch, Some(6));
        assert_eq!(report.stop_reason, StopReason::Stabilized);
    }

    #[test]
    fn target_rule_first_crossing() {
        let cfg = TrainConfig {
            stop_rule: StopRule::TargetLoss,
            ..TrainConfig::default()
        };
        let mut calls = 0;
        let report = run_epochs(2, &cfg, |_, _| {
            calls += 1;
            Ok(1.0 / calls as f64)
        })
        .unwrap();
        // epoch means: 0.75, 0.29.., 0.18.., ... first ≤ 0.05 at epoch 10
        assert_eq!(report.stop_reason, StopReason::TargetReached);
        assert!(report.final_loss().unwrap() <= 0.05);
        assert!(report.loss_history[..report.epochs_run - 1].iter().all(|&l| l > 0.05));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let r = run_epochs(2, &TrainConfig::default(), |_, _| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = TrainConfig {
            target_loss: None,
            seed: 9,
            ..TrainConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig { lr0: 0.0, ..TrainConfig::default() },
            TrainConfig { epsilon: 0.0, ..TrainConfig::default() },
            TrainConfig { window: 1, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn loss_csv_layout() {
        let report = TrainReport {
            loss_history: vec![0.5, 0.25],
            lr_history: vec![1e-3, 5e-4],
            epoch_seconds: vec![0.1, 0.2],
            converged_epoch: None,
            stop_reason: StopReason::EpochLimit,
            wall_clock_seconds: 0.2,
            epochs_run: 2,
        };
        let mut buf = Vec::new();
        write_loss_csv(&report, &mut buf, false).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,mean_loss,lr\n1,0.5,0.001\n2,0.25,0.0005\n");
        let mut buf = Vec::new();
        write_loss_csv(&report, &mut buf, true).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("epoch,mean_loss,lr,elapsed_seconds\n1,0.5,0.001,0.100000\n"));
    }
}
