//! Minibatch SGD with Nesterov momentum, step-decay schedule, evaluation
//! metrics and score-level fusion.

mod metrics;
mod optim;

pub use metrics::{argmax, fuse_scores, topk_accuracy, Metrics, ScoreFile};
pub use optim::{sgd_nesterov_step, OptimizerState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stack, CropMode, Dataset, Pipeline};
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::network::MstGcn;
use crate::tensor::{softmax_rows, Mode, Real, Tape, Tensor, Var};

fn default_lr0() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    24
}
fn default_epochs() -> usize {
    110
}
fn default_decay_epochs() -> Vec<usize> {
    vec![50, 70, 90]
}
fn default_decay_factor() -> f64 {
    0.1
}

/// Optimizer and schedule settings. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    /// Nesterov momentum coefficient.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    #[serde(default = "default_decay_epochs")]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Linear scaling: when set to a reference batch size `b₀`, the base rate
    /// becomes `lr0 · batch_size / b₀`. Off unless given.
    #[serde(default)]
    pub lr_reference_batch: Option<usize>,
    /// Stop once an epoch's running training top-1 reaches this fraction.
    #[serde(default)]
    pub stop_at_train_top1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: default_lr0(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            decay_epochs: default_decay_epochs(),
            decay_factor: default_decay_factor(),
            weight_decay: 0.0,
            seed: 0,
            lr_reference_batch: None,
            stop_at_train_top1: None,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            out.push(format!("lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            out.push("epochs must be positive".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            out.push(format!("decay_epochs {:?} must be strictly increasing", self.decay_epochs));
        }
        if let Some(&last) = self.decay_epochs.last() {
            if last >= self.epochs {
                out.push(format!("decay epoch {last} is not below epochs = {}", self.epochs));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            out.push(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            out.push(format!("weight_decay must be finite and non-negative, got {}", self.weight_decay));
        }
        if self.lr_reference_batch == Some(0) {
            out.push("lr_reference_batch must be positive".into());
        }
        if let Some(t) = self.stop_at_train_top1 {
            if !(0.0..=1.0).contains(&t) {
                out.push(format!("stop_at_train_top1 must lie in [0, 1], got {t}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Base rate after optional batch-size scaling.
    pub fn base_lr(&self) -> f64 {
        match self.lr_reference_batch {
            Some(b0) => self.lr0 * self.batch_size as f64 / b0 as f64,
            None => self.lr0,
        }
    }
}

/// Step-decayed learning rate for a zero-based `epoch`.
///
/// The product is rounded to 12 significant digits so that decimal settings
/// give the decimal rates one writes down (`0.1 · 0.1² = 0.001`, not
/// `0.0010000000000000002`).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Contract(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    let decays = cfg.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    let lr = cfg.base_lr() * cfg.decay_factor.powi(decays as i32);
    Ok(format!("{lr:.11e}").parse().expect("formatted float parses"))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: Metrics,
    pub eval: Option<Metrics>,
}

impl EpochLog {
    /// `epoch=.. lr=.. loss=.. top1=.. top5=..`, plus `val_*` fields when
    /// an evaluation set was scored.
    pub fn line(&self) -> String {
        let mut s = format!(
            "epoch={} lr={} loss={} top1={} top5={}",
            self.epoch, self.lr, self.train.loss, self.train.top1, self.train.top5
        );
        if let Some(e) = &self.eval {
            s.push_str(&format!(" val_loss={} val_top1={} val_top5={}", e.loss, e.top1, e.top5));
        }
        s
    }
}

/// Evaluation output: metrics plus per-sample softmax scores `[N, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub scores: Tensor<f64>,
    pub labels: Vec<usize>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub net: MstGcn<F>,
    pub config: TrainConfig,
    pub pipeline: Pipeline,
    pub optimizer: OptimizerState<F>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

impl<F: Real> TrainState<F> {
    pub fn new(net: MstGcn<F>, config: TrainConfig, pipeline: Pipeline) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&net.params);
        Ok(TrainState {
            net,
            config,
            pipeline,
            optimizer,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Runs the next epoch over `train` and, if given, scores `eval`.
    pub fn step_epoch(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<&EpochLog> {
        let lr = lr_at_epoch(&self.config, self.epoch)?;
        let metrics = train_epoch(&mut self.net, train, &self.pipeline, &self.config, &mut self.optimizer, self.epoch)?;
        let eval = match eval {
            Some(d) => Some(evaluate(&self.net, d, &self.pipeline, self.config.batch_size)?.metrics),
            None => None,
        };
        self.epoch += 1;
        self.history.push(EpochLog {
            epoch: self.epoch,
            lr,
            train: metrics,
            eval,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Trains until `epochs` or the early-stop threshold, calling `on_epoch`
    /// after each epoch.
    pub fn fit(&mut self, train: &Dataset, eval: Option<&Dataset>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<()> {
        let stop_at = self.config.stop_at_train_top1;
        while self.epoch < self.config.epochs {
            let log = self.step_epoch(train, eval)?;
            on_epoch(log);
            if stop_at.is_some_and(|t| log.train.top1 >= t) {
                break;
            }
        }
        Ok(())
    }
}

fn check_dataset<F: Real>(net: &MstGcn<F>, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Contract("dataset is empty".into()));
    }
    if data.topology != net.config.topology {
        return Err(Error::Config(format!(
            "dataset topology {} differs from network topology {}",
            data.topology, net.config.topology
        )));
    }
    for (index, s) in data.samples.iter().enumerate() {
        s.validate(index)?;
        if s.label >= net.config.num_classes {
            return Err(Error::Data {
                index,
                message: format!("label {} >= {} classes", s.label, net.config.num_classes),
            });
        }
    }
    Ok(())
}

/// Preprocesses and stacks the given samples. Random crops draw from a
/// per-sample stream, so the result does not depend on scheduling.
fn assemble<F: Real>(
    data: &Dataset,
    topo: &SkeletonTopology,
    indices: &[usize],
    pipeline: &Pipeline,
    mode: CropMode,
    seed: u64,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let prepared = indices
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).rotate_left(17));
            pipeline.apply(&data.samples[i], topo, mode, &mut rng).map(|s| (i, s))
        })
        .collect::<Result<Vec<_>>>()?;
    stack(prepared.iter().map(|(i, s)| (*i, s)))
}

/// One pass over `data` in a seeded shuffled order; returns running metrics
/// computed from the training-mode logits of each step.
pub fn train_epoch<F: Real>(
    net: &mut MstGcn<F>,
    data: &Dataset,
    pipeline: &Pipeline,
    cfg: &TrainConfig,
    state: &mut OptimizerState<F>,
    epoch: usize,
) -> Result<Metrics> {
    check_dataset(net, data)?;
    let lr = lr_at_epoch(cfg, epoch)?;
    let epoch_seed = cfg.seed ^ epoch as u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let k = net.config.num_classes;
    let topo = net.topology.clone();
    let mut all_scores = Vec::with_capacity(data.len() * k);
    let mut all_labels = Vec::with_capacity(data.len());
    for chunk in order.chunks(cfg.batch_size) {
        let (x, labels) = assemble::<F>(data, &topo, chunk, pipeline, CropMode::Random, epoch_seed.rotate_left(32))?;
        let tape = Tape::new();
        let (logits, updates) = net.forward(&tape, &Var::constant(x), Mode::Train)?;
        let loss = tape.cross_entropy(&logits, &labels)?;
        let loss_value = loss.data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Contract(format!("non-finite loss {loss_value} in epoch {epoch}")));
        }
        net.params.zero_grad();
        tape.backward(&loss, &mut net.params)?;
        sgd_nesterov_step(&mut net.params, state, lr, cfg)?;
        net.apply_updates(updates);
        all_scores.extend(softmax_rows(logits.data(), k).into_iter().map(F::as_f64));
        all_labels.extend(labels);
    }
    let scores = Tensor::new(&[all_labels.len(), k], all_scores)?;
    Metrics::from_scores(&scores, &all_labels)
}

/// Eval-mode scoring in dataset order with centered crops.
pub fn evaluate<F: Real>(net: &MstGcn<F>, data: &Dataset, pipeline: &Pipeline, batch_size: usize) -> Result<Evaluation> {
    check_dataset(net, data)?;
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be positive".into()));
    }
    let k = net.config.num_classes;
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut scores = Vec::with_capacity(data.len() * k);
    let mut labels = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size) {
        let (x, batch_labels) = assemble::<F>(data, &net.topology, chunk, pipeline, CropMode::Center, 0)?;
        let tape = Tape::inference();
        let (logits, _) = net.forward(&tape, &Var::constant(x), Mode::Eval)?;
        scores.extend(softmax_rows(logits.data(), k).into_iter().map(F::as_f64));
        labels.extend(batch_labels);
    }
    let scores = Tensor::new(&[labels.len(), k], scores)?;
    let metrics = Metrics::from_scores(&scores, &labels)?;
    Ok(Evaluation { metrics, scores, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        for (epoch, lr) in [(0, 0.1), (49, 0.1), (50, 0.01), (70, 0.001), (90, 0.0001), (109, 0.0001)] {
            assert_eq!(lr_at_epoch(&cfg, epoch).unwrap(), lr, "epoch {epoch}");
        }
        assert!(matches!(lr_at_epoch(&cfg, 110), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            decay_epochs: vec![50, 50, 200],
            epochs: 100,
            ..TrainConfig::default()
        };
        assert_eq!(bad.problems().len(), 2);
        assert!(TrainConfig::default().validate().is_ok());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 5, "decay_epochs": []}"#).unwrap();
        assert_eq!(parsed.lr0, 0.1);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.1}"#).is_err());
    }

    #[test]
    fn reference_batch_scaling() {
        let cfg = TrainConfig {
            batch_size: 48,
            lr_reference_batch: Some(24),
            ..TrainConfig::default()
        };
        assert_eq!(lr_at_epoch(&cfg, 0).unwrap(), 0.2);
    }
}
