//! Adam, the mini-batch loop, evaluation and per-epoch metrics.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backprop::DecodeMode;
use crate::datasets::{SequenceBatch, TaskData};
use crate::error::{Error, Result};
use crate::network::{Network, SampleOutcome, Topology};
use crate::numerics::SeededRng;
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params<P: Parameters>(params: &P, lr: f64) -> Self {
        Self::new(params.num_params(), lr)
    }

    /// One bias-corrected Adam update of `params` from `grads`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let n = params.num_params();
        if grads.num_params() != n || self.m.len() != n {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters", self.m.len()),
                format!("{n} parameters, {} gradients", grads.num_params()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for (p_tensor, g_tensor) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (p, &g) in p_tensor.iter_mut().zip(g_tensor.data) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<P: Parameters>(adam: &mut AdamState, params: &mut P, grads: &P) -> Result<()> {
    adam.step(params, grads)
}

fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    120
}
fn default_batch() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub decode: DecodeMode,
    /// Gate threshold applied when evaluating the test split.
    #[serde(default)]
    pub theta: f64,
    pub topology: Topology,
}

impl TrainConfig {
    pub fn new(topology: Topology) -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            decode: DecodeMode::default(),
            theta: 0.0,
            topology,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidThreshold(self.theta));
        }
        self.topology.layer_configs().map(|_| ())
    }
}

/// Mean open gates per (step, delay layer) under a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub theta: f64,
    pub mean_open: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Not reproducible; absent from files meant to be byte-compared.
    #[serde(default)]
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub open_gates: Option<GateStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub correct: usize,
    pub decisions: usize,
    /// Open gates averaged over steps of delay layers; 0 without any.
    pub mean_open_gates: f64,
}

fn check_data(network: &Network, batch: &SequenceBatch) -> Result<()> {
    if batch.input_dim != network.input_dim() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} input channels, network expects {}",
            batch.input_dim,
            network.input_dim()
        )));
    }
    if batch.num_classes != network.num_outputs() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, network has {} outputs",
            batch.num_classes,
            network.num_outputs()
        )));
    }
    Ok(())
}

fn summarize(outcomes: &[SampleOutcome]) -> EvalResult {
    let mut total = SampleOutcome::default();
    for o in outcomes {
        total.loss += o.loss;
        total.correct += o.correct;
        total.decisions += o.decisions;
        total.open_gates += o.open_gates;
        total.gate_steps += o.gate_steps;
    }
    EvalResult {
        accuracy: total.correct as f64 / total.decisions.max(1) as f64,
        mean_loss: total.loss / outcomes.len().max(1) as f64,
        correct: total.correct,
        decisions: total.decisions,
        mean_open_gates: if total.gate_steps == 0 {
            0.0
        } else {
            total.open_gates as f64 / total.gate_steps as f64
        },
    }
}

/// Accuracy, mean per-sample loss and gate usage on `batch`.
pub fn evaluate(network: &Network, batch: &SequenceBatch, mode: DecodeMode, theta: f64) -> Result<EvalResult> {
    check_data(network, batch)?;
    let outcomes = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (xs, target) = batch.sample(i);
            network.evaluate_sample(xs, &target, mode, theta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&outcomes))
}

pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<MetricsRecord>,
}

/// Mean gradient over `indices`, reduced in index order.
pub fn batch_gradient(
    network: &Network,
    data: &SequenceBatch,
    indices: &[usize],
    mode: DecodeMode,
) -> Result<(Vec<SampleOutcome>, Network)> {
    let results = indices
        .par_iter()
        .map(|&i| {
            let (xs, target) = data.sample(i);
            network.loss_and_gradient(xs, &target, mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes = Vec::with_capacity(results.len());
    let mut sum: Option<Network> = None;
    for (outcome, grad) in results {
        outcomes.push(outcome);
        match &mut sum {
            None => sum = Some(grad),
            Some(s) => s.accumulate(&grad),
        }
    }
    let mut grad = sum.unwrap_or_else(|| network.zeros_like());
    grad.scale(1.0 / indices.len().max(1) as f64);
    Ok((outcomes, grad))
}

/// Trains from a fresh network seeded by `cfg.seed`.
pub fn train(cfg: &TrainConfig, data: &TaskData) -> Result<TrainOutcome> {
    train_with(cfg, data, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch` after every epoch (e.g. to append metrics).
pub fn train_with<F>(cfg: &TrainConfig, data: &TaskData, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&MetricsRecord, &Network) -> Result<()>,
{
    cfg.validate()?;
    data.validate()?;
    let mut network = Network::new(cfg.topology.clone(), cfg.seed)?;
    check_data(&network, &data.train)?;
    let mut adam = AdamState::for_params(&network, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = SeededRng::derive(cfg.seed, epoch as u64).permutation(data.train.len());
        let mut seen = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch_size) {
            let (outcomes, grad) = batch_gradient(&network, &data.train, chunk, cfg.decode)?;
            adam.step(&mut network, &grad)?;
            seen.extend(outcomes);
        }
        let train = summarize(&seen);
        let test = evaluate(&network, &data.test, cfg.decode, cfg.theta)?;
        let record = MetricsRecord {
            epoch,
            train_loss: train.mean_loss,
            train_accuracy: train.accuracy,
            test_loss: test.mean_loss,
            test_accuracy: test.accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
            open_gates: (cfg.theta > 0.0).then_some(GateStats {
                theta: cfg.theta,
                mean_open: test.mean_open_gates,
            }),
        };
        on_epoch(&record, &network)?;
        history.push(record);
    }
    Ok(TrainOutcome { network, history })
}

/// Appends one JSON object per line.
pub struct MetricsWriter {
    out: BufWriter<File>,
    wall_clock: bool,
}

impl MetricsWriter {
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            wall_clock: true,
        })
    }

    /// Drops `wall_seconds` so equal runs write equal bytes.
    pub fn without_wall_clock(mut self) -> Self {
        self.wall_clock = false;
        self
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let mut value = serde_json::to_value(record).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !self.wall_clock {
            value
                .as_object_mut()
                .expect("record is an object")
                .remove("wall_seconds");
        }
        let line = value.to_string();
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidConfig(format!("metrics line: {e}"))))
        .collect()
}
