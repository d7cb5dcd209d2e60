use serde::{Deserialize, Serialize};

use super::{SequenceBatch, Target};
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};

/// Recall the symbol shown `delay` steps before the marker.
///
/// Layout per step: `alphabet` one-hot symbol channels, then one marker
/// channel. The cue symbol appears at `t0 = length - 1 - delay`; the marker is
/// raised at the final step, where the decision is read. With `noise` set,
/// every other step before the marker also shows a uniformly drawn distractor
/// symbol, so the cue is identified only by its distance to the marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayedRecallSpec {
    pub alphabet: usize,
    pub delay: usize,
    pub length: usize,
    #[serde(default)]
    pub noise: bool,
    #[serde(default)]
    pub seed: u64,
}

impl DelayedRecallSpec {
    pub fn new(alphabet: usize, delay: usize, length: usize, seed: u64) -> Self {
        Self {
            alphabet,
            delay,
            length,
            noise: false,
            seed,
        }
    }

    pub fn with_noise(mut self) -> Self {
        self.noise = true;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.alphabet + 1
    }

    pub fn cue_step(&self) -> usize {
        self.length - 1 - self.delay
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet < 2 {
            return Err(Error::InvalidConfig("alphabet needs at least 2 symbols".into()));
        }
        if self.delay < 1 {
            return Err(Error::InvalidConfig("delay must be at least 1".into()));
        }
        if self.length < self.delay + 2 {
            return Err(Error::InvalidConfig(format!(
                "length {} must be at least delay + 2 = {}",
                self.length,
                self.delay + 2
            )));
        }
        Ok(())
    }
}

pub fn gen_delayed_recall(spec: &DelayedRecallSpec, count: usize) -> Result<SequenceBatch> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let dim = spec.input_dim();
    let t0 = spec.cue_step();
    let last = spec.length - 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let symbol = rng.below(spec.alphabet);
        let mut seq = vec![Vector::zeros(dim); spec.length];
        seq[t0][symbol] = 1.0;
        seq[last][spec.alphabet] = 1.0;
        if spec.noise {
            for (t, x) in seq[..last].iter_mut().enumerate() {
                if t != t0 {
                    x[rng.below(spec.alphabet)] = 1.0;
                }
            }
        }
        inputs.push(seq);
        targets.push(Target::Class(symbol));
    }
    Ok(SequenceBatch {
        inputs,
        targets,
        lengths: vec![spec.length; count],
        input_dim: dim,
        num_classes: spec.alphabet,
    })
}

/// How the adding-problem target is presented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "framing")]
pub enum AddingFraming {
    /// Scalar target, squared-error loss.
    Regression,
    /// The sum's range [0, 2) split into `bins` equal classes.
    Binned { bins: usize },
}

/// One adding-problem sequence from explicit values and marker positions.
///
/// Channel 0 carries `values[t]`, channel 1 is 1.0 at the two marked steps.
pub fn adding_sample(values: &[f64], markers: (usize, usize)) -> Result<(Vec<Vector>, f64)> {
    let (a, b) = markers;
    if a == b || a >= values.len() || b >= values.len() {
        return Err(Error::InvalidConfig(format!(
            "markers {markers:?} must be two distinct steps below {}",
            values.len()
        )));
    }
    let seq = values
        .iter()
        .enumerate()
        .map(|(t, &v)| Vector::from(vec![v, if t == a || t == b { 1.0 } else { 0.0 }]))
        .collect();
    Ok((seq, values[a] + values[b]))
}

/// Adding problem: values uniform on [0, 1), one marker in each half.
pub fn gen_adding(length: usize, count: usize, seed: u64, framing: AddingFraming) -> Result<SequenceBatch> {
    if length < 2 {
        return Err(Error::InvalidConfig("adding problem needs length >= 2".into()));
    }
    let num_classes = match framing {
        AddingFraming::Regression => 1,
        AddingFraming::Binned { bins } if bins >= 2 => bins,
        AddingFraming::Binned { bins } => {
            return Err(Error::InvalidConfig(format!("{bins} bins; need at least 2")));
        }
    };
    let mut rng = SeededRng::new(seed);
    let half = length / 2;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let values: Vec<f64> = (0..length).map(|_| rng.uniform()).collect();
        let a = rng.below(half);
        let b = half + rng.below(length - half);
        let (seq, sum) = adding_sample(&values, (a, b))?;
        inputs.push(seq);
        targets.push(match framing {
            AddingFraming::Regression => Target::Value(sum),
            AddingFraming::Binned { bins } => Target::Class(((sum / 2.0 * bins as f64) as usize).min(bins - 1)),
        });
    }
    Ok(SequenceBatch {
        inputs,
        targets,
        lengths: vec![length; count],
        input_dim: 2,
        num_classes,
    })
}
