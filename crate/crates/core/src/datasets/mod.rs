//! Sequence datasets: synthetic probes and loaders for external formats.

mod ecg;
mod events;
mod idx;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use ecg::{gen_ecg_record, gen_ecg_stream, EcgRecord, EcgSegment, EcgSynthSpec, ECG_CLASSES};
pub use events::{bin_event_stream, parse_event_text, read_event_file, BinnedEvents, EventBinSpec};
pub use idx::{
    load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, permute_sequence, write_idx_images,
    write_idx_labels, IdxImages, PermutationSpec, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};
pub use synthetic::{adding_sample, gen_adding, gen_delayed_recall, AddingFraming, DelayedRecallSpec};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Supervision for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// One class for the whole sequence.
    Class(usize),
    /// One class per step (sequence labelling).
    PerStep(Vec<usize>),
    /// A scalar regression target.
    Value(f64),
}

/// A batch of input sequences with their targets.
///
/// `inputs[b]` has `T` steps of `input_dim` values; only the first
/// `lengths[b]` steps are fed to a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub inputs: Vec<Vec<Vector>>,
    pub targets: Vec<Target>,
    pub lengths: Vec<usize>,
    pub input_dim: usize,
    /// Number of classes, or 1 for regression targets.
    pub num_classes: usize,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The valid steps of sample `i` and its (length-truncated) target.
    pub fn sample(&self, i: usize) -> (&[Vector], Target) {
        let len = self.lengths[i];
        let target = match &self.targets[i] {
            Target::PerStep(ts) => Target::PerStep(ts[..len].to_vec()),
            other => other.clone(),
        };
        (&self.inputs[i][..len], target)
    }

    pub fn max_len(&self) -> usize {
        self.inputs.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Checks class ranges, lengths, input widths and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.targets.len() != self.inputs.len() || self.lengths.len() != self.inputs.len() {
            return Err(Error::InvalidConfig(format!(
                "batch has {} inputs, {} targets and {} lengths",
                self.inputs.len(),
                self.targets.len(),
                self.lengths.len()
            )));
        }
        for (b, ((seq, target), &len)) in self.inputs.iter().zip(&self.targets).zip(&self.lengths).enumerate() {
            if len == 0 || len > seq.len() {
                return Err(Error::InvalidConfig(format!(
                    "sample {b}: length {len} outside 1..={}",
                    seq.len()
                )));
            }
            if seq
                .iter()
                .any(|x| x.len() != self.input_dim || x.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::InvalidConfig(format!(
                    "sample {b}: inputs must be finite with width {}",
                    self.input_dim
                )));
            }
            let classes = self.num_classes;
            match target {
                Target::Class(c) if *c >= classes => {
                    return Err(Error::InvalidTarget { target: *c, classes });
                }
                Target::PerStep(ts) => {
                    if ts.len() != seq.len() {
                        return Err(Error::InvalidConfig(format!(
                            "sample {b}: {} labels for {} steps",
                            ts.len(),
                            seq.len()
                        )));
                    }
                    if let Some(&c) = ts.iter().find(|&&c| c >= classes) {
                        return Err(Error::InvalidTarget { target: c, classes });
                    }
                }
                Target::Value(v) if !v.is_finite() => {
                    return Err(Error::InvalidConfig(format!("sample {b}: non-finite target")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        SequenceBatch {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    /// Splits off the first `count` samples as one batch and the rest as another.
    pub fn split_at(&self, count: usize) -> (SequenceBatch, SequenceBatch) {
        let count = count.min(self.len());
        let first: Vec<usize> = (0..count).collect();
        let rest: Vec<usize> = (count..self.len()).collect();
        (self.select(&first), self.select(&rest))
    }
}

/// Fixed train and held-out test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: SequenceBatch,
    pub test: SequenceBatch,
}

impl TaskData {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.test.validate()?;
        if self.train.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        if self.train.input_dim != self.test.input_dim || self.train.num_classes != self.test.num_classes {
            return Err(Error::InvalidConfig("train and test splits disagree on shape".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_bad_batches() {
        let good = SequenceBatch {
            inputs: vec![vec![Vector::zeros(2); 3]],
            targets: vec![Target::Class(1)],
            lengths: vec![3],
            input_dim: 2,
            num_classes: 2,
        };
        good.validate().unwrap();
        let mut bad = good.clone();
        bad.targets[0] = Target::Class(2);
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.lengths[0] = 4;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.inputs[0][1][0] = f64::NAN;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.targets[0] = Target::PerStep(vec![0, 1]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_truncates_per_step_targets() {
        let b = SequenceBatch {
            inputs: vec![vec![Vector::zeros(1); 4]],
            targets: vec![Target::PerStep(vec![0, 1, 1, 0])],
            lengths: vec![2],
            input_dim: 1,
            num_classes: 2,
        };
        let (xs, t) = b.sample(0);
        assert_eq!(xs.len(), 2);
        assert_eq!(t, Target::PerStep(vec![0, 1]));
    }
}
