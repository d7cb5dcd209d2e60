//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! out = "runs/recall"
//! theta = 0.0          # inference gate threshold
//! decode = "last"      # or "all"
//!
//! [task]
//! kind = "delayed_recall"
//! alphabet = 8
//! delay = 8
//! length = 20
//! noise = true
//! train = 2000
//! test = 1000
//!
//! [[layers]]
//! kind = "dmu"         # rnn, lstm, gru, indrnn, dmu, dmu_lstm, dmu_gru, dmu_indrnn
//! hidden = 64
//! delays = 10
//! dilation = 1
//!
//! [train]
//! learning_rate = 0.001
//! epochs = 50
//! batch_size = 32
//!
//! [sweep]
//! theta = [0.0, 0.05, 0.1]
//! n = [0, 5, 10]
//! tau = [1, 2]
//! span = 20            # optional: with a tau sweep, n = span / tau
//!
//! [gradcheck]
//! epsilon = 1e-5
//! tolerance = 1e-4
//! length = 6
//! ```
//!
//! Other task kinds: `adding` (`length`, optional `bins`, `train`, `test`),
//! `ecg` (`train`, `test`, optional `[task.spec]` generator overrides) and
//! `idx` (`images`, `labels`, `test_images`, `test_labels`,
//! `permutation_seed`, optional `limit`). Generated splits are seeded with
//! `seed + 1000` (train) and `seed + 2000` (test) so they never share a
//! stream with the weight initialization.

use std::path::{Path, PathBuf};

use dmu_core::datasets::{
    gen_adding, gen_delayed_recall, gen_ecg_stream, load_idx_images, load_idx_labels, permute_sequence, AddingFraming,
    DelayedRecallSpec, EcgSynthSpec, PermutationSpec,
};
use dmu_core::network::{LayerSpec, Topology};
use dmu_core::{DecodeMode, TaskData, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub decode: DecodeMode,
    pub task: TaskConfig,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub gradcheck: GradCheckSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    DelayedRecall {
        alphabet: usize,
        delay: usize,
        length: usize,
        #[serde(default)]
        noise: bool,
        train: usize,
        test: usize,
    },
    Adding {
        length: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bins: Option<usize>,
        train: usize,
        test: usize,
    },
    Ecg {
        train: usize,
        test: usize,
        #[serde(default)]
        spec: EcgSynthSpec,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        permutation_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 120,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub theta: Vec<f64>,
    pub n: Vec<usize>,
    pub tau: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Steps of the first training sample used for the check.
    pub length: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            length: 6,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// `(input_dim, outputs)` implied by the task, without generating data.
    pub fn task_dims(&self) -> Result<(usize, usize), CliError> {
        Ok(match &self.task {
            TaskConfig::DelayedRecall { alphabet, .. } => (alphabet + 1, *alphabet),
            TaskConfig::Adding { bins, .. } => (2, bins.unwrap_or(1)),
            TaskConfig::Ecg { spec, .. } => (2, spec.num_classes()),
            TaskConfig::Idx { .. } => (1, 10),
        })
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        let (input_dim, outputs) = self.task_dims()?;
        let topology = Topology {
            input_dim,
            outputs,
            layers: self.layers.clone(),
        };
        topology.layer_configs().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(topology)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            decode: self.decode,
            theta: self.theta,
            topology: self.topology()?,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()?;
        let gc = &self.gradcheck;
        if !(gc.epsilon > 0.0 && gc.tolerance > 0.0 && gc.length > 0) {
            return Err(CliError::Config(
                "gradcheck needs positive epsilon, tolerance and length".into(),
            ));
        }
        if let Some(&bad) = self.sweep.theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::Config(format!("sweep theta {bad} outside [0, 1]")));
        }
        if self.sweep.tau.contains(&0) {
            return Err(CliError::Config("sweep tau values must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_task(&self) -> Result<TaskData, CliError> {
        let seed = self.seed.wrapping_add(1000);
        let test_seed = self.seed.wrapping_add(2000);
        let data = match &self.task {
            TaskConfig::DelayedRecall {
                alphabet,
                delay,
                length,
                noise,
                train,
                test,
            } => {
                let spec = DelayedRecallSpec {
                    alphabet: *alphabet,
                    delay: *delay,
                    length: *length,
                    noise: *noise,
                    seed,
                };
                TaskData {
                    train: gen_delayed_recall(&spec, *train)?,
                    test: gen_delayed_recall(
                        &DelayedRecallSpec {
                            seed: test_seed,
                            ..spec
                        },
                        *test,
                    )?,
                }
            }
            TaskConfig::Adding {
                length,
                bins,
                train,
                test,
            } => {
                let framing = match bins {
                    Some(bins) => AddingFraming::Binned { bins: *bins },
                    None => AddingFraming::Regression,
                };
                TaskData {
                    train: gen_adding(*length, *train, seed, framing)?,
                    test: gen_adding(*length, *test, test_seed, framing)?,
                }
            }
            TaskConfig::Ecg { train, test, spec } => TaskData {
                train: gen_ecg_stream(&EcgSynthSpec { seed, ..spec.clone() }, *train)?,
                test: gen_ecg_stream(
                    &EcgSynthSpec {
                        seed: test_seed,
                        ..spec.clone()
                    },
                    *test,
                )?,
            },
            TaskConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                permutation_seed,
                limit,
            } => {
                let load = |imgs: &Path, lbls: &Path| -> Result<_, CliError> {
                    let mut imgs = load_idx_images(imgs)?;
                    let mut lbls = load_idx_labels(lbls)?;
                    if let Some(limit) = limit {
                        imgs.pixels.truncate(*limit);
                        imgs.count = imgs.pixels.len();
                        lbls.truncate(*limit);
                    }
                    Ok((imgs, lbls))
                };
                let (train_imgs, train_lbls) = load(images, labels)?;
                let (test_imgs, test_lbls) = load(test_images, test_labels)?;
                // One permutation shared by both splits.
                let perm = PermutationSpec::new(train_imgs.rows * train_imgs.cols, *permutation_seed);
                TaskData {
                    train: permute_sequence(&train_imgs, &train_lbls, &perm)?,
                    test: permute_sequence(&test_imgs, &test_lbls, &perm)?,
                }
            }
        };
        data.validate()?;
        Ok(data)
    }
}
