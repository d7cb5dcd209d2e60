//! Stacked recurrent layers with a linear readout.
//!
//! Layer `ℓ` consumes layer `ℓ−1`'s hidden state at the same step; each
//! layer owns its own delay line.

use serde::{Deserialize, Serialize};

use crate::backprop::{
    backward_unchecked, forward_unchecked, per_step_loss, regression_loss, sequence_loss, DecodeMode, ReadoutLoss,
    SequenceCache,
};
use crate::cells::{CellKind, DmuConfig, LayerParams};
use crate::datasets::Target;
use crate::error::{Error, Result};
use crate::numerics::{init_kaiming, init_kaiming_vector, Activation, Matrix, SeededRng, Vector};
use crate::params::{Parameters, TensorView};

/// A regression prediction within this distance of the target counts as a hit.
pub const REGRESSION_HIT_TOLERANCE: f64 = 0.04;

fn one() -> usize {
    1
}

fn tanh() -> Activation {
    Activation::Tanh
}

/// One recurrent layer of a topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: CellKind,
    pub hidden: usize,
    #[serde(default)]
    pub delays: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default = "tanh")]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(kind: CellKind, hidden: usize, delays: usize) -> Self {
        LayerSpec {
            kind,
            hidden,
            delays: if kind.has_delay_line() { delays } else { 0 },
            dilation: 1,
            activation: Activation::Tanh,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub input_dim: usize,
    /// Number of classes, or 1 for regression.
    pub outputs: usize,
    pub layers: Vec<LayerSpec>,
}

impl Topology {
    pub fn single(input_dim: usize, outputs: usize, layer: LayerSpec) -> Self {
        Topology {
            input_dim,
            outputs,
            layers: vec![layer],
        }
    }

    /// Per-layer cell configurations, chained input to output.
    pub fn layer_configs(&self) -> Result<Vec<DmuConfig>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("topology needs at least one layer".into()));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidConfig("topology needs at least one output".into()));
        }
        let mut input = self.input_dim;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            if !spec.kind.has_delay_line() && spec.delays != 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: {:?} has no delay line but {} delays were requested",
                    spec.kind, spec.delays
                )));
            }
            let cfg = DmuConfig::new(input, spec.hidden, spec.delays)
                .with_dilation(spec.dilation)
                .with_activation(spec.activation);
            cfg.validate()
                .map_err(|e| Error::InvalidConfig(format!("layer {i}: {e}")))?;
            out.push(cfg);
            input = spec.hidden;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub cfg: DmuConfig,
    pub params: LayerParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub topology: Topology,
    pub layers: Vec<Layer>,
    pub readout: Matrix,
    pub readout_bias: Vector,
}

/// Per-sample outcome of a forward (and possibly backward) pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleOutcome {
    pub loss: f64,
    pub correct: usize,
    pub decisions: usize,
    /// Sum of open gate counts over every (step, delay layer).
    pub open_gates: usize,
    pub gate_steps: usize,
}

impl Network {
    /// Kaiming-initialized network; the seed fully determines every weight.
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        let cfgs = topology.layer_configs()?;
        let mut rng = SeededRng::new(seed);
        let mut layers = Vec::with_capacity(cfgs.len());
        for (spec, cfg) in topology.layers.iter().zip(cfgs) {
            let params = LayerParams::kaiming(spec.kind, &cfg, &mut rng)?;
            layers.push(Layer { cfg, params });
        }
        let top = topology.layers.last().expect("non-empty").hidden;
        let readout = init_kaiming(&mut rng, topology.outputs, top, top);
        let readout_bias = init_kaiming_vector(&mut rng, topology.outputs, top);
        Ok(Network {
            topology,
            layers,
            readout,
            readout_bias,
        })
    }

    /// Checks that the parameter shapes agree with the stored topology.
    pub fn validate(&self) -> Result<()> {
        let cfgs = self.topology.layer_configs()?;
        if cfgs.len() != self.layers.len() {
            return Err(Error::InvalidConfig("layer count differs from topology".into()));
        }
        for (layer, (cfg, spec)) in self.layers.iter().zip(cfgs.iter().zip(&self.topology.layers)) {
            if layer.params.kind() != spec.kind || layer.cfg.num_delays != cfg.num_delays {
                return Err(Error::InvalidConfig("layer kind differs from topology".into()));
            }
            layer.params.check(cfg)?;
        }
        let top = self.topology.layers.last().expect("non-empty").hidden;
        if self.readout.shape() != (self.topology.outputs, top) || self.readout_bias.len() != self.topology.outputs {
            return Err(Error::shape(
                "readout",
                format!("{}×{top}", self.topology.outputs),
                format!("{}×{}", self.readout.rows(), self.readout.cols()),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.topology.input_dim
    }

    pub fn num_outputs(&self) -> usize {
        self.topology.outputs
    }

    fn check_inputs(&self, inputs: &[Vector]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::InvalidConfig("empty input sequence".into()));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != self.input_dim()) {
            return Err(Error::shape(
                "network input",
                format!("length {}", self.input_dim()),
                format!("length {}", x.len()),
            ));
        }
        Ok(())
    }

    /// Forward pass through every layer; `theta` thresholds gates at inference.
    pub fn forward(&self, inputs: &[Vector], theta: f64) -> Result<Vec<SequenceCache>> {
        self.check_inputs(inputs)?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidThreshold(theta));
        }
        Ok(self.forward_unchecked(inputs, theta))
    }

    fn forward_unchecked(&self, inputs: &[Vector], theta: f64) -> Vec<SequenceCache> {
        let mut caches: Vec<SequenceCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let cfg = DmuConfig {
                gate_threshold: if layer.cfg.num_delays > 0 { theta } else { 0.0 },
                ..layer.cfg
            };
            let cache = match caches.last() {
                None => forward_unchecked(&layer.params, &cfg, inputs),
                Some(prev) => forward_unchecked(&layer.params, &cfg, &prev.outputs()),
            };
            caches.push(cache);
        }
        caches
    }

    fn readout_loss(&self, hs: &[Vector], target: &Target, mode: DecodeMode) -> Result<ReadoutLoss> {
        match target {
            Target::Class(c) => sequence_loss(mode, &self.readout, &self.readout_bias, hs, *c),
            Target::PerStep(ts) => per_step_loss(&self.readout, &self.readout_bias, hs, ts),
            Target::Value(v) => regression_loss(mode, &self.readout, &self.readout_bias, hs, *v),
        }
    }

    fn score(&self, loss: &ReadoutLoss, target: &Target) -> (usize, usize) {
        match target {
            Target::Class(c) => ((loss.logits[0].argmax() == *c) as usize, 1),
            Target::PerStep(ts) => (
                loss.logits.iter().zip(ts).filter(|(l, t)| l.argmax() == **t).count(),
                ts.len(),
            ),
            Target::Value(v) => (((loss.logits[0][0] - v).abs() < REGRESSION_HIT_TOLERANCE) as usize, 1),
        }
    }

    fn gate_counts(caches: &[SequenceCache]) -> (usize, usize) {
        let mut open = 0;
        let mut steps = 0;
        for c in caches.iter().filter(|c| c.cfg.num_delays > 0) {
            open += c.steps.iter().map(|s| s.outputs.open_count).sum::<usize>();
            steps += c.len();
        }
        (open, steps)
    }

    /// Loss and correctness of one sample without touching gradients.
    pub fn evaluate_sample(
        &self,
        inputs: &[Vector],
        target: &Target,
        mode: DecodeMode,
        theta: f64,
    ) -> Result<SampleOutcome> {
        let caches = self.forward(inputs, theta)?;
        let hs = caches.last().expect("non-empty").outputs();
        let loss = self.readout_loss(&hs, target, mode)?;
        let (correct, decisions) = self.score(&loss, target);
        let (open_gates, gate_steps) = Self::gate_counts(&caches);
        Ok(SampleOutcome {
            loss: loss.loss,
            correct,
            decisions,
            open_gates,
            gate_steps,
        })
    }

    /// Loss, correctness and the full parameter gradient of one sample.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vector],
        target: &Target,
        mode: DecodeMode,
    ) -> Result<(SampleOutcome, Network)> {
        let caches = self.forward(inputs, 0.0)?;
        let hs = caches.last().expect("non-empty").outputs();
        let loss = self.readout_loss(&hs, target, mode)?;
        let (correct, decisions) = self.score(&loss, target);

        let mut grads = self.zeros_like();
        grads.readout = loss.d_readout;
        grads.readout_bias = loss.d_bias;
        let mut upstream = loss.dl_dh;
        for (i, (layer, cache)) in self.layers.iter().zip(&caches).enumerate().rev() {
            let g = backward_unchecked(&layer.params, &cache.cfg, cache, &upstream);
            grads.layers[i].params = g.params;
            upstream = g.inputs;
        }
        let (open_gates, gate_steps) = Self::gate_counts(&caches);
        Ok((
            SampleOutcome {
                loss: loss.loss,
                correct,
                decisions,
                open_gates,
                gate_steps,
            },
            grads,
        ))
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, inputs: &[Vector], target: &Target, mode: DecodeMode) -> Result<f64> {
        Ok(self.evaluate_sample(inputs, target, mode, 0.0)?.loss)
    }
}

impl Parameters for Network {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for mut t in layer.params.tensors() {
                t.name = format!("layer{i}.{}", t.name);
                out.push(t);
            }
        }
        out.push(TensorView {
            name: "readout.w".into(),
            rows: self.readout.rows(),
            cols: self.readout.cols(),
            data: self.readout.as_slice(),
        });
        out.push(TensorView {
            name: "readout.b".into(),
            rows: self.readout_bias.len(),
            cols: 1,
            data: &self.readout_bias,
        });
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.params.tensors_mut());
        }
        out.push(self.readout.as_mut_slice());
        out.push(&mut self.readout_bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::grad_check;
    use crate::cells::count_params;

    fn random_seq(rng: &mut SeededRng, t: usize, m: usize) -> Vec<Vector> {
        (0..t).map(|_| (0..m).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn stacked_network_gradients() {
        let topo = Topology {
            input_dim: 2,
            outputs: 3,
            layers: vec![
                LayerSpec::new(CellKind::Dmu, 3, 2).with_dilation(2),
                LayerSpec::new(CellKind::Gru, 3, 0),
                LayerSpec::new(CellKind::DmuLstm, 2, 2),
            ],
        };
        let net = Network::new(topo, 3).unwrap();
        let mut rng = SeededRng::new(5);
        let xs = random_seq(&mut rng, 7, 2);
        for (target, mode) in [
            (Target::Class(1), DecodeMode::Last),
            (Target::Class(2), DecodeMode::All),
            (Target::PerStep(vec![0, 1, 2, 2, 1, 0, 1]), DecodeMode::Last),
        ] {
            let (_, grads) = net.loss_and_gradient(&xs, &target, mode).unwrap();
            let report = grad_check(&net, &grads, |p| p.loss(&xs, &target, mode).unwrap(), 1e-5, 1e-4);
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn long_sequence_per_step_gradients() {
        let net = Network::new(Topology::single(2, 3, LayerSpec::new(CellKind::Dmu, 4, 5)), 8).unwrap();
        let mut rng = SeededRng::new(6);
        let xs = random_seq(&mut rng, 30, 2);
        let target = Target::PerStep((0..30).map(|t| (t / 4) % 3).collect());
        let (_, grads) = net.loss_and_gradient(&xs, &target, DecodeMode::Last).unwrap();
        let report = grad_check(
            &net,
            &grads,
            |p| p.loss(&xs, &target, DecodeMode::Last).unwrap(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn regression_network_gradients() {
        let topo = Topology::single(2, 1, LayerSpec::new(CellKind::Dmu, 3, 2));
        let net = Network::new(topo, 9).unwrap();
        let mut rng = SeededRng::new(1);
        let xs = random_seq(&mut rng, 6, 2);
        let target = Target::Value(0.7);
        let (_, grads) = net.loss_and_gradient(&xs, &target, DecodeMode::Last).unwrap();
        let report = grad_check(
            &net,
            &grads,
            |p| p.loss(&xs, &target, DecodeMode::Last).unwrap(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let topo = Topology::single(40, 20, LayerSpec::new(CellKind::Dmu, 64, 20));
        let net = Network::new(topo, 0).unwrap();
        assert_eq!(
            net.layers[0].params.num_params(),
            count_params(CellKind::Dmu, 40, 64, 20)
        );
        assert_eq!(net.num_params(), 7940 + 20 * 64 + 20);
        net.validate().unwrap();
    }

    #[test]
    fn topology_errors() {
        let bad = Topology::single(
            4,
            2,
            LayerSpec {
                delays: 3,
                ..LayerSpec::new(CellKind::Lstm, 4, 0)
            },
        );
        assert!(Network::new(bad, 0).is_err());
        let empty = Topology {
            input_dim: 4,
            outputs: 2,
            layers: vec![],
        };
        assert!(Network::new(empty, 0).is_err());
        let net = Network::new(Topology::single(2, 2, LayerSpec::new(CellKind::Rnn, 3, 0)), 0).unwrap();
        assert!(net.forward(&[Vector::zeros(3)], 0.0).is_err());
        assert!(net.forward(&[Vector::zeros(2)], 1.5).is_err());
    }

    #[test]
    fn same_seed_same_network() {
        let topo = Topology::single(3, 4, LayerSpec::new(CellKind::Dmu, 5, 3));
        assert_eq!(
            Network::new(topo.clone(), 17).unwrap(),
            Network::new(topo.clone(), 17).unwrap()
        );
        assert_ne!(Network::new(topo.clone(), 17).unwrap(), Network::new(topo, 18).unwrap());
    }
}
