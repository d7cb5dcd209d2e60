//! Gate traces, weight histograms and sweeps, with CSV export.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::backprop::{forward_cache_sequence, DecodeMode};
use crate::cells::{DmuConfig, LayerParams};
use crate::datasets::SequenceBatch;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::Vector;
use crate::training::evaluate;

/// Gate vectors of one layer over one sequence (`T` rows of `n`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateTrace {
    pub layer: usize,
    pub theta: f64,
    pub sequence_id: usize,
    pub values: Vec<Vector>,
}

impl GateTrace {
    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn num_delays(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Mean gate vector over the steps carrying each label.
    /// Labels with no steps get an all-zero row.
    pub fn mean_by_label(&self, labels: &[usize], num_labels: usize) -> Vec<Vector> {
        let n = self.num_delays();
        let mut sums = vec![Vector::zeros(n); num_labels];
        let mut counts = vec![0usize; num_labels];
        for (g, &l) in self.values.iter().zip(labels) {
            sums[l].add_assign(g);
            counts[l] += 1;
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            if c > 0 {
                *s = s.scaled(1.0 / c as f64);
            }
        }
        sums
    }
}

/// Gates (post-threshold when `cfg.gate_threshold > 0`) of a single layer.
pub fn trace_gates(params: &LayerParams, cfg: &DmuConfig, inputs: &[Vector]) -> Result<GateTrace> {
    if !params.kind().has_delay_line() {
        return Err(Error::InvalidConfig(format!(
            "{:?} layer has no delay gates",
            params.kind()
        )));
    }
    let (_, cache) = forward_cache_sequence(params, cfg, inputs)?;
    Ok(GateTrace {
        layer: 0,
        theta: cfg.gate_threshold,
        sequence_id: 0,
        values: cache.steps.iter().map(|s| s.outputs.applied_gates.clone()).collect(),
    })
}

/// Gate trace of `layer` inside a stacked network.
pub fn trace_network_gates(
    network: &Network,
    layer: usize,
    inputs: &[Vector],
    theta: f64,
    sequence_id: usize,
) -> Result<GateTrace> {
    let Some(l) = network.layers.get(layer) else {
        return Err(Error::InvalidConfig(format!(
            "layer {layer} out of range for {} layers",
            network.layers.len()
        )));
    };
    if !l.params.kind().has_delay_line() {
        return Err(Error::InvalidConfig(format!("layer {layer} has no delay gates")));
    }
    let caches = network.forward(inputs, theta)?;
    Ok(GateTrace {
        layer,
        theta,
        sequence_id,
        values: caches[layer]
            .steps
            .iter()
            .map(|s| s.outputs.applied_gates.clone())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightHistogram {
    pub source: String,
    /// `counts.len() + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`, the last bin closed on the right.
/// A zero span uses `[min, min + 1]`.
pub fn weight_histogram(weights: &[f64], num_bins: usize, source: &str) -> Result<WeightHistogram> {
    if weights.is_empty() {
        return Err(Error::InvalidConfig("histogram of no weights".into()));
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidConfig("histogram of non-finite weights".into()));
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = span / num_bins as f64;
    let edges: Vec<f64> = (0..=num_bins)
        .map(|i| {
            if i == num_bins {
                lo + span
            } else {
                lo + width * i as f64
            }
        })
        .collect();
    let mut counts = vec![0; num_bins];
    for &w in weights {
        let bin = (((w - lo) / width).floor() as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    Ok(WeightHistogram {
        source: source.to_string(),
        edges,
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    /// `theta` value, or `n{n}_tau{τ}` for span sweeps.
    pub label: String,
    pub accuracy: f64,
    pub open_gates: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn push_span(&mut self, n: usize, tau: usize, accuracy: f64, open_gates: f64) {
        self.rows.push(SweepRow {
            label: format!("n{n}_tau{tau}"),
            accuracy,
            open_gates,
        });
    }
}

/// Evaluates `network` at each θ. Fails if the open-gate count ever rises
/// as θ grows.
pub fn threshold_sweep(
    network: &Network,
    data: &SequenceBatch,
    mode: DecodeMode,
    thetas: &[f64],
) -> Result<SweepResult> {
    if let Some(&bad) = thetas.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidThreshold(bad));
    }
    let evals = thetas
        .par_iter()
        .map(|&theta| evaluate(network, data, mode, theta))
        .collect::<Result<Vec<_>>>()?;
    let mut by_theta: Vec<(f64, f64)> = thetas
        .iter()
        .zip(&evals)
        .map(|(&t, e)| (t, e.mean_open_gates))
        .collect();
    by_theta.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = by_theta.windows(2).find(|w| w[1].1 > w[0].1) {
        return Err(Error::InvalidConfig(format!(
            "open gates rose from {} at theta {} to {} at theta {}",
            w[0].1, w[0].0, w[1].1, w[1].0
        )));
    }
    Ok(SweepResult {
        rows: thetas
            .iter()
            .zip(evals)
            .map(|(t, e)| SweepRow {
                label: t.to_string(),
                accuracy: e.accuracy,
                open_gates: e.mean_open_gates,
            })
            .collect(),
    })
}

pub fn write_gate_trace_csv(path: impl AsRef<Path>, trace: &GateTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "delay_index", "value"])?;
    for (t, gates) in trace.values.iter().enumerate() {
        for (k, v) in gates.iter().enumerate() {
            w.write_record([t.to_string(), (k + 1).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: impl AsRef<Path>, hist: &WeightHistogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        w.write_record([hist.edges[i].to_string(), hist.edges[i + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["theta_or_n_tau", "accuracy", "open_gates"])?;
    for r in &sweep.rows {
        w.write_record([r.label.clone(), r.accuracy.to_string(), r.open_gates.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, CellParams};
    use crate::datasets::{gen_delayed_recall, DelayedRecallSpec};
    use crate::network::{LayerSpec, Topology};
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn seq(rng: &mut SeededRng, t: usize, m: usize) -> Vec<Vector> {
        (0..t).map(|_| (0..m).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn zero_delay_params_give_uniform_trace() {
        let cfg = DmuConfig::new(3, 4, 5);
        let mut rng = SeededRng::new(1);
        let mut p = CellParams::kaiming(&cfg, &mut rng);
        p.delay = crate::cells::baseline::Affine::zeros(cfg.num_delays, cfg.input_dim, cfg.num_delays);
        let params = LayerParams::Dmu(p);
        let xs = seq(&mut rng, 7, 3);
        let trace = trace_gates(&params, &cfg, &xs).unwrap();
        assert_eq!((trace.steps(), trace.num_delays()), (7, 5));
        for row in &trace.values {
            assert!(row.iter().all(|&g| (g - 0.2).abs() < 1e-15));
        }
        assert_eq!(trace, trace_gates(&params, &cfg, &xs).unwrap());
    }

    #[test]
    fn traced_rows_sum_to_one() {
        let cfg = DmuConfig::new(2, 3, 4).with_dilation(2);
        let mut rng = SeededRng::new(2);
        let params = LayerParams::kaiming(CellKind::Dmu, &cfg, &mut rng).unwrap();
        let trace = trace_gates(&params, &cfg, &seq(&mut rng, 9, 2)).unwrap();
        for row in &trace.values {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let rnn = LayerParams::kaiming(CellKind::Rnn, &DmuConfig::new(2, 3, 0), &mut rng).unwrap();
        assert!(trace_gates(&rnn, &DmuConfig::new(2, 3, 0), &seq(&mut rng, 3, 2)).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = weight_histogram(&[0.0, 1.0, 2.0, 3.0], 2, "w").unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![0.0, 1.5, 3.0]);
        let h = weight_histogram(&[0.7; 9], 4, "c").unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 9);
        assert!(weight_histogram(&[], 3, "e").is_err());
        assert!(weight_histogram(&[1.0], 0, "e").is_err());
    }

    proptest! {
        #[test]
        fn histogram_conserves_counts(ws in prop::collection::vec(-5.0f64..5.0, 1..200), bins in 1usize..20) {
            let h = weight_histogram(&ws, bins, "p").unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), ws.len());
            prop_assert!(h.edges.windows(2).all(|e| e[1] > e[0]));
        }
    }

    #[test]
    fn sweep_rows_and_boundaries() {
        let spec = DelayedRecallSpec::new(3, 2, 6, 1);
        let data = gen_delayed_recall(&spec, 30).unwrap();
        let net = Network::new(Topology::single(4, 3, LayerSpec::new(CellKind::Dmu, 6, 4)), 3).unwrap();
        let thetas = [0.0, 0.1, 0.25, 0.5, 1.0];
        let sweep = threshold_sweep(&net, &data, DecodeMode::Last, &thetas).unwrap();
        assert_eq!(sweep.rows.len(), 5);
        let plain = evaluate(&net, &data, DecodeMode::Last, 0.0).unwrap();
        assert_eq!(sweep.rows[0].accuracy, plain.accuracy);
        assert_eq!(sweep.rows[0].open_gates, 4.0);
        assert_eq!(sweep.rows[4].open_gates, 0.0);
        assert!(threshold_sweep(&net, &data, DecodeMode::Last, &[1.5]).is_err());
    }

    #[test]
    fn csv_headers() {
        let dir = tempfile::tempdir().unwrap();
        let mut sweep = SweepResult::default();
        sweep.push_span(10, 2, 0.99, 3.5);
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&p, &sweep).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "theta_or_n_tau,accuracy,open_gates\nn10_tau2,0.99,3.5\n");
        let h = weight_histogram(&[0.0, 1.0], 1, "w").unwrap();
        let p = dir.path().join("histogram.csv");
        write_histogram_csv(&p, &h).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "bin_lo,bin_hi,count\n0,1,2\n");
        let trace = GateTrace {
            layer: 0,
            theta: 0.0,
            sequence_id: 0,
            values: vec![Vector::from(vec![0.25, 0.75])],
        };
        let p = dir.path().join("gate_trace.csv");
        write_gate_trace_csv(&p, &trace).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "step,delay_index,value\n0,1,0.25\n0,2,0.75\n"
        );
    }
}
