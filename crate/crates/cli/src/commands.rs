use std::fs;
use std::path::{Path, PathBuf};

use dmu_core::analysis::{
    threshold_sweep, trace_network_gates, weight_histogram, write_gate_trace_csv, write_histogram_csv, write_sweep_csv,
    SweepResult,
};
use dmu_core::backprop::grad_check;
use dmu_core::training::{train_with, MetricsWriter};
use dmu_core::{evaluate, Network, Parameters, Target, TaskData};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::{Axis, CliError, Command, Common};

pub const CHECKPOINT_FILE: &str = "checkpoint.dmu";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// A validated configuration with command-line overrides applied.
pub struct Run {
    pub cfg: RunConfig,
}

fn config_error(e: dmu_core::Error) -> CliError {
    match e {
        dmu_core::Error::Io(_) | dmu_core::Error::Csv(_) => CliError::Core(e),
        dmu_core::Error::BadMagic { .. }
        | dmu_core::Error::Truncated { .. }
        | dmu_core::Error::DimensionOverflow(_) => CliError::Core(e),
        other => CliError::Config(other.to_string()),
    }
}

impl Run {
    pub fn prepare(common: &Common) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(theta) = common.theta {
            cfg.theta = theta;
        }
        if let Some(out) = &common.out {
            cfg.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(Run { cfg })
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.cfg
            .out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: set `out` or pass --out".into()))
    }

    /// Generated or loaded data; generator parameter errors count as config errors.
    pub fn data(&self) -> Result<TaskData, CliError> {
        match self.cfg.build_task() {
            Err(CliError::Core(e)) => Err(config_error(e)),
            other => other,
        }
    }

    fn checkpoint_path(&self, explicit: Option<&PathBuf>) -> Result<PathBuf, CliError> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join(CHECKPOINT_FILE)),
        }
    }

    /// The config with the output directory removed, as stored in checkpoints.
    pub fn echo(&self) -> serde_json::Value {
        let cfg = RunConfig {
            out: None,
            ..self.cfg.clone()
        };
        serde_json::to_value(cfg).expect("config serializes")
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { common } => {
            let run = Run::prepare(&common)?;
            let data = run.data()?;
            let out = run.out_dir()?.to_path_buf();
            let network = train_into(&run, &data, &out, true)?;
            let last = evaluate(&network, &data.test, run.cfg.decode, run.cfg.theta)?;
            print_json(&last)
        }
        Command::Eval { common, checkpoint } => {
            let run = Run::prepare(&common)?;
            let data = run.data()?;
            let (network, _) = checkpoint::load(&run.checkpoint_path(checkpoint.as_ref())?)?;
            print_json(&evaluate(&network, &data.test, run.cfg.decode, run.cfg.theta)?)
        }
        Command::Gradcheck {
            common,
            tol,
            corrupt_gradient,
        } => {
            let mut run = Run::prepare(&common)?;
            if let Some(tol) = tol {
                if tol.is_nan() || tol <= 0.0 {
                    return Err(CliError::Config(format!("--tol {tol} must be positive")));
                }
                run.cfg.gradcheck.tolerance = tol;
            }
            gradcheck(&run, corrupt_gradient)
        }
        Command::Sweep {
            common,
            axis,
            thetas,
            ns,
            taus,
            span,
            checkpoint,
        } => {
            let mut run = Run::prepare(&common)?;
            let sweep = &mut run.cfg.sweep;
            if let Some(v) = thetas {
                sweep.theta = v;
            }
            if let Some(v) = ns {
                sweep.n = v;
            }
            if let Some(v) = taus {
                sweep.tau = v;
            }
            if span.is_some() {
                sweep.span = span;
            }
            run.cfg.validate()?;
            sweep_cmd(&run, axis, checkpoint.as_ref())
        }
        Command::Trace {
            common,
            checkpoint,
            index,
            layer,
        } => {
            let run = Run::prepare(&common)?;
            let data = run.data()?;
            let out = run.out_dir()?.to_path_buf();
            let (network, _) = checkpoint::load(&run.checkpoint_path(checkpoint.as_ref())?)?;
            if index >= data.test.len() {
                return Err(CliError::Config(format!(
                    "--index {index} out of range for {} test sequences",
                    data.test.len()
                )));
            }
            let (xs, _) = data.test.sample(index);
            let trace = trace_network_gates(&network, layer, xs, run.cfg.theta, index).map_err(config_error)?;
            fs::create_dir_all(&out)?;
            write_gate_trace_csv(out.join("gate_trace.csv"), &trace)?;
            println!(
                "{} steps x {} delays -> {}",
                trace.steps(),
                trace.num_delays(),
                out.join("gate_trace.csv").display()
            );
            Ok(())
        }
        Command::Hist {
            common,
            checkpoint,
            tensor,
            bins,
        } => {
            let run = Run::prepare(&common)?;
            let out = run.out_dir()?.to_path_buf();
            let (network, _) = checkpoint::load(&run.checkpoint_path(checkpoint.as_ref())?)?;
            let views = network.tensors();
            let Some(view) = views.iter().find(|t| t.name == tensor) else {
                let names: Vec<&str> = views.iter().map(|t| t.name.as_str()).collect();
                return Err(CliError::Config(format!(
                    "no tensor {tensor:?}; have {}",
                    names.join(", ")
                )));
            };
            let hist = weight_histogram(view.data, bins, &tensor).map_err(config_error)?;
            fs::create_dir_all(&out)?;
            write_histogram_csv(out.join("histogram.csv"), &hist)?;
            println!(
                "{} weights in {bins} bins -> {}",
                view.data.len(),
                out.join("histogram.csv").display()
            );
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?
    );
    Ok(())
}

/// Trains and writes the effective config, metrics, timings and checkpoint into `out`.
pub fn train_into(run: &Run, data: &TaskData, out: &Path, log: bool) -> Result<Network, CliError> {
    let train_cfg = run.cfg.train_config()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), run.cfg.to_toml())?;
    let metrics_path = out.join(METRICS_FILE);
    let timing_path = out.join(TIMING_FILE);
    fs::write(&metrics_path, "")?;
    fs::write(&timing_path, "")?;
    let mut metrics = MetricsWriter::append(&metrics_path)?.without_wall_clock();
    let mut timing = MetricsWriter::append(&timing_path)?;
    let outcome = train_with(&train_cfg, data, |record, _| {
        if log {
            eprintln!(
                "epoch {:>4}  loss {:.4}  train {:.4}  test {:.4}  {:.2}s",
                record.epoch, record.train_loss, record.train_accuracy, record.test_accuracy, record.wall_seconds
            );
        }
        metrics.write(record)?;
        timing.write(record)
    })?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), &outcome.network, run.echo())?;
    Ok(outcome.network)
}

fn gradcheck(run: &Run, corrupt: bool) -> Result<(), CliError> {
    let data = run.data()?;
    let gc = &run.cfg.gradcheck;
    let network = Network::new(run.cfg.topology()?, run.cfg.seed)?;
    let (xs, target) = data.train.sample(0);
    let steps = gc.length.min(xs.len());
    let xs = &xs[..steps];
    let target = match target {
        Target::PerStep(labels) => Target::PerStep(labels[..steps].to_vec()),
        other => other,
    };
    let mode = run.cfg.decode;
    let (_, mut grads) = network.loss_and_gradient(xs, &target, mode)?;
    if corrupt {
        *grads.scalar_mut(0).expect("network has parameters") += 1.0;
    }
    let report = grad_check(
        &network,
        &grads,
        |p: &Network| p.loss(xs, &target, mode).unwrap_or(f64::NAN),
        gc.epsilon,
        gc.tolerance,
    );
    for t in &report.tensors {
        println!("{:<20} {:>6}  max_rel_error {:.3e}", t.name, t.size, t.max_rel_error);
    }
    println!(
        "max_rel_error {:.3e} tolerance {:.1e} {}",
        report.max_rel_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime("gradient check failed".into()))
    }
}

/// Index of the first layer with a delay line.
fn delay_layer(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.layers
        .iter()
        .position(|l| l.kind.has_delay_line())
        .ok_or_else(|| CliError::Config("n and tau sweeps need a layer with a delay line".into()))
}

fn sweep_cmd(run: &Run, axis: Axis, checkpoint_flag: Option<&PathBuf>) -> Result<(), CliError> {
    let out = run.out_dir()?.to_path_buf();
    let sweep = &run.cfg.sweep;
    let data;
    let result = match axis {
        Axis::Theta => {
            if sweep.theta.is_empty() {
                return Err(CliError::Config(
                    "theta sweep needs values (sweep.theta or --thetas)".into(),
                ));
            }
            data = run.data()?;
            let path = run.checkpoint_path(checkpoint_flag)?;
            let network = if path.exists() {
                checkpoint::load(&path)?.0
            } else if checkpoint_flag.is_some() {
                return Err(CliError::Runtime(format!("checkpoint {} not found", path.display())));
            } else {
                train_into(run, &data, &out, true)?
            };
            threshold_sweep(&network, &data.test, run.cfg.decode, &sweep.theta)?
        }
        Axis::N | Axis::Tau => {
            let li = delay_layer(&run.cfg)?;
            let base = &run.cfg.layers[li];
            let points: Vec<(usize, usize)> = match axis {
                Axis::N => sweep.n.iter().map(|&n| (n, base.dilation)).collect(),
                _ => sweep
                    .tau
                    .iter()
                    .map(|&tau| (sweep.span.map_or(base.delays, |s| s / tau), tau))
                    .collect(),
            };
            if points.is_empty() {
                return Err(CliError::Config(
                    "sweep needs values (sweep.n / sweep.tau or --ns / --taus)".into(),
                ));
            }
            let configs = points
                .iter()
                .map(|&(n, tau)| {
                    let mut cfg = run.cfg.clone();
                    cfg.layers[li].delays = n;
                    cfg.layers[li].dilation = tau;
                    cfg.validate().map(|_| cfg)
                })
                .collect::<Result<Vec<_>, _>>()?;
            data = run.data()?;
            let mut result = SweepResult::default();
            for (cfg, &(n, tau)) in configs.iter().zip(&points) {
                eprintln!("sweep point n={n} tau={tau}");
                let outcome = dmu_core::train(&cfg.train_config()?, &data)?;
                let eval = evaluate(&outcome.network, &data.test, cfg.decode, cfg.theta)?;
                result.push_span(n, tau, eval.accuracy, eval.mean_open_gates);
            }
            result
        }
    };
    fs::create_dir_all(&out)?;
    write_sweep_csv(out.join("sweep.csv"), &result)?;
    for row in &result.rows {
        println!(
            "{:<12} accuracy {:.4}  open_gates {:.3}",
            row.label, row.accuracy, row.open_gates
        );
    }
    Ok(())
}
