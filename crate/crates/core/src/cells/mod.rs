//! Forward passes of the Delayed Memory Unit and the baseline cells.
//!
//! A DMU step computes a candidate state `h̃ₜ = σ_g(W_h xₜ + U_h hₜ₋₁ + b_h)`,
//! a delay gate `dₜ = softmax(aₜ)` with `aₜ = W_d xₜ + U_d hᵈₜ₋₁ + b_d`, and a
//! delay hidden state `hᵈₜ = σ_g(aₜ)` from the same pre-activation. The gate
//! distributes `h̃ₜ` over `n` taps of a delay line: tap `k` delivers
//! `dₜ[k]·h̃ₜ` to step `t + k·τ`. The output is `hₜ = h̃ₜ + (arrivals at t)`.
//!
//! The gate is a length-`n` vector shared by all `N` hidden channels.

pub mod baseline;
mod delay_line;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use baseline::{baseline_step, Affine, BaselineKind, BaselineParams, BaselineState, CandidateCache, CandidateStep};
pub use delay_line::DelayLine;

use crate::error::{Error, Result};
use crate::numerics::{activate, softmax, Activation, SeededRng, Vector};
use crate::params::{Parameters, TensorView};

/// Shape and behaviour of one delay-line layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmuConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of taps `n`; zero turns the layer into its inner cell.
    pub num_delays: usize,
    /// Spacing `τ` between consecutive taps, in steps.
    pub dilation: usize,
    /// Inference-time gate threshold `θ`; zero disables thresholding.
    pub gate_threshold: f64,
    /// Activation σ_g of the candidate and of the delay hidden state.
    pub activation: Activation,
}

impl DmuConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, num_delays: usize) -> Self {
        DmuConfig {
            input_dim,
            hidden_dim,
            num_delays,
            dilation: 1,
            gate_threshold: 0.0,
            activation: Activation::Tanh,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_threshold(mut self, theta: f64) -> Self {
        self.gate_threshold = theta;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Number of delay-line columns, `n·τ`.
    pub fn window_slots(&self) -> usize {
        self.num_delays * self.dilation
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "input and hidden dims must be positive (got {} and {})",
                self.input_dim, self.hidden_dim
            )));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidConfig("dilation must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(Error::InvalidThreshold(self.gate_threshold));
        }
        match self.activation {
            Activation::Tanh | Activation::Relu => Ok(()),
            other => Err(Error::InvalidConfig(format!(
                "candidate activation must be tanh or relu, got {other:?}"
            ))),
        }
    }
}

/// Learnable weights of a DMU cell.
///
/// `hidden` holds `(W_h: N×M, U_h: N×N, b_h: N)`. `delay` holds
/// `(W_d: n×M, U_d: n×n, b_d: n)` and feeds both the gate (through softmax)
/// and the delay hidden state (through σ_g).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub hidden: Affine,
    pub delay: Affine,
}

impl CellParams {
    pub fn zeros(cfg: &DmuConfig) -> Self {
        CellParams {
            hidden: Affine::zeros(cfg.hidden_dim, cfg.input_dim, cfg.hidden_dim),
            delay: Affine::zeros(cfg.num_delays, cfg.input_dim, cfg.num_delays),
        }
    }

    pub fn kaiming(cfg: &DmuConfig, rng: &mut SeededRng) -> Self {
        CellParams {
            hidden: Affine::kaiming(rng, cfg.hidden_dim, cfg.input_dim, cfg.hidden_dim),
            delay: Affine::kaiming(rng, cfg.num_delays, cfg.input_dim, cfg.num_delays),
        }
    }

    /// The vanilla RNN that shares this cell's hidden group.
    pub fn as_rnn(&self) -> BaselineParams {
        BaselineParams::Rnn {
            hidden: self.hidden.clone(),
        }
    }
}

impl Parameters for CellParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        self.hidden.push_tensors("", "h", &mut out);
        self.delay.push_tensors("", "d", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.hidden.push_tensors_mut(&mut out);
        self.delay.push_tensors_mut(&mut out);
        out
    }
}

/// A gated baseline cell (LSTM, GRU or IndRNN) with a DMU delay line bolted
/// onto its hidden output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayAugmentedParams {
    pub inner: BaselineParams,
    pub delay: Affine,
}

impl DelayAugmentedParams {
    pub fn zeros(inner: BaselineKind, cfg: &DmuConfig) -> Result<Self> {
        check_augmentable(inner)?;
        Ok(DelayAugmentedParams {
            inner: BaselineParams::zeros(inner, cfg.input_dim, cfg.hidden_dim),
            delay: Affine::zeros(cfg.num_delays, cfg.input_dim, cfg.num_delays),
        })
    }

    pub fn kaiming(inner: BaselineKind, cfg: &DmuConfig, rng: &mut SeededRng) -> Result<Self> {
        check_augmentable(inner)?;
        let inner = BaselineParams::kaiming(inner, cfg.input_dim, cfg.hidden_dim, rng);
        let delay = Affine::kaiming(rng, cfg.num_delays, cfg.input_dim, cfg.num_delays);
        Ok(DelayAugmentedParams { inner, delay })
    }
}

fn check_augmentable(kind: BaselineKind) -> Result<()> {
    if kind == BaselineKind::Rnn {
        return Err(Error::InvalidConfig(
            "a delay-augmented RNN is the DMU itself; use CellParams".into(),
        ));
    }
    Ok(())
}

impl Parameters for DelayAugmentedParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = self.inner.tensors();
        self.delay.push_tensors("", "d", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.inner.tensors_mut();
        self.delay.push_tensors_mut(&mut out);
        out
    }
}

/// Carried state of a delay-line layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmuState {
    pub h: Vector,
    /// LSTM cell memory when the inner cell is an LSTM; empty otherwise.
    pub c: Vector,
    pub h_d: Vector,
    pub window: DelayLine,
    pub step: usize,
}

impl DmuState {
    pub fn zeros(cfg: &DmuConfig, aux_dim: usize) -> Self {
        DmuState {
            h: Vector::zeros(cfg.hidden_dim),
            c: Vector::zeros(aux_dim),
            h_d: Vector::zeros(cfg.num_delays),
            window: DelayLine::new(cfg.window_slots(), cfg.hidden_dim),
            step: 0,
        }
    }

    pub fn for_augmented(params: &DelayAugmentedParams, cfg: &DmuConfig) -> Self {
        DmuState::zeros(cfg, params.inner.aux_dim())
    }
}

/// Zero state for a DMU cell; the window starts empty.
pub fn reset_state(cfg: &DmuConfig) -> DmuState {
    DmuState::zeros(cfg, 0)
}

/// Everything a DMU-style step produces.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutputs {
    pub h: Vector,
    pub h_tilde: Vector,
    /// Softmax gate before thresholding.
    pub gates: Vector,
    /// Gate actually used for deposits (equal to `gates` when θ = 0).
    pub applied_gates: Vector,
    pub gate_preact: Vector,
    pub arrivals: Vector,
    pub open_count: usize,
}

/// Zeroes gate entries below `theta`; returns the gated vector and how many
/// entries remain nonzero.
pub fn apply_gate_threshold(d: &[f64], theta: f64) -> (Vector, usize) {
    let gated: Vector = d.iter().map(|&v| if v >= theta { v } else { 0.0 }).collect();
    let open = gated.iter().filter(|&&v| v != 0.0).count();
    (gated, open)
}

pub fn dmu_step(params: &CellParams, cfg: &DmuConfig, state: &mut DmuState, x: &[f64]) -> Result<StepOutputs> {
    check_layer(cfg, &params.hidden.w, &params.delay, state, x, 0)?;
    Ok(layer_step(Inner::Rnn(&params.hidden), &params.delay, cfg, state, x).0)
}

pub fn delay_augment_step(
    params: &DelayAugmentedParams,
    cfg: &DmuConfig,
    state: &mut DmuState,
    x: &[f64],
) -> Result<StepOutputs> {
    if params.inner.input_dim() != cfg.input_dim || params.inner.hidden_dim() != cfg.hidden_dim {
        return Err(Error::shape(
            "delay_augment_step",
            format!("inner cell {}→{}", cfg.input_dim, cfg.hidden_dim),
            format!("{}→{}", params.inner.input_dim(), params.inner.hidden_dim()),
        ));
    }
    let w = match &params.inner {
        BaselineParams::Rnn { hidden } => &hidden.w,
        BaselineParams::Lstm { input, .. } => &input.w,
        BaselineParams::Gru { update, .. } => &update.w,
        BaselineParams::IndRnn { w, .. } => w,
    };
    check_layer(cfg, w, &params.delay, state, x, params.inner.aux_dim())?;
    Ok(layer_step(Inner::Baseline(&params.inner), &params.delay, cfg, state, x).0)
}

fn check_layer(
    cfg: &DmuConfig,
    w_h: &crate::numerics::Matrix,
    delay: &Affine,
    state: &DmuState,
    x: &[f64],
    aux_dim: usize,
) -> Result<()> {
    cfg.validate()?;
    if w_h.shape() != (cfg.hidden_dim, cfg.input_dim) {
        return Err(Error::shape(
            "cell weights",
            format!("{}×{}", cfg.hidden_dim, cfg.input_dim),
            format!("{}×{}", w_h.rows(), w_h.cols()),
        ));
    }
    let n = cfg.num_delays;
    if delay.w.shape() != (n, cfg.input_dim) || delay.u.shape() != (n, n) || delay.b.len() != n {
        return Err(Error::shape(
            "delay gate weights",
            format!("W_d {n}×{}, U_d {n}×{n}, b_d {n}", cfg.input_dim),
            format!(
                "W_d {}×{}, U_d {}×{}, b_d {}",
                delay.w.rows(),
                delay.w.cols(),
                delay.u.rows(),
                delay.u.cols(),
                delay.b.len()
            ),
        ));
    }
    if x.len() != cfg.input_dim {
        return Err(Error::shape(
            "cell step input",
            format!("length {}", cfg.input_dim),
            format!("length {}", x.len()),
        ));
    }
    if state.h.len() != cfg.hidden_dim
        || state.h_d.len() != n
        || state.c.len() != aux_dim
        || state.window.slots() != cfg.window_slots()
        || state.window.hidden() != cfg.hidden_dim
    {
        return Err(Error::shape(
            "cell state",
            format!("state built for {cfg:?}"),
            format!(
                "h {}, h_d {}, c {}, window {}×{}",
                state.h.len(),
                state.h_d.len(),
                state.c.len(),
                state.window.slots(),
                state.window.hidden()
            ),
        ));
    }
    Ok(())
}

/// The candidate-producing part of a layer.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Inner<'a> {
    Rnn(&'a Affine),
    Baseline(&'a BaselineParams),
}

impl Inner<'_> {
    pub(crate) fn candidate(&self, act: Activation, x: &[f64], h: &[f64], c: &[f64]) -> CandidateStep {
        match self {
            Inner::Rnn(a) => baseline::rnn_candidate(a, act, x, h),
            Inner::Baseline(p) => p.candidate(act, x, h, c),
        }
    }
}

/// One unchecked layer step. Returns the outputs and the candidate's
/// internals for reverse mode.
pub(crate) fn layer_step(
    inner: Inner<'_>,
    delay: &Affine,
    cfg: &DmuConfig,
    state: &mut DmuState,
    x: &[f64],
) -> (StepOutputs, CandidateStep) {
    let cand = inner.candidate(cfg.activation, x, &state.h, &state.c);
    let n = cfg.num_delays;

    let (h, gates, applied, preact, arrivals, open_count) = if n == 0 {
        (
            cand.h_tilde.clone(),
            Vector::default(),
            Vector::default(),
            Vector::default(),
            Vector::zeros(cfg.hidden_dim),
            0,
        )
    } else {
        let preact = delay.preactivation(x, &state.h_d);
        let gates = softmax(&preact);
        let (applied, open) = if cfg.gate_threshold > 0.0 {
            apply_gate_threshold(&gates, cfg.gate_threshold)
        } else {
            gate_telemetry::record(&gates);
            let open = gates.iter().filter(|&&v| v != 0.0).count();
            (gates.clone(), open)
        };
        state.h_d = activate(cfg.activation, &preact);

        let arrivals = state.window.advance();
        for (k, &g) in applied.iter().enumerate() {
            if g != 0.0 {
                state.window.deposit((k + 1) * cfg.dilation, g, &cand.h_tilde);
            }
        }
        let mut h = cand.h_tilde.clone();
        h.add_assign(&arrivals);
        (h, gates, applied, preact, arrivals, open)
    };

    state.h = h.clone();
    state.c = cand.aux.clone();
    state.step += 1;
    (
        StepOutputs {
            h,
            h_tilde: cand.h_tilde.clone(),
            gates,
            applied_gates: applied,
            gate_preact: preact,
            arrivals,
            open_count,
        },
        cand,
    )
}

/// Parameters of any recurrent layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "lowercase")]
pub enum LayerParams {
    Dmu(CellParams),
    Baseline(BaselineParams),
    Augmented(DelayAugmentedParams),
}

impl LayerParams {
    /// Kaiming-initialized parameters for `kind` shaped by `cfg`.
    pub fn kaiming(kind: CellKind, cfg: &DmuConfig, rng: &mut SeededRng) -> Result<Self> {
        Ok(match kind {
            CellKind::Dmu => LayerParams::Dmu(CellParams::kaiming(cfg, rng)),
            k if k.has_delay_line() => LayerParams::Augmented(DelayAugmentedParams::kaiming(k.base(), cfg, rng)?),
            k => LayerParams::Baseline(BaselineParams::kaiming(k.base(), cfg.input_dim, cfg.hidden_dim, rng)),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            LayerParams::Dmu(_) => CellKind::Dmu,
            LayerParams::Baseline(p) => match p.kind() {
                BaselineKind::Rnn => CellKind::Rnn,
                BaselineKind::Lstm => CellKind::Lstm,
                BaselineKind::Gru => CellKind::Gru,
                BaselineKind::IndRnn => CellKind::IndRnn,
            },
            LayerParams::Augmented(p) => match p.inner.kind() {
                BaselineKind::Rnn => CellKind::Dmu,
                BaselineKind::Lstm => CellKind::DmuLstm,
                BaselineKind::Gru => CellKind::DmuGru,
                BaselineKind::IndRnn => CellKind::DmuIndRnn,
            },
        }
    }

    pub(crate) fn inner(&self) -> Inner<'_> {
        match self {
            LayerParams::Dmu(p) => Inner::Rnn(&p.hidden),
            LayerParams::Baseline(p) => Inner::Baseline(p),
            LayerParams::Augmented(p) => Inner::Baseline(&p.inner),
        }
    }

    /// The delay-gate group, if the layer has one.
    pub fn delay(&self) -> Option<&Affine> {
        match self {
            LayerParams::Dmu(p) => Some(&p.delay),
            LayerParams::Baseline(_) => None,
            LayerParams::Augmented(p) => Some(&p.delay),
        }
    }

    pub fn delay_mut(&mut self) -> Option<&mut Affine> {
        match self {
            LayerParams::Dmu(p) => Some(&mut p.delay),
            LayerParams::Baseline(_) => None,
            LayerParams::Augmented(p) => Some(&mut p.delay),
        }
    }

    pub fn aux_dim(&self) -> usize {
        match self {
            LayerParams::Dmu(_) => 0,
            LayerParams::Baseline(p) => p.aux_dim(),
            LayerParams::Augmented(p) => p.inner.aux_dim(),
        }
    }

    /// Feedforward weight of the candidate path, used for shape checks.
    fn candidate_input_weight(&self) -> &crate::numerics::Matrix {
        let base = match self {
            LayerParams::Dmu(p) => return &p.hidden.w,
            LayerParams::Baseline(p) => p,
            LayerParams::Augmented(p) => &p.inner,
        };
        match base {
            BaselineParams::Rnn { hidden } => &hidden.w,
            BaselineParams::Lstm { input, .. } => &input.w,
            BaselineParams::Gru { update, .. } => &update.w,
            BaselineParams::IndRnn { w, .. } => w,
        }
    }

    /// Validates `cfg`, the parameter shapes and a fresh state against each other.
    pub fn check(&self, cfg: &DmuConfig) -> Result<()> {
        let empty;
        let delay = match self.delay() {
            Some(d) => d,
            None => {
                if cfg.num_delays != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{:?} layer has no delay line but the config asks for {} taps",
                        self.kind(),
                        cfg.num_delays
                    )));
                }
                empty = Affine::zeros(0, cfg.input_dim, 0);
                &empty
            }
        };
        let state = self.initial_state(cfg);
        check_layer(
            cfg,
            self.candidate_input_weight(),
            delay,
            &state,
            &vec![0.0; cfg.input_dim],
            self.aux_dim(),
        )
    }

    pub fn initial_state(&self, cfg: &DmuConfig) -> DmuState {
        DmuState::zeros(cfg, self.aux_dim())
    }

    /// One step of any layer kind.
    pub fn step(&self, cfg: &DmuConfig, state: &mut DmuState, x: &[f64]) -> StepOutputs {
        self.step_with_internals(cfg, state, x).0
    }

    pub(crate) fn step_with_internals(
        &self,
        cfg: &DmuConfig,
        state: &mut DmuState,
        x: &[f64],
    ) -> (StepOutputs, CandidateStep) {
        match self.delay() {
            Some(d) => layer_step(self.inner(), d, cfg, state, x),
            None => {
                let empty = Affine::zeros(0, cfg.input_dim, 0);
                let cfg = DmuConfig { num_delays: 0, ..*cfg };
                layer_step(self.inner(), &empty, &cfg, state, x)
            }
        }
    }
}

impl Parameters for LayerParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            LayerParams::Dmu(p) => p.tensors(),
            LayerParams::Baseline(p) => p.tensors(),
            LayerParams::Augmented(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Dmu(p) => p.tensors_mut(),
            LayerParams::Baseline(p) => p.tensors_mut(),
            LayerParams::Augmented(p) => p.tensors_mut(),
        }
    }
}

/// Every kind of recurrent layer the toolkit builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "gru")]
    Gru,
    #[serde(rename = "indrnn")]
    IndRnn,
    #[serde(rename = "dmu")]
    Dmu,
    #[serde(rename = "dmu_lstm")]
    DmuLstm,
    #[serde(rename = "dmu_gru")]
    DmuGru,
    #[serde(rename = "dmu_indrnn")]
    DmuIndRnn,
}

impl CellKind {
    pub const ALL: [CellKind; 8] = [
        CellKind::Rnn,
        CellKind::Lstm,
        CellKind::Gru,
        CellKind::IndRnn,
        CellKind::Dmu,
        CellKind::DmuLstm,
        CellKind::DmuGru,
        CellKind::DmuIndRnn,
    ];

    /// The cell producing the candidate state.
    pub fn base(self) -> BaselineKind {
        match self {
            CellKind::Rnn | CellKind::Dmu => BaselineKind::Rnn,
            CellKind::Lstm | CellKind::DmuLstm => BaselineKind::Lstm,
            CellKind::Gru | CellKind::DmuGru => BaselineKind::Gru,
            CellKind::IndRnn | CellKind::DmuIndRnn => BaselineKind::IndRnn,
        }
    }

    pub fn has_delay_line(self) -> bool {
        matches!(
            self,
            CellKind::Dmu | CellKind::DmuLstm | CellKind::DmuGru | CellKind::DmuIndRnn
        )
    }
}

/// Closed-form parameter count for a layer with input `m`, hidden `n_hidden`
/// and `n_delays` taps (ignored for kinds without a delay line).
pub fn count_params(kind: CellKind, m: usize, n_hidden: usize, n_delays: usize) -> usize {
    let rnn = n_hidden * n_hidden + m * n_hidden + n_hidden;
    let base = match kind.base() {
        BaselineKind::Rnn => rnn,
        BaselineKind::Lstm => 4 * rnn,
        BaselineKind::Gru => 3 * rnn,
        BaselineKind::IndRnn => m * n_hidden + 2 * n_hidden,
    };
    let delay = if kind.has_delay_line() {
        m * n_delays + n_delays * n_delays + n_delays
    } else {
        0
    };
    base + delay
}

/// Process-wide record of how far pre-threshold gate vectors stray from
/// summing to one. Every unthresholded delay-line step reports here.
pub mod gate_telemetry {
    use super::*;

    static STEPS: AtomicU64 = AtomicU64::new(0);
    static MAX_DEVIATION_BITS: AtomicU64 = AtomicU64::new(0);

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct GateSumStats {
        pub steps: u64,
        pub max_deviation: f64,
    }

    pub(crate) fn record(gates: &[f64]) {
        let dev = (gates.iter().sum::<f64>() - 1.0).abs();
        STEPS.fetch_add(1, Ordering::Relaxed);
        // Non-negative (or NaN) f64 bit patterns order like unsigned integers.
        let bits = if dev.is_nan() {
            f64::INFINITY.to_bits()
        } else {
            dev.to_bits()
        };
        MAX_DEVIATION_BITS.fetch_max(bits, Ordering::Relaxed);
    }

    pub fn snapshot() -> GateSumStats {
        GateSumStats {
            steps: STEPS.load(Ordering::Relaxed),
            max_deviation: f64::from_bits(MAX_DEVIATION_BITS.load(Ordering::Relaxed)),
        }
    }
}
