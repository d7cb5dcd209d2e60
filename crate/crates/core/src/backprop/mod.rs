//! Reverse-mode backpropagation through time.
//!
//! The forward pass records one [`StepCache`] per step. The backward pass
//! walks the steps in reverse and routes gradient along four paths:
//!
//! * the recurrent path `hₜ₋₁ → h̃ₜ` (and `cₜ₋₁ → cₜ` for LSTM inner cells),
//! * the delay-line path `h̃ᵢ → hᵢ₊ₖτ`, weighted by the deposited gate `dᵢ[k]`,
//! * the gate path `hᵢ₊ₖτ → dᵢ[k] → aᵢ` through the softmax Jacobian,
//! * the delay hidden state recurrence `hᵈₜ₋₁ → aₜ`.
//!
//! Because every `hᵢ₊ₖτ` lies in the future of step `i`, its total gradient
//! is already known when step `i` is processed.

pub mod gradcheck;
pub mod loss;

use crate::cells::{Affine, CandidateStep, DmuConfig, LayerParams, StepOutputs};
use crate::error::{Error, Result};
use crate::numerics::{elementwise_derivative, Vector};
use crate::params::Parameters;

pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use loss::{per_step_loss, regression_loss, sequence_loss, DecodeMode, ReadoutLoss};

/// Parameter-shaped gradient accumulator.
pub type GradientSet = LayerParams;

/// What one forward step leaves behind for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub h_d_prev: Vector,
    pub candidate: CandidateStep,
    pub outputs: StepOutputs,
}

/// Forward record of one sequence through one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceCache {
    pub cfg: DmuConfig,
    pub steps: Vec<StepCache>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Hidden outputs `h₁..h_T`.
    pub fn outputs(&self) -> Vec<Vector> {
        self.steps.iter().map(|s| s.outputs.h.clone()).collect()
    }

    /// Deposited gate vectors, one per step.
    pub fn gates(&self) -> Vec<Vector> {
        self.steps.iter().map(|s| s.outputs.applied_gates.clone()).collect()
    }

    /// Window column that tap `k` (1-indexed) of every step deposits into.
    pub fn deposit_slot(&self, k: usize) -> usize {
        k * self.cfg.dilation
    }
}

/// Runs a layer over `inputs` from a fresh state, recording every step.
pub fn forward_cache_sequence(
    params: &LayerParams,
    cfg: &DmuConfig,
    inputs: &[Vector],
) -> Result<(Vec<Vector>, SequenceCache)> {
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("sequence must have at least one step".into()));
    }
    params.check(cfg)?;
    if let Some((t, x)) = inputs.iter().enumerate().find(|(_, x)| x.len() != cfg.input_dim) {
        return Err(Error::shape(
            "forward_cache_sequence",
            format!("inputs of length {}", cfg.input_dim),
            format!("length {} at step {t}", x.len()),
        ));
    }
    let cache = forward_unchecked(params, cfg, inputs);
    Ok((cache.outputs(), cache))
}

pub(crate) fn forward_unchecked(params: &LayerParams, cfg: &DmuConfig, inputs: &[Vector]) -> SequenceCache {
    let mut state = params.initial_state(cfg);
    let steps = inputs
        .iter()
        .map(|x| {
            let h_prev = state.h.clone();
            let c_prev = state.c.clone();
            let h_d_prev = state.h_d.clone();
            let (outputs, candidate) = params.step_with_internals(cfg, &mut state, x);
            StepCache {
                x: x.clone(),
                h_prev,
                c_prev,
                h_d_prev,
                candidate,
                outputs,
            }
        })
        .collect();
    SequenceCache { cfg: *cfg, steps }
}

/// Gradients of one layer: parameters plus the loss gradient on each input.
#[derive(Clone, Debug)]
pub struct LayerGradients {
    pub params: GradientSet,
    pub inputs: Vec<Vector>,
}

/// Exact parameter gradients given `∂L/∂hₜ` for every step.
pub fn dmu_backward_sequence(
    params: &LayerParams,
    cfg: &DmuConfig,
    cache: &SequenceCache,
    dl_dh: &[Vector],
) -> Result<GradientSet> {
    Ok(backward_sequence(params, cfg, cache, dl_dh)?.params)
}

/// Like [`dmu_backward_sequence`] but also returns input gradients, which a
/// stacked network feeds to the layer below.
pub fn backward_sequence(
    params: &LayerParams,
    cfg: &DmuConfig,
    cache: &SequenceCache,
    dl_dh: &[Vector],
) -> Result<LayerGradients> {
    if dl_dh.len() != cache.len() {
        return Err(Error::shape(
            "backward_sequence",
            format!("{} step gradients", cache.len()),
            format!("{}", dl_dh.len()),
        ));
    }
    if let Some(g) = dl_dh.iter().find(|g| g.len() != cfg.hidden_dim) {
        return Err(Error::shape(
            "backward_sequence",
            format!("gradients of length {}", cfg.hidden_dim),
            format!("length {}", g.len()),
        ));
    }
    Ok(backward_unchecked(params, cfg, cache, dl_dh))
}

pub(crate) fn backward_unchecked(
    params: &LayerParams,
    cfg: &DmuConfig,
    cache: &SequenceCache,
    dl_dh: &[Vector],
) -> LayerGradients {
    let steps = &cache.steps;
    let t_len = steps.len();
    let n_hidden = cfg.hidden_dim;
    let n = if params.delay().is_some() { cfg.num_delays } else { 0 };
    let tau = cfg.dilation;
    let theta = cfg.gate_threshold;

    let mut grads = params.zeros_like();
    let mut dx = vec![Vector::default(); t_len];
    let mut gh_total: Vec<Vector> = vec![Vector::default(); t_len];

    let mut g_rec_h = Vector::zeros(n_hidden);
    let mut g_aux = Vector::zeros(params.aux_dim());
    let mut g_hd = Vector::zeros(n);

    for t in (0..t_len).rev() {
        let step = &steps[t];
        let mut gh = dl_dh[t].clone();
        gh.add_assign(&g_rec_h);

        let mut g_cand = gh.clone();
        let mut gx = Vector::zeros(step.x.len());

        if n > 0 {
            let out = &step.outputs;
            let h_tilde = &out.h_tilde;
            let mut g_gate = Vector::zeros(n);
            for k in 1..=n {
                let s = t + k * tau;
                if s >= t_len {
                    break;
                }
                let w = out.applied_gates[k - 1];
                if w != 0.0 {
                    g_cand.axpy(w, &gh_total[s]);
                }
                let kept = theta == 0.0 || out.gates[k - 1] >= theta;
                if kept {
                    g_gate[k - 1] = gh_total[s].dot(h_tilde);
                }
            }

            // Softmax Jacobian: ∂L/∂a_j = d_j (g_j − Σ_k d_k g_k).
            let d = &out.gates;
            let mean = d.dot(&g_gate);
            let mut g_pre: Vector = (0..n).map(|j| d[j] * (g_gate[j] - mean)).collect();
            // Delay hidden state hᵈₜ = σ_g(aₜ) feeds aₜ₊₁.
            for j in 0..n {
                let a = out.gate_preact[j];
                let y = crate::numerics::activate(cfg.activation, &[a])[0];
                g_pre[j] += g_hd[j] * elementwise_derivative(cfg.activation, a, y);
            }

            let delay = params.delay().expect("delay group present");
            let delay_grads = grads.delay_mut().expect("delay group present");
            let mut g_hd_prev = Vector::zeros(n);
            delay.backward(delay_grads, &g_pre, &step.x, &step.h_d_prev, &mut gx, &mut g_hd_prev);
            g_hd = g_hd_prev;
        }

        let (gx_inner, gh_prev, gc_prev) = inner_backward(params, &mut grads, cfg, step, &g_cand, &g_aux);
        gx.add_assign(&gx_inner);
        dx[t] = gx;
        gh_total[t] = gh;
        g_rec_h = gh_prev;
        g_aux = gc_prev;
    }

    LayerGradients {
        params: grads,
        inputs: dx,
    }
}

fn inner_backward(
    params: &LayerParams,
    grads: &mut LayerParams,
    cfg: &DmuConfig,
    step: &StepCache,
    g_cand: &[f64],
    g_aux: &[f64],
) -> (Vector, Vector, Vector) {
    match (params, grads) {
        (LayerParams::Dmu(p), LayerParams::Dmu(g)) => rnn_backward(&p.hidden, &mut g.hidden, cfg, step, g_cand),
        (LayerParams::Baseline(p), LayerParams::Baseline(g)) => p.candidate_backward(
            g,
            cfg.activation,
            &step.candidate,
            &step.x,
            &step.h_prev,
            &step.c_prev,
            g_cand,
            g_aux,
        ),
        (LayerParams::Augmented(p), LayerParams::Augmented(g)) => p.inner.candidate_backward(
            &mut g.inner,
            cfg.activation,
            &step.candidate,
            &step.x,
            &step.h_prev,
            &step.c_prev,
            g_cand,
            g_aux,
        ),
        _ => unreachable!("gradient structure does not match parameters"),
    }
}

fn rnn_backward(
    hidden: &Affine,
    grads: &mut Affine,
    cfg: &DmuConfig,
    step: &StepCache,
    g_cand: &[f64],
) -> (Vector, Vector, Vector) {
    let gz =
        crate::cells::baseline::rnn_preact_grad(cfg.activation, &step.candidate.cache, &step.candidate.h_tilde, g_cand);
    let mut gx = Vector::zeros(step.x.len());
    let mut gh = Vector::zeros(step.h_prev.len());
    hidden.backward(grads, &gz, &step.x, &step.h_prev, &mut gx, &mut gh);
    (gx, gh, Vector::default())
}
