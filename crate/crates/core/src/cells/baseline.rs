//! Baseline recurrent cells: vanilla RNN, LSTM, GRU and IndRNN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    elementwise_derivative, init_kaiming, init_kaiming_vector, sigmoid, Activation, Matrix, SeededRng, Vector,
};
use crate::params::{Parameters, TensorView};

/// One affine map of an input and a recurrent state: `w·x + u·h + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

impl Affine {
    pub fn zeros(out: usize, input: usize, recurrent: usize) -> Self {
        Affine {
            w: Matrix::zeros(out, input),
            u: Matrix::zeros(out, recurrent),
            b: Vector::zeros(out),
        }
    }

    /// Kaiming-normal weights; the bias uses the recurrent fan-in.
    pub fn kaiming(rng: &mut SeededRng, out: usize, input: usize, recurrent: usize) -> Self {
        Affine {
            w: init_kaiming(rng, out, input, input),
            u: init_kaiming(rng, out, recurrent, recurrent),
            b: init_kaiming_vector(rng, out, recurrent.max(1)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.b.len()
    }

    pub fn preactivation(&self, x: &[f64], h: &[f64]) -> Vector {
        let mut z = self.b.clone();
        self.w.mul_vec_acc(x, &mut z);
        self.u.mul_vec_acc(h, &mut z);
        z
    }

    /// Accumulates parameter gradients for upstream `g` and returns nothing;
    /// input and recurrent gradients are added into `gx` / `gh`.
    pub(crate) fn backward(&self, grads: &mut Affine, g: &[f64], x: &[f64], h: &[f64], gx: &mut [f64], gh: &mut [f64]) {
        grads.w.add_outer(g, x);
        grads.u.add_outer(g, h);
        grads.b.add_assign(g);
        self.w.mul_vec_t_acc(g, gx);
        self.u.mul_vec_t_acc(g, gh);
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, suffix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: format!("{prefix}w_{suffix}"),
            rows: self.w.rows(),
            cols: self.w.cols(),
            data: self.w.as_slice(),
        });
        out.push(TensorView {
            name: format!("{prefix}u_{suffix}"),
            rows: self.u.rows(),
            cols: self.u.cols(),
            data: self.u.as_slice(),
        });
        out.push(TensorView {
            name: format!("{prefix}b_{suffix}"),
            rows: self.b.len(),
            cols: 1,
            data: &self.b,
        });
    }

    pub(crate) fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w.as_mut_slice());
        out.push(self.u.as_mut_slice());
        out.push(&mut self.b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Rnn,
    Lstm,
    Gru,
    IndRnn,
}

/// Weights of a baseline cell.
///
/// LSTM and GRU gates always use the logistic sigmoid with tanh on the cell
/// path; RNN and IndRNN apply the layer's configured activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineParams {
    Rnn {
        hidden: Affine,
    },
    Lstm {
        input: Affine,
        forget: Affine,
        output: Affine,
        cell: Affine,
    },
    Gru {
        update: Affine,
        reset: Affine,
        candidate: Affine,
    },
    IndRnn {
        w: Matrix,
        u: Vector,
        b: Vector,
    },
}

impl BaselineParams {
    pub fn zeros(kind: BaselineKind, input: usize, hidden: usize) -> Self {
        let a = || Affine::zeros(hidden, input, hidden);
        match kind {
            BaselineKind::Rnn => BaselineParams::Rnn { hidden: a() },
            BaselineKind::Lstm => BaselineParams::Lstm {
                input: a(),
                forget: a(),
                output: a(),
                cell: a(),
            },
            BaselineKind::Gru => BaselineParams::Gru {
                update: a(),
                reset: a(),
                candidate: a(),
            },
            BaselineKind::IndRnn => BaselineParams::IndRnn {
                w: Matrix::zeros(hidden, input),
                u: Vector::zeros(hidden),
                b: Vector::zeros(hidden),
            },
        }
    }

    pub fn kaiming(kind: BaselineKind, input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut a = || Affine::kaiming(rng, hidden, input, hidden);
        match kind {
            BaselineKind::Rnn => BaselineParams::Rnn { hidden: a() },
            BaselineKind::Lstm => BaselineParams::Lstm {
                input: a(),
                forget: a(),
                output: a(),
                cell: a(),
            },
            BaselineKind::Gru => BaselineParams::Gru {
                update: a(),
                reset: a(),
                candidate: a(),
            },
            BaselineKind::IndRnn => BaselineParams::IndRnn {
                w: init_kaiming(rng, hidden, input, input),
                u: init_kaiming_vector(rng, hidden, hidden),
                b: init_kaiming_vector(rng, hidden, hidden),
            },
        }
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineParams::Rnn { .. } => BaselineKind::Rnn,
            BaselineParams::Lstm { .. } => BaselineKind::Lstm,
            BaselineParams::Gru { .. } => BaselineKind::Gru,
            BaselineParams::IndRnn { .. } => BaselineKind::IndRnn,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BaselineParams::Rnn { hidden } => hidden.w.cols(),
            BaselineParams::Lstm { input, .. } => input.w.cols(),
            BaselineParams::Gru { update, .. } => update.w.cols(),
            BaselineParams::IndRnn { w, .. } => w.cols(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            BaselineParams::Rnn { hidden } => hidden.out_dim(),
            BaselineParams::Lstm { input, .. } => input.out_dim(),
            BaselineParams::Gru { update, .. } => update.out_dim(),
            BaselineParams::IndRnn { b, .. } => b.len(),
        }
    }

    /// Length of the auxiliary carried state (the LSTM cell), zero otherwise.
    pub fn aux_dim(&self) -> usize {
        match self {
            BaselineParams::Lstm { .. } => self.hidden_dim(),
            _ => 0,
        }
    }

    pub(crate) fn candidate(&self, activation: Activation, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CandidateStep {
        match self {
            BaselineParams::Rnn { hidden } => rnn_candidate(hidden, activation, x, h_prev),
            BaselineParams::Lstm {
                input,
                forget,
                output,
                cell,
            } => {
                let i = sigmoid_vec(&input.preactivation(x, h_prev));
                let f = sigmoid_vec(&forget.preactivation(x, h_prev));
                let o = sigmoid_vec(&output.preactivation(x, h_prev));
                let g: Vector = cell.preactivation(x, h_prev).iter().map(|v| v.tanh()).collect();
                let c: Vector = (0..g.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
                let tanh_c: Vector = c.iter().map(|v| v.tanh()).collect();
                let h = o.hadamard(&tanh_c);
                CandidateStep {
                    h_tilde: h,
                    aux: c,
                    cache: CandidateCache::Lstm { i, f, o, g, tanh_c },
                }
            }
            BaselineParams::Gru {
                update,
                reset,
                candidate,
            } => {
                let z = sigmoid_vec(&update.preactivation(x, h_prev));
                let r = sigmoid_vec(&reset.preactivation(x, h_prev));
                let rh = r.hadamard(h_prev);
                let cand: Vector = candidate.preactivation(x, &rh).iter().map(|v| v.tanh()).collect();
                let h = (0..z.len())
                    .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * cand[k])
                    .collect();
                CandidateStep {
                    h_tilde: h,
                    aux: Vector::default(),
                    cache: CandidateCache::Gru { z, r, rh, cand },
                }
            }
            BaselineParams::IndRnn { w, u, b } => {
                let mut pre = b.clone();
                w.mul_vec_acc(x, &mut pre);
                for ((p, uk), hk) in pre.iter_mut().zip(u.iter()).zip(h_prev) {
                    *p += uk * hk;
                }
                let h = crate::numerics::activate(activation, &pre);
                CandidateStep {
                    h_tilde: h,
                    aux: Vector::default(),
                    cache: CandidateCache::Elementwise { pre },
                }
            }
        }
    }

    /// Reverse-mode step. Given gradients on the candidate output and on the
    /// carried auxiliary state, accumulates parameter gradients into `grads`
    /// and returns `(∂x, ∂h_prev, ∂aux_prev)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn candidate_backward(
        &self,
        grads: &mut BaselineParams,
        activation: Activation,
        step: &CandidateStep,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        g_h: &[f64],
        g_aux: &[f64],
    ) -> (Vector, Vector, Vector) {
        let mut gx = Vector::zeros(x.len());
        let mut gh = Vector::zeros(h_prev.len());
        match (self, grads, &step.cache) {
            (BaselineParams::Rnn { hidden }, BaselineParams::Rnn { hidden: gp }, cache) => {
                let gz = rnn_preact_grad(activation, cache, &step.h_tilde, g_h);
                hidden.backward(gp, &gz, x, h_prev, &mut gx, &mut gh);
                (gx, gh, Vector::default())
            }
            (
                BaselineParams::Lstm {
                    input,
                    forget,
                    output,
                    cell,
                },
                BaselineParams::Lstm {
                    input: gi_p,
                    forget: gf_p,
                    output: go_p,
                    cell: gc_p,
                },
                CandidateCache::Lstm { i, f, o, g, tanh_c },
            ) => {
                let n = g_h.len();
                let mut gc = Vector::zeros(n);
                let mut g_pre_i = Vector::zeros(n);
                let mut g_pre_f = Vector::zeros(n);
                let mut g_pre_o = Vector::zeros(n);
                let mut g_pre_c = Vector::zeros(n);
                let mut gc_prev = Vector::zeros(n);
                for k in 0..n {
                    gc[k] = g_aux[k] + g_h[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                    g_pre_o[k] = g_h[k] * tanh_c[k] * o[k] * (1.0 - o[k]);
                    g_pre_i[k] = gc[k] * g[k] * i[k] * (1.0 - i[k]);
                    g_pre_f[k] = gc[k] * c_prev[k] * f[k] * (1.0 - f[k]);
                    g_pre_c[k] = gc[k] * i[k] * (1.0 - g[k] * g[k]);
                    gc_prev[k] = gc[k] * f[k];
                }
                input.backward(gi_p, &g_pre_i, x, h_prev, &mut gx, &mut gh);
                forget.backward(gf_p, &g_pre_f, x, h_prev, &mut gx, &mut gh);
                output.backward(go_p, &g_pre_o, x, h_prev, &mut gx, &mut gh);
                cell.backward(gc_p, &g_pre_c, x, h_prev, &mut gx, &mut gh);
                (gx, gh, gc_prev)
            }
            (
                BaselineParams::Gru {
                    update,
                    reset,
                    candidate,
                },
                BaselineParams::Gru {
                    update: gu_p,
                    reset: gr_p,
                    candidate: gc_p,
                },
                CandidateCache::Gru { z, r, rh, cand },
            ) => {
                let n = g_h.len();
                let mut g_pre_z = Vector::zeros(n);
                let mut g_pre_c = Vector::zeros(n);
                for k in 0..n {
                    gh[k] += g_h[k] * (1.0 - z[k]);
                    g_pre_z[k] = g_h[k] * (cand[k] - h_prev[k]) * z[k] * (1.0 - z[k]);
                    g_pre_c[k] = g_h[k] * z[k] * (1.0 - cand[k] * cand[k]);
                }
                let mut g_rh = Vector::zeros(n);
                candidate.backward(gc_p, &g_pre_c, x, rh, &mut gx, &mut g_rh);
                let mut g_pre_r = Vector::zeros(n);
                for k in 0..n {
                    gh[k] += g_rh[k] * r[k];
                    g_pre_r[k] = g_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                }
                update.backward(gu_p, &g_pre_z, x, h_prev, &mut gx, &mut gh);
                reset.backward(gr_p, &g_pre_r, x, h_prev, &mut gx, &mut gh);
                (gx, gh, Vector::default())
            }
            (BaselineParams::IndRnn { w, u, .. }, BaselineParams::IndRnn { w: gw, u: gu, b: gb }, cache) => {
                let gz = rnn_preact_grad(activation, cache, &step.h_tilde, g_h);
                gw.add_outer(&gz, x);
                gb.add_assign(&gz);
                for k in 0..gz.len() {
                    gu[k] += gz[k] * h_prev[k];
                    gh[k] += gz[k] * u[k];
                }
                w.mul_vec_t_acc(&gz, &mut gx);
                (gx, gh, Vector::default())
            }
            _ => unreachable!("gradient structure does not match parameters"),
        }
    }
}

impl Parameters for BaselineParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        match self {
            BaselineParams::Rnn { hidden } => hidden.push_tensors("", "h", &mut out),
            BaselineParams::Lstm {
                input,
                forget,
                output,
                cell,
            } => {
                input.push_tensors("", "i", &mut out);
                forget.push_tensors("", "f", &mut out);
                output.push_tensors("", "o", &mut out);
                cell.push_tensors("", "c", &mut out);
            }
            BaselineParams::Gru {
                update,
                reset,
                candidate,
            } => {
                update.push_tensors("", "z", &mut out);
                reset.push_tensors("", "r", &mut out);
                candidate.push_tensors("", "c", &mut out);
            }
            BaselineParams::IndRnn { w, u, b } => {
                out.push(TensorView {
                    name: "w_h".into(),
                    rows: w.rows(),
                    cols: w.cols(),
                    data: w.as_slice(),
                });
                out.push(TensorView {
                    name: "u_h".into(),
                    rows: u.len(),
                    cols: 1,
                    data: u,
                });
                out.push(TensorView {
                    name: "b_h".into(),
                    rows: b.len(),
                    cols: 1,
                    data: b,
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        match self {
            BaselineParams::Rnn { hidden } => hidden.push_tensors_mut(&mut out),
            BaselineParams::Lstm {
                input,
                forget,
                output,
                cell,
            } => {
                input.push_tensors_mut(&mut out);
                forget.push_tensors_mut(&mut out);
                output.push_tensors_mut(&mut out);
                cell.push_tensors_mut(&mut out);
            }
            BaselineParams::Gru {
                update,
                reset,
                candidate,
            } => {
                update.push_tensors_mut(&mut out);
                reset.push_tensors_mut(&mut out);
                candidate.push_tensors_mut(&mut out);
            }
            BaselineParams::IndRnn { w, u, b } => {
                out.push(w.as_mut_slice());
                out.push(u);
                out.push(b);
            }
        }
        out
    }
}

/// Carried state of a baseline cell: `h`, plus the cell memory `c` for LSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub h: Vector,
    pub c: Vector,
}

impl BaselineState {
    pub fn zeros(params: &BaselineParams) -> Self {
        BaselineState {
            h: Vector::zeros(params.hidden_dim()),
            c: Vector::zeros(params.aux_dim()),
        }
    }
}

/// Advances a baseline cell by one step and returns the new hidden state.
pub fn baseline_step(
    params: &BaselineParams,
    activation: Activation,
    state: &mut BaselineState,
    x: &[f64],
) -> Result<Vector> {
    check_step_shapes(params, x, &state.h, &state.c)?;
    let step = params.candidate(activation, x, &state.h, &state.c);
    state.h = step.h_tilde.clone();
    state.c = step.aux;
    Ok(step.h_tilde)
}

pub(crate) fn check_step_shapes(params: &BaselineParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(
            "cell step input",
            format!("length {}", params.input_dim()),
            format!("length {}", x.len()),
        ));
    }
    if h.len() != params.hidden_dim() || c.len() != params.aux_dim() {
        return Err(Error::shape(
            "cell step state",
            format!("h of length {}, c of length {}", params.hidden_dim(), params.aux_dim()),
            format!("h of length {}, c of length {}", h.len(), c.len()),
        ));
    }
    Ok(())
}

/// Output of a candidate computation plus what reverse mode needs from it.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateStep {
    pub h_tilde: Vector,
    /// New auxiliary state (LSTM cell memory), empty for other kinds.
    pub aux: Vector,
    pub cache: CandidateCache,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CandidateCache {
    /// RNN and IndRNN: the pre-activation.
    Elementwise { pre: Vector },
    Lstm {
        i: Vector,
        f: Vector,
        o: Vector,
        g: Vector,
        tanh_c: Vector,
    },
    Gru {
        z: Vector,
        r: Vector,
        rh: Vector,
        cand: Vector,
    },
}

/// `σ(W x + U h + b)`; shared by the vanilla RNN and the DMU candidate so
/// both paths produce identical bits.
pub(crate) fn rnn_candidate(affine: &Affine, activation: Activation, x: &[f64], h: &[f64]) -> CandidateStep {
    let pre = affine.preactivation(x, h);
    let h_tilde = crate::numerics::activate(activation, &pre);
    CandidateStep {
        h_tilde,
        aux: Vector::default(),
        cache: CandidateCache::Elementwise { pre },
    }
}

pub(crate) fn rnn_preact_grad(activation: Activation, cache: &CandidateCache, out: &[f64], g_out: &[f64]) -> Vector {
    let CandidateCache::Elementwise { pre } = cache else {
        unreachable!("elementwise cache expected")
    };
    (0..g_out.len())
        .map(|k| g_out[k] * elementwise_derivative(activation, pre[k], out[k]))
        .collect()
}

fn sigmoid_vec(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lstm_stays_zero() {
        let p = BaselineParams::zeros(BaselineKind::Lstm, 3, 4);
        let mut s = BaselineState::zeros(&p);
        for _ in 0..5 {
            let h = baseline_step(&p, Activation::Tanh, &mut s, &[0.0; 3]).unwrap();
            assert!(h.iter().all(|&v| v == 0.0));
        }
        assert!(s.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indrnn_unit_recurrence_decays() {
        // h ← tanh(h) from 0.5 shrinks monotonically toward 0.
        let p = BaselineParams::IndRnn {
            w: Matrix::zeros(1, 1),
            u: Vector::from(vec![1.0]),
            b: Vector::zeros(1),
        };
        let mut s = BaselineState {
            h: Vector::from(vec![0.5]),
            c: Vector::default(),
        };
        let mut expected: f64 = 0.5;
        let mut last = 0.5;
        for _ in 0..200 {
            let h = baseline_step(&p, Activation::Tanh, &mut s, &[0.0]).unwrap();
            expected = expected.tanh();
            assert_eq!(h[0], expected);
            assert!(h[0] < last && h[0] > 0.0);
            last = h[0];
        }
        assert!(last < 0.1);
    }

    #[test]
    fn gru_interpolates_between_state_and_candidate() {
        // Saturated update gate: h = candidate; closed update gate: h = h_prev.
        let mut p = BaselineParams::zeros(BaselineKind::Gru, 1, 1);
        if let BaselineParams::Gru { update, candidate, .. } = &mut p {
            update.b[0] = 50.0;
            candidate.b[0] = 0.3;
        }
        let mut s = BaselineState {
            h: Vector::from(vec![0.9]),
            c: Vector::default(),
        };
        let h = baseline_step(&p, Activation::Tanh, &mut s, &[0.0]).unwrap();
        assert!((h[0] - 0.3f64.tanh()).abs() < 1e-12);
        if let BaselineParams::Gru { update, .. } = &mut p {
            update.b[0] = -50.0;
        }
        let h = baseline_step(&p, Activation::Tanh, &mut s, &[0.0]).unwrap();
        assert!((h[0] - 0.3f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = BaselineParams::zeros(BaselineKind::Rnn, 2, 3);
        let mut s = BaselineState::zeros(&p);
        assert!(baseline_step(&p, Activation::Tanh, &mut s, &[0.0; 3]).is_err());
        s.h = Vector::zeros(2);
        assert!(baseline_step(&p, Activation::Tanh, &mut s, &[0.0; 2]).is_err());
    }
}
