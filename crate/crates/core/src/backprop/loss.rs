//! Readout losses for the two decoding modes, per-step labelling and
//! regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, Vector};

/// How a sequence of hidden states is decoded into one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Logits from the final step only.
    #[default]
    Last,
    /// Readout integrator: logits averaged over all steps.
    All,
}

/// Loss value and gradients with respect to the hidden states and readout.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutLoss {
    pub loss: f64,
    pub dl_dh: Vec<Vector>,
    pub d_readout: Matrix,
    pub d_bias: Vector,
    /// Decoded logits (one row per decision; a single row for sequence tasks).
    pub logits: Vec<Vector>,
}

fn check_readout(readout: &Matrix, bias: &Vector, hs: &[Vector]) -> Result<()> {
    if readout.rows() != bias.len() {
        return Err(Error::shape(
            "readout",
            format!("bias of length {}", readout.rows()),
            format!("length {}", bias.len()),
        ));
    }
    if hs.is_empty() {
        return Err(Error::InvalidConfig("loss needs at least one hidden state".into()));
    }
    if let Some(h) = hs.iter().find(|h| h.len() != readout.cols()) {
        return Err(Error::shape(
            "readout",
            format!("hidden states of length {}", readout.cols()),
            format!("length {}", h.len()),
        ));
    }
    Ok(())
}

fn logits_of(readout: &Matrix, bias: &Vector, h: &[f64]) -> Vector {
    let mut z = bias.clone();
    readout.mul_vec_acc(h, &mut z);
    z
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vector) {
    // (m − z_c) + ln(1 + Σ_{j≠argmax} e^{z_j − m}) keeps digits when the loss is tiny.
    let top = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
    let m = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &z)| (z - m).exp())
        .sum();
    let loss = (m - logits[target]) + rest.ln_1p();
    let mut g = softmax(logits);
    g[target] -= 1.0;
    (loss, g)
}

/// Sequence classification loss with either decoding mode.
pub fn sequence_loss(
    mode: DecodeMode,
    readout: &Matrix,
    bias: &Vector,
    hs: &[Vector],
    target: usize,
) -> Result<ReadoutLoss> {
    check_readout(readout, bias, hs)?;
    let classes = readout.rows();
    if classes < 2 || target >= classes {
        return Err(Error::InvalidTarget { target, classes });
    }
    let t_len = hs.len();
    let n_hidden = readout.cols();
    let mut dl_dh = vec![Vector::zeros(n_hidden); t_len];
    let mut d_readout = Matrix::zeros(classes, n_hidden);
    match mode {
        DecodeMode::Last => {
            let h = &hs[t_len - 1];
            let logits = logits_of(readout, bias, h);
            let (loss, g) = cross_entropy(&logits, target);
            dl_dh[t_len - 1] = readout.mul_vec_t(&g);
            d_readout.add_outer(&g, h);
            Ok(ReadoutLoss {
                loss,
                dl_dh,
                d_readout,
                d_bias: g,
                logits: vec![logits],
            })
        }
        DecodeMode::All => {
            let mut mean_h = Vector::zeros(n_hidden);
            for h in hs {
                mean_h.add_assign(h);
            }
            let inv = 1.0 / t_len as f64;
            mean_h.iter_mut().for_each(|v| *v *= inv);
            // mean_t (R hₜ + b) = R·mean(h) + b
            let logits = logits_of(readout, bias, &mean_h);
            let (loss, g) = cross_entropy(&logits, target);
            let per_step = readout.mul_vec_t(&g).scaled(inv);
            for d in &mut dl_dh {
                d.clone_from(&per_step);
            }
            d_readout.add_outer(&g, &mean_h);
            Ok(ReadoutLoss {
                loss,
                dl_dh,
                d_readout,
                d_bias: g,
                logits: vec![logits],
            })
        }
    }
}

/// Sum of per-step cross-entropies for sequence labelling.
pub fn per_step_loss(readout: &Matrix, bias: &Vector, hs: &[Vector], targets: &[usize]) -> Result<ReadoutLoss> {
    check_readout(readout, bias, hs)?;
    let classes = readout.rows();
    if targets.len() != hs.len() {
        return Err(Error::shape(
            "per_step_loss",
            format!("{} targets", hs.len()),
            format!("{}", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidTarget { target: bad, classes });
    }
    let mut loss = 0.0;
    let mut dl_dh = Vec::with_capacity(hs.len());
    let mut d_readout = Matrix::zeros(classes, readout.cols());
    let mut d_bias = Vector::zeros(classes);
    let mut all_logits = Vec::with_capacity(hs.len());
    for (h, &target) in hs.iter().zip(targets) {
        let logits = logits_of(readout, bias, h);
        let (l, g) = cross_entropy(&logits, target);
        loss += l;
        dl_dh.push(readout.mul_vec_t(&g));
        d_readout.add_outer(&g, h);
        d_bias.add_assign(&g);
        all_logits.push(logits);
    }
    Ok(ReadoutLoss {
        loss,
        dl_dh,
        d_readout,
        d_bias,
        logits: all_logits,
    })
}

/// Squared error of a scalar readout (`readout` has one row).
pub fn regression_loss(
    mode: DecodeMode,
    readout: &Matrix,
    bias: &Vector,
    hs: &[Vector],
    target: f64,
) -> Result<ReadoutLoss> {
    check_readout(readout, bias, hs)?;
    if readout.rows() != 1 {
        return Err(Error::shape(
            "regression_loss",
            "a single readout row".into(),
            format!("{} rows", readout.rows()),
        ));
    }
    let t_len = hs.len();
    let n_hidden = readout.cols();
    let (feature, weight) = match mode {
        DecodeMode::Last => (hs[t_len - 1].clone(), None),
        DecodeMode::All => {
            let mut m = Vector::zeros(n_hidden);
            for h in hs {
                m.add_assign(h);
            }
            let inv = 1.0 / t_len as f64;
            m.iter_mut().for_each(|v| *v *= inv);
            (m, Some(inv))
        }
    };
    let pred = logits_of(readout, bias, &feature);
    let err = pred[0] - target;
    let g = Vector::from(vec![2.0 * err]);
    let mut dl_dh = vec![Vector::zeros(n_hidden); t_len];
    let back = readout.mul_vec_t(&g);
    match weight {
        None => dl_dh[t_len - 1] = back,
        Some(inv) => {
            let scaled = back.scaled(inv);
            for d in &mut dl_dh {
                d.clone_from(&scaled);
            }
        }
    }
    let mut d_readout = Matrix::zeros(1, n_hidden);
    d_readout.add_outer(&g, &feature);
    Ok(ReadoutLoss {
        loss: err * err,
        dl_dh,
        d_readout,
        d_bias: g,
        logits: vec![pred],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::log_sum_exp;

    #[test]
    fn cross_entropy_matches_log_sum_exp_and_keeps_small_losses() {
        for (z, c) in [
            (vec![0.3, -1.2, 2.0], 0),
            (vec![0.3, -1.2, 2.0], 2),
            (vec![5.0, 5.0], 1),
        ] {
            let (l, _) = cross_entropy(&z, c);
            assert!((l - (log_sum_exp(&z) - z[c])).abs() < 1e-14);
        }
        // ln(1 + 2e⁻⁴⁰) ≈ 2e⁻⁴⁰, which the plain difference rounds to 0.
        let (l, _) = cross_entropy(&[40.0, 0.0, 0.0], 0);
        assert!((l / (2.0 * (-40f64).exp()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let readout = Matrix::zeros(20, 3);
        let bias = Vector::zeros(20);
        let hs = vec![Vector::from(vec![0.3, -0.2, 0.9])];
        let l = sequence_loss(DecodeMode::Last, &readout, &bias, &hs, 7).unwrap();
        assert!((l.loss - 20f64.ln()).abs() < 1e-12);
        assert!((l.loss - 2.9957).abs() < 1e-4);
    }

    #[test]
    fn all_mode_averages_logits() {
        // Identity readout: per-step logits equal the hidden states.
        let readout = Matrix::identity(2);
        let bias = Vector::zeros(2);
        let hs = vec![Vector::from(vec![1.0, 0.0]), Vector::from(vec![0.0, 1.0])];
        let l = sequence_loss(DecodeMode::All, &readout, &bias, &hs, 0).unwrap();
        assert!((l.loss - 2f64.ln()).abs() < 1e-15);
        assert!(l.dl_dh.iter().all(|d| d.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn last_mode_gradient_only_at_final_step() {
        let readout = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        let bias = Vector::from(vec![0.1, 0.0, -0.1]);
        let hs: Vec<Vector> = (0..4).map(|t| Vector::from(vec![t as f64 * 0.1, 0.2])).collect();
        let l = sequence_loss(DecodeMode::Last, &readout, &bias, &hs, 1).unwrap();
        for d in &l.dl_dh[..3] {
            assert!(d.iter().all(|&v| v == 0.0));
        }
        assert!(l.dl_dh[3].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn invalid_targets_rejected() {
        let readout = Matrix::zeros(3, 2);
        let bias = Vector::zeros(3);
        let hs = vec![Vector::zeros(2)];
        assert!(matches!(
            sequence_loss(DecodeMode::Last, &readout, &bias, &hs, 3),
            Err(Error::InvalidTarget { .. })
        ));
        assert!(per_step_loss(&readout, &bias, &hs, &[5]).is_err());
        let single = Matrix::zeros(1, 2);
        assert!(sequence_loss(DecodeMode::Last, &single, &Vector::zeros(1), &hs, 0).is_err());
    }

    fn fd_readout_check(f: impl Fn(&Matrix, &Vector, &[Vector]) -> ReadoutLoss) {
        let readout = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2], vec![-0.4, 0.5]]).unwrap();
        let bias = Vector::from(vec![0.05, -0.1, 0.2]);
        let hs: Vec<Vector> = (0..3)
            .map(|t| Vector::from(vec![0.2 * t as f64 - 0.1, 0.3 - 0.15 * t as f64]))
            .collect();
        let base = f(&readout, &bias, &hs);
        let eps = 1e-6;
        for t in 0..hs.len() {
            for i in 0..2 {
                let mut p = hs.clone();
                p[t][i] += eps;
                let mut m = hs.clone();
                m[t][i] -= eps;
                let num = (f(&readout, &bias, &p).loss - f(&readout, &bias, &m).loss) / (2.0 * eps);
                assert!((num - base.dl_dh[t][i]).abs() < 1e-7, "h[{t}][{i}]");
            }
        }
        for r in 0..readout.rows() {
            for c in 0..readout.cols() {
                let mut p = readout.clone();
                p.set(r, c, p.get(r, c) + eps);
                let mut m = readout.clone();
                m.set(r, c, m.get(r, c) - eps);
                let num = (f(&p, &bias, &hs).loss - f(&m, &bias, &hs).loss) / (2.0 * eps);
                assert!((num - base.d_readout.get(r, c)).abs() < 1e-7);
            }
            let mut p = bias.clone();
            p[r] += eps;
            let mut m = bias.clone();
            m[r] -= eps;
            let num = (f(&readout, &p, &hs).loss - f(&readout, &m, &hs).loss) / (2.0 * eps);
            assert!((num - base.d_bias[r]).abs() < 1e-7);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        fd_readout_check(|r, b, hs| sequence_loss(DecodeMode::Last, r, b, hs, 2).unwrap());
        fd_readout_check(|r, b, hs| sequence_loss(DecodeMode::All, r, b, hs, 0).unwrap());
        fd_readout_check(|r, b, hs| per_step_loss(r, b, hs, &[0, 2, 1]).unwrap());
    }

    #[test]
    fn regression_gradient() {
        let readout = Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let bias = Vector::from(vec![0.1]);
        let hs = vec![Vector::from(vec![0.2, 0.4]), Vector::from(vec![1.0, -0.5])];
        for mode in [DecodeMode::Last, DecodeMode::All] {
            let base = regression_loss(mode, &readout, &bias, &hs, 0.3).unwrap();
            let eps = 1e-6;
            let mut p = hs.clone();
            p[0][1] += eps;
            let mut m = hs.clone();
            m[0][1] -= eps;
            let num = (regression_loss(mode, &readout, &bias, &p, 0.3).unwrap().loss
                - regression_loss(mode, &readout, &bias, &m, 0.3).unwrap().loss)
                / (2.0 * eps);
            assert!((num - base.dl_dh[0][1]).abs() < 1e-7);
        }
    }
}
