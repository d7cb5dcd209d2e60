//! Central-difference gradient verification.

use serde::Serialize;

use crate::params::Parameters;

/// Worst disagreement within one named tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub size: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with the denominator floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(L(p+ε) − L(p−ε)) / 2ε` for every scalar of
/// `params`. Passes iff the largest relative error is at most `tol`.
pub fn grad_check<P, F>(params: &P, analytic: &P, loss: F, eps: f64, tol: f64) -> GradCheckReport
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let analytic_views = analytic.tensors();
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len()))
        .collect();

    let mut probe = params.clone();
    let mut flat_index = 0;
    let mut tensors = Vec::with_capacity(names.len());
    for ((name, size), a_view) in names.into_iter().zip(analytic_views) {
        let mut check = TensorCheck {
            name,
            size,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..size {
            let original = *probe.scalar_mut(flat_index).expect("index in range");
            *probe.scalar_mut(flat_index).unwrap() = original + eps;
            let plus = loss(&probe);
            *probe.scalar_mut(flat_index).unwrap() = original - eps;
            let minus = loss(&probe);
            *probe.scalar_mut(flat_index).unwrap() = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = a_view.data[i];
            let rel = relative_error(a, numeric);
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
            flat_index += 1;
        }
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        tensors,
        max_rel_error,
        epsilon: eps,
        tolerance: tol,
        passed: max_rel_error <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Vector;
    use crate::params::TensorView;

    #[derive(Clone, Debug)]
    struct Pair(Vector);

    impl Parameters for Pair {
        fn tensors(&self) -> Vec<TensorView<'_>> {
            vec![TensorView {
                name: "p".into(),
                rows: self.0.len(),
                cols: 1,
                data: &self.0,
            }]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let p = Pair(Vector::from(vec![1.5, -2.0]));
        let loss = |q: &Pair| q.0[0] * q.0[0] + 3.0 * q.0[1];
        let good = Pair(Vector::from(vec![3.0, 3.0]));
        let r = grad_check(&p, &good, loss, 1e-5, 1e-4);
        assert!(r.passed, "{r:?}");
        let bad = Pair(Vector::from(vec![3.0, 3.1]));
        let r = grad_check(&p, &bad, loss, 1e-5, 1e-4);
        assert!(!r.passed);
        assert_eq!(r.tensors[0].worst_index, 1);
    }

    #[test]
    fn near_zero_gradients_use_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) <= 1e-4);
    }
}
