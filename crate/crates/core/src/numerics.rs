//! Dense f64 linear algebra, activations and seeded initialization.
//!
//! Everything here is deliberately small: row-major matrices, owned vectors
//! and the handful of products the recurrent cells need. Matrices may have a
//! zero dimension so that a cell with no delay taps can carry an empty gate
//! group.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned vector of f64 values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += alpha * o;
        }
    }

    pub fn add_assign(&mut self, other: &[f64]) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += o;
        }
    }

    pub fn hadamard(&self, other: &[f64]) -> Vector {
        self.iter().zip(other).map(|(a, b)| a * b).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        self.iter().map(|a| a * alpha).collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|v| *v = value);
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.iter().enumerate() {
            if *v > self[best] {
                best = i;
            }
        }
        best
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} of length {cols}"),
                    format!("length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v`, checked.
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("vector of length {}", self.cols),
                format!("length {}", v.len()),
            ));
        }
        Ok(self.mul_vec(v))
    }

    /// Unchecked `self * v`; callers guarantee `v.len() == cols`.
    pub(crate) fn mul_vec(&self, v: &[f64]) -> Vector {
        debug_assert_eq!(v.len(), self.cols);
        if self.cols == 0 {
            return Vector::zeros(self.rows);
        }
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `out += self * v`
    pub(crate) fn mul_vec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ * v`
    pub(crate) fn mul_vec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (row, &vi) in self.data.chunks_exact(self.cols).zip(v) {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    pub(crate) fn mul_vec_t(&self, v: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.cols);
        self.mul_vec_t_acc(v, &mut out);
        out
    }

    /// `self += a ⊗ b` (rank-one update).
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (row, &ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if ai == 0.0 {
                continue;
            }
            for (r, bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Outer product `a ⊗ b`, shape `a.len() × b.len()`.
pub fn outer(a: &[f64], b: &[f64]) -> Result<Matrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::shape(
            "outer",
            "two non-empty vectors".to_string(),
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let mut m = Matrix::zeros(a.len(), b.len());
    m.add_outer(a, b);
    // add_outer skips zero rows, which already hold zeros.
    Ok(m)
}

/// `m * v`, see [`Matrix::matvec`].
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    m.matvec(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softmax,
    Sigmoid,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: &[f64]) -> Vector {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn activate(kind: Activation, v: &[f64]) -> Vector {
    match kind {
        Activation::Tanh => v.iter().map(|x| x.tanh()).collect(),
        Activation::Sigmoid => v.iter().map(|&x| sigmoid(x)).collect(),
        Activation::Relu => v.iter().map(|&x| x.max(0.0)).collect(),
        Activation::Softmax => softmax(v),
    }
}

/// Derivative of an elementwise activation, expressed through its output `y`
/// (and the pre-activation `z` for relu).
pub(crate) fn elementwise_derivative(kind: Activation, z: f64, y: f64) -> f64 {
    match kind {
        Activation::Tanh => 1.0 - y * y,
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Softmax => unreachable!("softmax is not elementwise"),
    }
}

/// Deterministic generator: ChaCha8 keyed by a 64-bit seed, normals drawn
/// with the ziggurat sampler from `rand_distr`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `(seed, stream)`, e.g. one per epoch.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// Kaiming-normal matrix: i.i.d. `N(0, 2 / fan_in)` entries.
pub fn init_kaiming(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
    Matrix { rows, cols, data }
}

/// Kaiming-normal vector, used for biases.
pub fn init_kaiming_vector(rng: &mut SeededRng, len: usize, fan_in: usize) -> Vector {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    (0..len).map(|_| rng.normal() * std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matvec_examples() {
        assert_eq!(
            Matrix::identity(3).matvec(&[1.0, 2.0, 3.0]).unwrap(),
            Vector::from(vec![1.0, 2.0, 3.0])
        );
        assert_eq!(
            Matrix::zeros(2, 2).matvec(&[5.0, 7.0]).unwrap(),
            Vector::from(vec![0.0, 0.0])
        );
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), Vector::from(vec![3.0, 7.0]));
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let err = Matrix::zeros(2, 3).matvec(&[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("matvec"));
    }

    #[test]
    fn outer_examples() {
        let m = outer(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(m, Matrix::from_rows(&[vec![3.0, 4.0], vec![6.0, 8.0]]).unwrap());
        let z = outer(&[0.0, 0.0], &[2.5, -1.0]).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let r = outer(&[1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.shape(), (1, 3));
        assert!(r.as_slice().iter().all(|&v| v == 1.0));
        assert!(outer(&[], &[1.0]).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activate(Activation::Tanh, &[0.0, 0.0]), Vector::zeros(2));
        let s = activate(Activation::Softmax, &[0.0; 4]);
        assert!(s.iter().all(|&v| v == 0.25));
        let big = activate(Activation::Softmax, &[1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-15);
        assert!(big[1] < 1e-300 || big[1] == (-1000.0f64).exp());
        assert_eq!(activate(Activation::Relu, &[-1.0, 2.0]), Vector::from(vec![0.0, 2.0]));
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn kaiming_statistics() {
        let mut rng = SeededRng::new(7);
        let m = init_kaiming(&mut rng, 1, 100_000, 2);
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());

        let mut rng = SeededRng::new(8);
        let m = init_kaiming(&mut rng, 100_000, 1, 8);
        let mean = m.as_slice().iter().sum::<f64>() / 100_000.0;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn kaiming_is_deterministic() {
        let a = init_kaiming(&mut SeededRng::new(42), 5, 4, 4);
        let b = init_kaiming(&mut SeededRng::new(42), 5, 4, 4);
        assert_eq!(a, b);
        let c = init_kaiming(&mut SeededRng::new(43), 5, 4, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = SeededRng::derive(1, 0);
        let mut b = SeededRng::derive(1, 1);
        assert_ne!(a.uniform(), b.uniform());
        let mut c = SeededRng::derive(1, 0);
        let mut d = SeededRng::derive(1, 0);
        assert_eq!(c.normal(), d.normal());
    }

    #[test]
    fn permutation_is_bijection() {
        let p = SeededRng::new(3).permutation(50);
        let mut seen = [false; 50];
        for i in p {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-15.0f64..15.0, 1..12)) {
            let s = softmax(&v);
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.iter().all(|&p| p > 0.0 && p < 1.0 || v.len() == 1));
        }

        #[test]
        fn matvec_is_linear(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let rows = 1 + rng.below(5);
            let cols = 1 + rng.below(5);
            let m = init_kaiming(&mut rng, rows, cols, cols);
            let u: Vector = (0..cols).map(|_| rng.normal()).collect();
            let v: Vector = (0..cols).map(|_| rng.normal()).collect();
            let mut combo = u.scaled(a);
            combo.axpy(b, &v);
            let lhs = m.matvec(&combo).unwrap();
            let mut rhs = m.matvec(&u).unwrap().scaled(a);
            rhs.axpy(b, &m.matvec(&v).unwrap());
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-12);
            }
        }

        #[test]
        fn outer_entries_exact(
            a in proptest::collection::vec(-10.0f64..10.0, 1..6),
            b in proptest::collection::vec(-10.0f64..10.0, 1..6),
        ) {
            let m = outer(&a, &b).unwrap();
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    prop_assert_eq!(m.get(i, j), x * y);
                }
            }
        }
    }
}
