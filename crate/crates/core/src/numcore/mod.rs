//! Dense numerical kernel: single-precision storage, double-precision
//! accumulation.
//!
//! Only what the similarity heads need is here: vectors, row-major matrices,
//! cosine, matrix-vector products, softmax and the two squashing functions.
//! [`tape`] adds a small reverse-mode differentiator over the same primitives.

pub mod tape;

use crate::error::{Error, Result};

pub use tape::{grad_of, Operand, Tape, Var};

/// Dense `f32` vector. Never empty, never holds NaN or infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::usage("vector dimension must be positive"));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self {
            data: vec![0.0; dim],
        }
    }

    /// Rounds a double-precision buffer to storage precision.
    pub fn from_f64(data: &[f64]) -> Result<Self> {
        Self::new(data.iter().map(|&x| x as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        widen(&self.data)
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.data, &other.data))
    }

    /// Unit-length copy. Zero vectors are rejected rather than passed through.
    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm("normalize"));
        }
        Ok(Vector {
            data: self.data.iter().map(|&x| (x as f64 / n) as f32).collect(),
        })
    }
}

impl AsRef<[f32]> for Vector {
    fn as_ref(&self) -> &[f32] {
        &self.data
    }
}

/// Row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::usage("matrix dimensions must be positive"));
        }
        Error::check_dim(rows * cols, data.len())?;
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// `W x` with the input already widened to double precision.
    pub(crate) fn mul_f64(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(&w, &xi)| w as f64 * xi)
                    .sum()
            })
            .collect()
    }

    /// `Wᵀ g`.
    pub(crate) fn mul_transpose_f64(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w as f64 * gr;
            }
        }
        out
    }
}

pub(crate) fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Dot product with double-precision accumulation.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub(crate) fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm64(a: &[f64]) -> f64 {
    dot64(a, a).sqrt()
}

/// Cosine similarity in `[-1, 1]`. Zero-norm inputs are a domain error.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    Error::check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine"));
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn matvec(w: &Matrix, x: &Vector) -> Result<Vector> {
    Error::check_dim(w.cols(), x.dim())?;
    Vector::from_f64(&w.mul_f64(&x.to_f64()))
}

/// Max-shifted softmax.
pub fn softmax(x: &Vector) -> Vector {
    let out = softmax64(&x.to_f64());
    Vector {
        data: out.into_iter().map(|p| p as f32).collect(),
    }
}

pub(crate) fn softmax64(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn tanh_vec(x: &Vector) -> Vector {
    Vector {
        data: x.data.iter().map(|&v| (v as f64).tanh() as f32).collect(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f32]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - 0.70710678).abs() < 1e-6);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroNorm(_))
        ));
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matvec_examples() {
        let x = v(&[1.0, 1.0]);
        assert_eq!(matvec(&Matrix::identity(2), &x).unwrap(), x);
        assert_eq!(
            matvec(&Matrix::zeros(2, 2), &x).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&w, &x).unwrap().as_slice(), &[3.0, 7.0]);
        assert!(matvec(&w, &v(&[1.0])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&v(&[2.5, 2.5, 2.5]));
        for &p in s.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
        let s = softmax(&v(&[0.0, 3f32.ln()]));
        assert!((s.as_slice()[0] - 0.25).abs() < 1e-6);
        assert!((s.as_slice()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn squashing_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_vec(&v(&[0.0])).as_slice(), &[0.0]);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-7);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f32::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, dim)
            .prop_filter("nonzero", |x| norm(x) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric((a, b) in (1usize..16).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d)))) {
            let (a, b) = (v(&a), v(&b));
            prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
        }

        #[test]
        fn cosine_is_scale_invariant(
            (a, b) in (1usize..16).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d))),
            lambda in 0.01f32..100.0,
        ) {
            let scaled = v(&a.iter().map(|x| x * lambda).collect::<Vec<_>>());
            let (a, b) = (v(&a), v(&b));
            prop_assert!((cosine(&scaled, &b).unwrap() - cosine(&a, &b).unwrap()).abs() <= 1e-6);
        }

        #[test]
        fn softmax_sums_to_one_and_ignores_shifts(
            x in prop::collection::vec(-30.0f32..30.0, 1..20),
            shift in -50.0f32..50.0,
        ) {
            let s = softmax(&v(&x));
            let total: f64 = s.as_slice().iter().map(|&p| p as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            prop_assert!(s.as_slice().iter().all(|&p| p >= 0.0));
            let wide = widen(&x);
            let shifted: Vec<f64> = wide.iter().map(|xi| xi + shift as f64).collect();
            for (p, q) in softmax64(&wide).iter().zip(softmax64(&shifted)) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }
}
