//! Fixed-capacity vectors and symmetric matrices for dimensions 1 and 2.

use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 2;

/// A point, gradient or drift in dimension 1 or 2. Unused slots stay zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector {
    dim: usize,
    c: [f64; MAX_DIM],
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Vector { dim, c: [0.0; MAX_DIM] }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = Vector::zeros(values.len());
        v.c[..values.len()].copy_from_slice(values);
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.dim]
    }

    pub fn raw(&self) -> [f64; MAX_DIM] {
        self.c
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vector {
        let mut out = *self;
        out.c.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn add(&self, other: &Vector) -> Vector {
        let mut out = *self;
        for i in 0..self.dim {
            out.c[i] += other.c[i];
        }
        out
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        self.add(&other.scale(-1.0))
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        // Out-of-range lengths are caught by validation; clamp so that
        // deserialization itself never panics.
        let n = v.len().clamp(1, MAX_DIM);
        let mut out = Vector::zeros(n);
        for (i, x) in v.into_iter().take(n).enumerate() {
            out.c[i] = x;
        }
        out
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.as_slice().to_vec()
    }
}

/// Symmetric matrix in dimension 1 or 2, stored in full.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    c: [[f64; MAX_DIM]; MAX_DIM],
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        SymMatrix {
            dim,
            c: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.c[i][i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = SymMatrix::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.c[i][i] = *v;
        }
        m
    }

    /// Builds from rows, symmetrizing the off-diagonal part.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.c[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.c[i][j] = value;
        self.c[j][i] = value;
    }

    /// tr(A B) for symmetric A, B, i.e. the Frobenius inner product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.c[i][j] * other.c[i][j];
            }
        }
        s
    }

    pub fn frobenius(&self) -> f64 {
        self.trace_product(self).sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.c[i][i]).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.c[i][j] += other.c[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        let mut out = *self;
        for row in out.c.iter_mut() {
            row.iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        self.add(&other.scale(-1.0))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self.dim {
            1 => self.c[0][0],
            _ => {
                let (a, b, d) = (self.c[0][0], self.c[0][1], self.c[1][1]);
                let mean = 0.5 * (a + d);
                let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mean - radius
            }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.dim == 1 || self.c[0][1] == 0.0
    }
}

impl From<Vec<Vec<f64>>> for SymMatrix {
    fn from(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len().clamp(1, MAX_DIM);
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let v = rows.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
                m.c[i][j] = v;
            }
        }
        // Symmetrize whatever was given.
        if n == 2 {
            let off = 0.5 * (m.c[0][1] + m.c[1][0]);
            m.c[0][1] = off;
            m.c[1][0] = off;
        }
        m
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        (0..m.dim).map(|i| m.c[i][..m.dim].to_vec()).collect()
    }
}
