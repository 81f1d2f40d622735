//! Banded LU without pivoting, plus the "folded" node ordering that turns
//! periodic nearest-neighbour couplings into a narrow band.
//!
//! The systems solved here are strictly diagonally dominant M-matrices, for
//! which Gaussian elimination without pivoting is stable.

use crate::error::{Error, Result};

/// Position of index `i` in the folded order `0, n−1, 1, n−2, …`.
/// Cyclic neighbours end up at most two positions apart.
pub fn fold(i: usize, n: usize) -> usize {
    if 2 * i < n {
        2 * i
    } else {
        2 * (n - 1 - i) + 1
    }
}

#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    p: usize,
    // Row-major, `2p+1` entries per row; entry (i, j) at i*(2p+1) + j + p − i.
    data: Vec<f64>,
    factored: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let p = half_bandwidth.min(n.saturating_sub(1));
        BandedMatrix {
            n,
            p,
            data: vec![0.0; n * (2 * p + 1)],
            factored: false,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.p, "({i},{j}) outside band {}", self.p);
        i * (2 * self.p + 1) + j + self.p - i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.p {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place Doolittle factorization.
    pub fn factor(&mut self) -> Result<()> {
        let (n, p) = (self.n, self.p);
        let w = 2 * p + 1;
        for k in 0..n {
            let pivot = self.data[k * w + p];
            if !(pivot > 0.0) {
                return Err(Error::SingularSystem { row: k, pivot });
            }
            let end = (k + p + 1).min(n);
            for i in k + 1..end {
                let ik = i * w + k + p - i;
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..end {
                    let kj = k * w + j + p - k;
                    let ij = i * w + j + p - i;
                    self.data[ij] -= l * self.data[kj];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place after `factor`.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored);
        let (n, p) = (self.n, self.p);
        let w = 2 * p + 1;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(p)..i {
                s -= self.data[i * w + j + p - i] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + p + 1).min(n) {
                s -= self.data[i * w + j + p - i] * b[j];
            }
            b[i] = s / self.data[i * w + p];
        }
    }

    /// Solves `Aᵀ x = b` in place after `factor`.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        assert!(self.factored);
        let (n, p) = (self.n, self.p);
        let w = 2 * p + 1;
        // Uᵀ y = b
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(p)..i {
                s -= self.data[j * w + i + p - j] * b[j];
            }
            b[i] = s / self.data[i * w + p];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + p + 1).min(n) {
                s -= self.data[j * w + i + p - j] * b[j];
            }
            b[i] = s;
        }
    }
}
