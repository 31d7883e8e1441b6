//! Banded symmetric positive definite storage and Cholesky factorization.
//!
//! Only the lower band is stored. Row `i` holds columns `i - bw ..= i`
//! contiguously, with the diagonal at offset `bw`; columns before zero are
//! padding.

use crate::error::{Error, Result};

/// Pivots below this fraction of the original diagonal are treated as a
/// rank deficiency (an unconstrained rigid-body mode).
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` with `i >= j`.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set_diag(&mut self, i: usize, v: f64) {
        let k = self.idx(i, i);
        self.data[k] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let off = self.bw - (i - lo);
            let mut acc = 0.0;
            for (j, &a) in (lo..=i).zip(&row[off..]) {
                acc += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
        y
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let bw = self.bw;
        let stride = bw + 1;
        let mut l = self.data.clone();
        for i in 0..self.n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let len = j - lo;
                let ri = i * stride + bw - (i - lo);
                let rj = j * stride + bw - (j - lo);
                let dot = dot(&l[ri..ri + len], &l[rj..rj + len]);
                let at = i * stride + bw - (i - j);
                let s = l[at] - dot;
                if i == j {
                    let diag = self.data[at];
                    if !(s > SINGULAR_PIVOT_RATIO * diag.abs()) || !s.is_finite() {
                        return Err(Error::IllPosed(format!(
                            "stiffness matrix is singular at dof {i} (pivot {s:e}, diagonal {diag:e})"
                        )));
                    }
                    l[at] = s.sqrt();
                } else {
                    l[at] = s / l[j * stride + bw];
                }
            }
        }
        Ok(BandedCholesky {
            n: self.n,
            bw,
            l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let stride = self.bw + 1;
        let mut x = b.to_vec();
        // L y = b
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.l[i * stride + self.bw - (i - lo)..i * stride + self.bw];
            let s = dot(row, &x[lo..i]);
            x[i] = (x[i] - s) / self.l[i * stride + self.bw];
        }
        // Lᵀ x = y
        for i in (0..self.n).rev() {
            x[i] /= self.l[i * stride + self.bw];
            let xi = x[i];
            let lo = i.saturating_sub(self.bw);
            let row = &self.l[i * stride + self.bw - (i - lo)..i * stride + self.bw];
            for (xk, &a) in x[lo..i].iter_mut().zip(row) {
                *xk -= a * xi;
            }
        }
        x
    }
}

/// Eight-lane dot product; the lane split keeps the summation order fixed.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
