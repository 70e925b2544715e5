//! Small dense row-major matrices plus the two factorizations the crate
//! needs: Householder least squares and the symmetric Jacobi eigensolver.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension");
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "matvec_t dimension");
        let mut out = vec![0.0; self.cols];
        for (r, &s) in v.iter().enumerate() {
            axpy(s, self.row(r), &mut out);
        }
        out
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Least-squares solution of `design · beta ≈ target`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub beta: Vec<f64>,
    pub rss: f64,
}

/// Solves an overdetermined system with Householder QR. Columns whose
/// diagonal pivot falls below `1e-10 · max|R_kk|` mark the design as rank
/// deficient.
pub fn least_squares(design: &Mat, target: &[f64]) -> Result<LeastSquares> {
    let (n, p) = design.shape();
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            what: "least-squares target",
            expected: n,
            found: target.len(),
        });
    }
    if n < p {
        return Err(Error::TooShort {
            what: "least-squares rows",
            needed: p,
            found: n,
        });
    }
    let mut a = design.clone();
    let mut y = target.to_vec();
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let norm = libm::sqrt((k..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>());
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        // Householder vector v = x - alpha e1, stored in column k.
        a[(k, k)] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| a[(i, k)] * a[(i, k)]).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k + 1..p {
            let s: f64 = (k..n).map(|i| a[(i, k)] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                let v = a[(i, k)];
                a[(i, j)] -= s * v;
            }
        }
        let s: f64 = (k..n).map(|i| a[(i, k)] * y[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in k..n {
            y[i] -= s * a[(i, k)];
        }
    }

    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 || diag.iter().any(|d| d.abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient);
    }

    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = y[k];
        for j in k + 1..p {
            s -= a[(k, j)] * beta[j];
        }
        beta[k] = s / diag[k];
    }
    let rss = y[p..].iter().map(|r| r * r).sum();
    Ok(LeastSquares { beta, rss })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns. Each eigenvector's largest-magnitude entry is
/// made positive so the output is sign-deterministic.
pub fn symmetric_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "symmetric eigen",
            expected: n,
            found: m.cols(),
        });
    }
    let mut a = m.clone();
    let mut v = Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[(r, c)] * a[(r, c)])
            .sum();
        let total: f64 = a.as_slice().iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0.0f64;
        for k in 0..n {
            if v[(k, src)].abs() > pivot.abs() + 1e-12 {
                pivot = v[(k, src)];
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[(k, dst)] = sign * v[(k, src)];
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_exact_fit() {
        // y = 1 + 2x
        let design = Mat::from_fn(5, 2, |r, c| if c == 0 { 1.0 } else { r as f64 });
        let y: Vec<f64> = (0..5).map(|r| 1.0 + 2.0 * r as f64).collect();
        let fit = least_squares(&design, &y).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
        assert!((fit.beta[1] - 2.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn least_squares_detects_collinearity() {
        let design = Mat::from_fn(6, 3, |r, c| match c {
            0 => 1.0,
            1 => r as f64,
            _ => 2.0 * r as f64,
        });
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        assert!(matches!(least_squares(&design, &y), Err(Error::RankDeficient)));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let m = Mat::from_vec(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]).unwrap();
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for k in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| vecs[(r, k)]).collect();
            let mv = m.matvec(&col);
            for r in 0..3 {
                assert!((mv[r] - vals[k] * col[r]).abs() < 1e-10);
            }
        }
        let trace = 8.0;
        assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-10);
    }
}
