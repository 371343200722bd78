//! Vector kernels and the linear-operator abstraction used by the solvers.
//!
//! Reductions are split into fixed-size chunks whose partial sums are added
//! in order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

const CHUNK: usize = 1 << 14;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.into_iter().sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    y.par_chunks_mut(CHUNK).zip(x.par_chunks(CHUNK)).for_each(|(yc, xc)| {
        for (yv, xv) in yc.iter_mut().zip(xc) {
            *yv += alpha * xv;
        }
    });
}

/// `y = x + beta * y`
pub fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    y.par_chunks_mut(CHUNK).zip(x.par_chunks(CHUNK)).for_each(|(yc, xc)| {
        for (yv, xv) in yc.iter_mut().zip(xc) {
            *yv = xv + beta * *yv;
        }
    });
}

/// Squared distance `|a - b|^2`.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .collect();
    partial.into_iter().sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.par_chunks(CHUNK).all(|c| c.iter().all(|v| v.is_finite()))
}

/// A real linear map `A: R^n -> R^m` together with its transpose.
pub trait LinearOperator: Sync {
    /// `n`, the length of the input vector.
    fn domain_len(&self) -> usize;
    /// `m`, the length of the output vector.
    fn range_len(&self) -> usize;

    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `out += scale * A^T y`
    fn apply_adjoint_add(&self, y: &[f64], scale: f64, out: &mut [f64]);

    /// `out = A^T y`
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.apply_adjoint_add(y, 1.0, out);
    }
}

/// Row-major dense matrix as an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseOperator { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseOperator { rows: n, cols: n, data }
    }

    /// Materializes any operator by probing it with unit vectors.
    pub fn probe(op: &dyn LinearOperator) -> Self {
        let (m, n) = (op.range_len(), op.domain_len());
        let mut data = vec![0.0; m * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            for i in 0..m {
                data[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        DenseOperator { rows: m, cols: n, data }
    }
}

impl LinearOperator for DenseOperator {
    fn domain_len(&self) -> usize {
        self.cols
    }

    fn range_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * self.cols..(i + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += scale * a * yi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_match_serial() {
        let a: Vec<f64> = (0..100_000).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..100_000).map(|i| (i as f64 * 0.11).cos()).collect();
        let serial: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - serial).abs() < 1e-9 * serial.abs().max(1.0));
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((dist_sq(&a, &b) - d).abs() < 1e-9 * d);
    }

    #[test]
    fn vector_updates() {
        let x = vec![1.0, 2.0, 3.0];
        let mut y = vec![1.0, 1.0, 1.0];
        axpy(2.0, &x, &mut y);
        assert_eq!(y, vec![3.0, 5.0, 7.0]);
        xpby(&x, 0.5, &mut y);
        assert_eq!(y, vec![2.5, 4.5, 6.5]);
    }

    #[test]
    fn dense_adjoint_is_transpose() {
        let a = DenseOperator::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 3];
        a.apply_adjoint(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
        assert_eq!(DenseOperator::probe(&a), a);
    }
}
