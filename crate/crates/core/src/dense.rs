//! Small dense linear algebra: a row-major matrix operator and a one-sided
//! Jacobi SVD for the projected problems.

use crate::projector::LinearOperator;
use crate::scalar::{vecops, Real};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = vecops::dot(&self.data[i * self.cols..(i + 1) * self.cols], x);
        }
    }

    fn apply_adjoint_into(&self, y: &[T], x: &mut [T]) {
        x.iter_mut().for_each(|v| *v = T::zero());
        for (i, &yi) in y.iter().enumerate() {
            vecops::axpy(yi, &self.data[i * self.cols..(i + 1) * self.cols], x);
        }
    }
}

/// Thin SVD `A = U diag(s) Vᵀ` of an `m x n` matrix with `m ≥ n`, singular
/// values sorted in decreasing order. `u` and `v` hold columns.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Vec<Vec<T>>,
    pub s: Vec<T>,
    pub v: Vec<Vec<T>>,
}

/// One-sided Jacobi SVD; `cols` are the columns of `A`, all of equal length `m ≥ cols.len()`.
pub fn svd_jacobi<T: Real>(cols: &[Vec<T>]) -> Svd<T> {
    let n = cols.len();
    let mut w: Vec<Vec<T>> = cols.to_vec();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| if i == j { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    let tol = T::epsilon() * T::lit(4.0);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = vecops::dot(&w[p], &w[p]);
                let beta = vecops::dot(&w[q], &w[q]);
                let gamma = vecops::dot(&w[p], &w[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = w.iter().map(|c| vecops::norm(c)).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut vv = Vec::with_capacity(n);
    for &j in &order {
        let sj = norms[j];
        let uj = if sj > T::zero() {
            w[j].iter().map(|&x| x / sj).collect()
        } else {
            vec![T::zero(); w[j].len()]
        };
        u.push(uj);
        s.push(sj);
        vv.push(v[j].clone());
    }
    Svd { u, s, v: vv }
}

fn rotate<T: Real>(m: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = m.split_at_mut(q);
    let a = &mut lo[p];
    let b = &mut hi[0];
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number<T: Real>(cols: &[Vec<T>]) -> T {
    if cols.is_empty() {
        return T::one();
    }
    let s = svd_jacobi(cols).s;
    let smax = s[0];
    let smin = *s.last().expect("nonempty");
    if smin <= T::zero() {
        T::infinity()
    } else {
        smax / smin
    }
}
