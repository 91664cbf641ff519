//! Small dense linear algebra: a row-major matrix, a rank-revealing thin QR
//! used by the least-squares fits, and a one-sided Jacobi SVD.

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data does not fill the matrix");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. All rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_columns(columns: &[Vec<T>]) -> Self {
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged columns");
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut m = Self::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            for (jj, &j) in cols.iter().enumerate() {
                m[(i, jj)] = self[(i, j)];
            }
        }
        m
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Thin QR of a column set by modified Gram-Schmidt with one
/// reorthogonalization pass. Columns whose residual norm falls below
/// `rel_tol` times their original norm are treated as linearly dependent on
/// the columns before them and dropped, so the kept set is the largest
/// independent prefix-greedy subset.
#[derive(Debug, Clone)]
pub struct ThinQr<T> {
    q: Vec<Vec<T>>,
    r: Vec<Vec<T>>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

impl<T: Real> ThinQr<T> {
    pub fn new(a: &Matrix<T>, rel_tol: T) -> Self {
        let mut q: Vec<Vec<T>> = Vec::new();
        let mut r: Vec<Vec<T>> = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..a.ncols() {
            let mut v = a.column(j);
            let original = norm(&v);
            let mut coeffs = vec![T::zero(); q.len()];
            for _pass in 0..2 {
                for (k, qk) in q.iter().enumerate() {
                    let c = dot(qk, &v);
                    coeffs[k] = coeffs[k] + c;
                    for (vi, &qi) in v.iter_mut().zip(qk) {
                        *vi = *vi - c * qi;
                    }
                }
            }
            let rest = norm(&v);
            if original == T::zero() || rest <= rel_tol * original {
                dropped.push(j);
                continue;
            }
            for vi in &mut v {
                *vi = *vi / rest;
            }
            coeffs.push(rest);
            q.push(v);
            r.push(coeffs);
            kept.push(j);
        }
        Self { q, r, kept, dropped }
    }

    /// Indices of the columns that entered the basis.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Indices of columns found dependent on earlier ones.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn is_full_rank(&self) -> bool {
        self.dropped.is_empty()
    }

    /// Least-squares coefficients for the kept columns.
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let k = self.q.len();
        let mut qty: Vec<T> = self.q.iter().map(|qj| dot(qj, y)).collect();
        // back substitution; r[j][i] holds R[i][j]
        let mut beta = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for j in i + 1..k {
                s = s - self.r[j][i] * beta[j];
            }
            beta[i] = s / self.r[i][i];
            qty[i] = beta[i];
        }
        beta
    }
}

/// Singular values and right singular vectors from a one-sided Jacobi sweep.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// Singular values, sorted in decreasing order.
    pub singular_values: Vec<T>,
    /// Right singular vectors as columns, matching `singular_values`.
    pub v: Matrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        let m = a.nrows();
        let n = a.ncols();
        let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
        let mut v = Matrix::zeros(n, n);
        for i in 0..n {
            v[(i, i)] = T::one();
        }
        let eps = T::epsilon();
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha = dot(&cols[p], &cols[p]);
                    let beta = dot(&cols[q], &cols[q]);
                    let gamma = dot(&cols[p], &cols[q]);
                    if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == T::zero() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let ap = cols[p][i];
                        let aq = cols[q][i];
                        cols[p][i] = c * ap - s * aq;
                        cols[q][i] = s * ap + c * aq;
                    }
                    for i in 0..n {
                        let vp = v[(i, p)];
                        let vq = v[(i, q)];
                        v[(i, p)] = c * vp - s * vq;
                        v[(i, q)] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        let sv: Vec<T> = cols.iter().map(|c| norm(c)).collect();
        order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap_or(std::cmp::Ordering::Equal));
        let mut vs = Matrix::zeros(n, n);
        for (jj, &j) in order.iter().enumerate() {
            for i in 0..n {
                vs[(i, jj)] = v[(i, j)];
            }
        }
        Self {
            singular_values: order.iter().map(|&j| sv[j]).collect(),
            v: vs,
        }
    }
}

/// Solves a square system by Gaussian elimination with partial pivoting.
/// Returns `None` for a numerically singular matrix.
pub fn solve_square<T: Real>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[(i, col)]
                    .abs()
                    .partial_cmp(&m[(j, col)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if m[(pivot, col)].abs() <= scale * T::lit(T::TINY) {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = tmp;
            }
            rhs.swap(col, pivot);
        }
        for i in col + 1..n {
            let f = m[(i, col)] / m[(col, col)];
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                m[(i, j)] = m[(i, j)] - f * m[(col, j)];
            }
            rhs[i] = rhs[i] - f * rhs[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s = s - m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_detects_duplicate_column() {
        let a = Matrix::from_columns(&[
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0, 2.0, 4.0, 6.0],
            vec![1.0, 0.0, 1.0, 0.0],
        ]);
        let qr = ThinQr::new(&a, 1e-10);
        assert_eq!(qr.kept(), &[0, 1, 3]);
        assert_eq!(qr.dropped(), &[2]);
    }

    #[test]
    fn qr_solves_exact_system() {
        let a = Matrix::from_columns(&[vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let beta = ThinQr::<f64>::new(&a, 1e-12).solve(&[1.0, 3.0, 5.0]);
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert!((beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn svd_finds_null_vector() {
        // rows orthogonal to (1, -2, 1)
        let a = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![2.0, 1.0, 0.0]]);
        let svd = Svd::<f64>::new(&a);
        assert!(svd.singular_values[2].abs() < 1e-12);
        let v: Vec<f64> = svd.v.column(2);
        let k = v[0];
        assert!((v[1] / k + 2.0).abs() < 1e-10);
        assert!((v[2] / k - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_elimination_pivots() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        let x = solve_square(&a, &[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(solve_square(&singular, &[1.0, 2.0]).is_none());
    }
}
