//! Dense row-major `f64` matrices and the handful of factorizations the
//! projection code needs.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use libm::{fabs, sqrt};

use crate::error::{numerical, usage, Result};

/// Condition-number ceiling for explicit inverses.
pub const CONDITION_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(usage!("matrix data has {} entries, expected {rows}x{cols}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(numerical!("matrix data contains non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test and literal use).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// New matrix holding the given rows of `self`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    /// New matrix holding the given columns of `self`, in order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        Self::from_fn(self.rows, indices.len(), |i, j| self[(i, indices[j])])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(usage!("cannot multiply {}x{} by {}x{}", self.rows, self.cols, rhs.rows, rhs.cols));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(usage!("cannot multiply ({}x{})^T by {}x{}", self.rows, self.cols, rhs.rows, rhs.cols));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(usage!("vector of length {} does not match {} columns", v.len(), self.cols));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    fn check_same_shape(&self, rhs: &Matrix, what: &str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(usage!("{what}: shapes {}x{} and {}x{} differ", self.rows, self.cols, rhs.rows, rhs.cols));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs, "add")?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs, "sub")?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha * rhs`
    pub fn axpy(&mut self, alpha: f64, rhs: &Matrix) -> Result<()> {
        self.check_same_shape(rhs, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        let data = self.data.iter().map(|a| alpha * a).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius(&self) -> f64 {
        sqrt(self.data.iter().map(|a| a * a).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(fabs(*a)))
    }

    /// `||self - rhs||_F / max(||rhs||_F, tiny)`
    pub fn relative_error(&self, reference: &Matrix) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius();
        let scale = reference.frobenius();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst
    }

    /// Replaces a square matrix with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| fabs(self[(i, j)])).sum::<f64>()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

/// Inverse of a general square matrix by Gauss-Jordan elimination with
/// partial pivoting. Fails when the 1-norm condition number exceeds
/// [`CONDITION_CAP`].
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(usage!("cannot invert a {}x{} matrix", a.rows, a.cols));
    }
    let n = a.rows;
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(numerical!("matrix is singular (all zeros)"));
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| fabs(work[(x, col)]).total_cmp(&fabs(work[(y, col)]))).unwrap_or(col);
        let p = work[(pivot, col)];
        if fabs(p) <= scale * f64::EPSILON * n as f64 {
            return Err(numerical!("matrix is singular to working precision"));
        }
        if pivot != col {
            for j in 0..n {
                work.data.swap(pivot * n + j, col * n + j);
                inv.data.swap(pivot * n + j, col * n + j);
            }
        }
        let inv_p = 1.0 / p;
        for j in 0..n {
            work[(col, j)] *= inv_p;
            inv[(col, j)] *= inv_p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = work[(i, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                work[(i, j)] -= factor * work[(col, j)];
                inv[(i, j)] -= factor * inv[(col, j)];
            }
        }
    }
    let cond = a.norm1() * inv.norm1();
    if !(cond.is_finite() && cond <= CONDITION_CAP) {
        return Err(numerical!("condition number {cond:e} exceeds the cap of {CONDITION_CAP:e}"));
    }
    if !inv.is_finite() {
        return Err(numerical!("inverse has non-finite entries"));
    }
    Ok(inv)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(usage!("cholesky needs a square matrix, got {}x{}", a.rows, a.cols));
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(numerical!("matrix is not positive definite (pivot {j})"));
        }
        let d = sqrt(d);
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(usage!("eigenvalues need a square matrix"));
    }
    let n = a.rows;
    let mut m = a.clone();
    m.symmetrize();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (fabs(theta) + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Spectral norm of a symmetric matrix by power iteration, stopping once
/// successive Rayleigh estimates agree to `rel_tol`.
pub fn symmetric_spectral_norm(a: &Matrix, rel_tol: f64) -> Result<f64> {
    if !a.is_square() {
        return Err(usage!("spectral norm here needs a square matrix"));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(0.0);
    }
    // Start off-axis so the iterate is unlikely to be orthogonal to the top
    // eigenvector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        // Iterate on A^2 so negative eigenvalues do not cause oscillation.
        let w = a.matvec(&a.matvec(&v)?)?;
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        let next = sqrt(nw);
        v = w.into_iter().map(|x| x / nw).collect();
        if fabs(next - estimate) <= rel_tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_and_transpose_agree() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab, Matrix::from_rows(&[[4.0, 5.0], [10.0, 11.0]]));
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let inv = inverse(&a).unwrap();
        let eye = a.matmul(&inv).unwrap();
        assert!(eye.relative_error(&Matrix::identity(3)).unwrap() < 1e-14);
    }

    #[test]
    fn inverse_rejects_ill_conditioned() {
        let a = Matrix::diag(&[1.0, 1e-13]);
        assert!(matches!(inverse(&a), Err(crate::Error::Numerical(_))));
        assert!(inverse(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(back.relative_error(&a).unwrap() < 1e-15);
        assert!(cholesky(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]])).is_err());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let eig = symmetric_eigenvalues(&a).unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-14 && (eig[1] - 3.0).abs() < 1e-14);
        let d = Matrix::diag(&[-5.0, 0.5, 2.0]);
        assert_eq!(symmetric_eigenvalues(&d).unwrap(), vec![-5.0, 0.5, 2.0]);
    }

    #[test]
    fn power_iteration_matches_jacobi() {
        let a = Matrix::from_rows(&[[3.0, 1.0, 0.0], [1.0, -4.0, 0.5], [0.0, 0.5, 1.0]]);
        let eig = symmetric_eigenvalues(&a).unwrap();
        let top = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let est = symmetric_spectral_norm(&a, 1e-12).unwrap();
        assert!((est - top).abs() < 1e-8 * top, "{est} vs {top}");
    }

    #[test]
    fn symmetrize_averages() {
        let mut a = Matrix::from_rows(&[[1.0, 2.0], [4.0, 1.0]]);
        assert_eq!(a.max_asymmetry(), 2.0);
        a.symmetrize();
        assert_eq!(a, Matrix::from_rows(&[[1.0, 3.0], [3.0, 1.0]]));
    }

    #[test]
    fn from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
    }
}
