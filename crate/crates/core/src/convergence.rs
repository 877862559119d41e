//! Convergence checks for the projected update on convex quadratics
//! `L(W) = 1/2 ||A vec(W) - b||^2` (row-major `vec`).

use alloc::vec::Vec;

use crate::error::{usage, Error, Result};
use crate::matrix::{cholesky, inverse, symmetric_eigenvalues, Matrix};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    a: Matrix,
    b: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Quadratic {
    /// `a` must be `k x (rows * cols)` with `A^T A` positive definite so the
    /// minimizer is unique.
    pub fn new(a: Matrix, b: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if a.cols() != rows * cols {
            return Err(usage!("A has {} columns, W has {} entries", a.cols(), rows * cols));
        }
        if b.len() != a.rows() {
            return Err(usage!("b has length {}, A has {} rows", b.len(), a.rows()));
        }
        let hessian = a.t_matmul(&a)?;
        cholesky(&hessian).map_err(|_| {
            Error::Precondition("A^T A is not positive definite; the quadratic has no unique minimizer".into())
        })?;
        Ok(Self { a, b, rows, cols })
    }

    /// Random instance with a tall Gaussian `A` (full column rank with
    /// probability one).
    pub fn random(rng: &mut SplitMix64, rows: usize, cols: usize) -> Result<Self> {
        let n = rows * cols;
        let k = n + 2;
        let a = Matrix::from_fn(k, n, |_, _| rng.normal());
        let b = (0..k).map(|_| rng.normal()).collect();
        Self::new(a, b, rows, cols)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn residual(&self, w: &Matrix) -> Result<Vec<f64>> {
        let mut r = self.a.matvec(w.as_slice())?;
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        Ok(r)
    }

    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        Ok(0.5 * self.residual(w)?.iter().map(|r| r * r).sum::<f64>())
    }

    pub fn gradient(&self, w: &Matrix) -> Result<Matrix> {
        let r = Matrix::column_vector(&self.residual(w)?);
        let g = self.a.t_matmul(&r)?;
        Matrix::from_vec(self.rows, self.cols, g.into_vec())
    }

    /// Lipschitz constant of the gradient: the top eigenvalue of `A^T A`.
    pub fn smoothness(&self) -> Result<f64> {
        let eig = symmetric_eigenvalues(&self.a.t_matmul(&self.a)?)?;
        Ok(*eig.last().unwrap_or(&0.0))
    }

    pub fn minimizer(&self) -> Result<Matrix> {
        let hessian = self.a.t_matmul(&self.a)?;
        let rhs = self.a.t_matmul(&Matrix::column_vector(&self.b))?;
        let w = inverse(&hessian)?.matmul(&rhs)?;
        Matrix::from_vec(self.rows, self.cols, w.into_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `L(W_t) - L(W*)` for `t = 1..=steps`.
    pub gaps: Vec<f64>,
    /// `(2 L / t) ||W_0 - W*||_F^2` for the same `t`.
    pub bounds: Vec<f64>,
    pub holds: bool,
}

/// Runs `W <- W - eta grad L(W)` (the projected update with `P = I`) and
/// checks the `O(1/t)` gap bound at every step.
pub fn descent_rate_check(q: &Quadratic, w0: &Matrix, eta: f64, steps: usize) -> Result<ConvergenceReport> {
    if w0.shape() != q.shape() {
        return Err(usage!("initial point has the wrong shape"));
    }
    let smooth = q.smoothness()?;
    let w_star = q.minimizer()?;
    let best = q.loss(&w_star)?;
    let dist2 = {
        let d = w0.sub(&w_star)?.frobenius();
        d * d
    };
    let mut w = w0.clone();
    let mut gaps = Vec::with_capacity(steps);
    let mut bounds = Vec::with_capacity(steps);
    let mut holds = true;
    for t in 1..=steps {
        let g = q.gradient(&w)?;
        w.axpy(-eta, &g)?;
        let gap = q.loss(&w)? - best;
        let bound = 2.0 * smooth / t as f64 * dist2;
        holds &= gap <= bound + 1e-9;
        gaps.push(gap);
        bounds.push(bound);
    }
    Ok(ConvergenceReport { gaps, bounds, holds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    /// `L(W_t)` for `t = 0..=steps`.
    pub losses: Vec<f64>,
    pub monotone: bool,
}

/// Runs `W <- W - eta P grad L(W)` with a fixed symmetric PSD `P` (acting on
/// the row dimension of `W`, eigenvalues at most 1) and checks that the loss
/// never increases.
pub fn projected_descent_check(
    q: &Quadratic,
    w0: &Matrix,
    p: &Matrix,
    eta: f64,
    steps: usize,
) -> Result<DescentReport> {
    let (rows, _) = q.shape();
    if p.shape() != (rows, rows) {
        return Err(usage!("projection must be {rows}x{rows}"));
    }
    if p.max_asymmetry() > 1e-9 {
        return Err(Error::Precondition("projection is not symmetric".into()));
    }
    let eig = symmetric_eigenvalues(p)?;
    if eig[0] < -1e-12 || eig[eig.len() - 1] > 1.0 + 1e-12 {
        return Err(Error::Precondition("projection eigenvalues must lie in [0, 1]".into()));
    }
    let mut w = w0.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    losses.push(q.loss(&w)?);
    let mut monotone = true;
    for _ in 0..steps {
        let g = p.matmul(&q.gradient(&w)?)?;
        w.axpy(-eta, &g)?;
        let l = q.loss(&w)?;
        // Relative slack for rounding once the iterate has converged.
        monotone &= l <= losses[losses.len() - 1] * (1.0 + 1e-12) + 1e-15;
        losses.push(l);
    }
    Ok(DescentReport { losses, monotone })
}

/// Random symmetric PSD matrix with spectrum in `[0, 1]`: `Q diag(u) Q^T`
/// for a Gram-Schmidt orthogonal `Q` and uniform `u`.
pub fn random_contraction(rng: &mut SplitMix64, n: usize) -> Matrix {
    let raw = Matrix::from_fn(n, n, |_, _| rng.normal());
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = raw.column(j);
        for u in &q {
            let proj = crate::matrix::dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = crate::matrix::norm2(&v);
        v.iter_mut().for_each(|a| *a /= norm);
        q.push(v);
    }
    let spectrum: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let mut p = Matrix::from_fn(n, n, |i, k| (0..n).map(|j| q[j][i] * spectrum[j] * q[j][k]).sum());
    p.symmetrize();
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn one_dimensional_closed_form() {
        let q = Quadratic::new(Matrix::from_rows(&[[1.0]]), vec![0.0], 1, 1).unwrap();
        assert_eq!(q.smoothness().unwrap(), 1.0);
        let r = descent_rate_check(&q, &Matrix::from_rows(&[[1.0]]), 1.0, 5).unwrap();
        assert_eq!(r.gaps, vec![0.0; 5]);
        assert!(r.holds);
    }

    #[test]
    fn starting_at_optimum() {
        let mut rng = SplitMix64::new(4);
        let q = Quadratic::random(&mut rng, 2, 3).unwrap();
        let w_star = q.minimizer().unwrap();
        let eta = 1.0 / q.smoothness().unwrap();
        let r = descent_rate_check(&q, &w_star, eta, 20).unwrap();
        assert!(r.gaps.iter().all(|g| g.abs() < 1e-12), "{:?}", r.gaps);
        assert!(r.holds);
    }

    #[test]
    fn rejects_singular_hessian() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(Quadratic::new(a, vec![0.0, 1.0], 1, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn descent_rejects_expansive_projection() {
        let mut rng = SplitMix64::new(1);
        let q = Quadratic::random(&mut rng, 2, 2).unwrap();
        let w0 = Matrix::zeros(2, 2);
        assert!(projected_descent_check(&q, &w0, &Matrix::diag(&[2.0, 0.5]), 0.1, 3).is_err());
        assert!(projected_descent_check(&q, &w0, &Matrix::from_rows(&[[0.5, 0.2], [0.0, 0.5]]), 0.1, 3).is_err());
    }

    #[test]
    fn contraction_spectrum() {
        let mut rng = SplitMix64::new(2);
        let p = random_contraction(&mut rng, 5);
        let eig = symmetric_eigenvalues(&p).unwrap();
        assert!(eig[0] >= -1e-12 && eig[4] <= 1.0 + 1e-12);
    }
}
