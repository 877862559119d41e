//! Orthogonal gradient descent primitives.
//!
//! Each shared layer `W` (shape `d x m`, applied as `x^T W` to a `d`-dimensional
//! input) owns a [`ProjectionState`]. Gradients are multiplied by `P` before
//! the step, and after the step the layer's inputs for that batch are folded
//! into `P` with the rank-one recursion
//!
//! ```text
//! P <- P - (P x x^T P) / (lambda + x^T P x)
//! ```
//!
//! Starting from `P = I` this reproduces the closed form
//! `P = I - X (lambda I + X^T X)^-1 X^T = lambda (lambda I + X X^T)^-1` for the
//! matrix `X` whose columns are every absorbed input, so `P G` is nearly
//! orthogonal to everything the layer has seen.

use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{config, usage, Error, Result};
use crate::matrix::{dot, inverse, symmetric_spectral_norm, Matrix};
use crate::rng::SplitMix64;

/// Per-layer projection matrix with its regularizer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionState {
    p: Matrix,
    lambda: f64,
    absorbed_count: usize,
}

impl ProjectionState {
    /// Fresh state with `P = I_d`.
    pub fn new(d: usize, lambda: f64) -> Result<Self> {
        if d == 0 {
            return Err(config!("projection dimension must be at least 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(config!("lambda must be positive and finite, got {lambda}"));
        }
        Ok(Self { p: Matrix::identity(d), lambda, absorbed_count: 0 })
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn absorbed_count(&self) -> usize {
        self.absorbed_count
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    /// Restores `P = I` and forgets every absorbed feature.
    pub fn reset(&mut self) {
        self.p = Matrix::identity(self.dim());
        self.absorbed_count = 0;
    }

    /// `v^T P v`
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        Ok(dot(v, &self.p.matvec(v)?))
    }

    /// Folds one feature vector into `P`.
    pub fn absorb_sample(&mut self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(usage!("feature vector has length {}, projection is {d}x{d}", x.len()));
        }
        let px = self.p.matvec(x)?;
        let denom = self.lambda + dot(x, &px);
        let inv = 1.0 / denom;
        for i in 0..d {
            let scaled = px[i] * inv;
            if scaled == 0.0 {
                continue;
            }
            let row = self.p.row_mut(i);
            for (r, pj) in row.iter_mut().zip(&px) {
                *r -= scaled * pj;
            }
        }
        self.p.symmetrize();
        self.absorbed_count += 1;
        Ok(())
    }

    /// Folds in the columns of `x` (`d x N`). When `N > cap` a uniform
    /// subsample of `cap` columns is drawn from `rng` and absorbed in
    /// ascending column order; otherwise every column is absorbed in order.
    pub fn absorb_batch(&mut self, x: &Matrix, cap: usize, rng: &mut SplitMix64) -> Result<()> {
        if cap == 0 {
            return Err(config!("absorb cap must be at least 1"));
        }
        if x.rows() != self.dim() {
            return Err(usage!("feature matrix has {} rows, projection is {}x{}", x.rows(), self.dim(), self.dim()));
        }
        let n = x.cols();
        let columns: Vec<usize> = if n > cap {
            let mut picked = rng.sample_indices(n, cap);
            picked.sort_unstable();
            picked
        } else {
            (0..n).collect()
        };
        for j in columns {
            self.absorb_sample(&x.column(j))?;
        }
        Ok(())
    }
}

/// Closed-form projection `I - X (lambda I + X^T X)^-1 X^T` through an explicit
/// `N x N` inverse. Used as the oracle for the recursion and by
/// [`output_change_check`].
pub fn batch_projection(x: &Matrix, lambda: f64) -> Result<Matrix> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(config!("lambda must be positive, got {lambda}"));
    }
    let n = x.cols();
    let mut gram = x.t_matmul(x)?;
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let inv = inverse(&gram)?;
    let correction = x.matmul(&inv)?.matmul(&x.transpose())?;
    let mut p = Matrix::identity(x.rows()).sub(&correction)?;
    p.symmetrize();
    Ok(p)
}

/// `W - eta P G`
pub fn projected_step(w: &Matrix, g: &Matrix, state: &ProjectionState, eta: f64) -> Result<Matrix> {
    if w.shape() != g.shape() {
        return Err(usage!("weight {}x{} and gradient {}x{} differ in shape", w.rows(), w.cols(), g.rows(), g.cols()));
    }
    if g.rows() != state.dim() {
        return Err(usage!("gradient has {} rows but projection is {}x{}", g.rows(), state.dim(), state.dim()));
    }
    let pg = state.matrix().matmul(g)?;
    let mut out = w.clone();
    out.axpy(-eta, &pg)?;
    Ok(out)
}

/// `||W_after^T X - W_before^T X||_F`
pub fn output_change(w_before: &Matrix, w_after: &Matrix, x: &Matrix) -> Result<f64> {
    let delta = w_after.sub(w_before)?;
    Ok(delta.t_matmul(x)?.frobenius())
}

/// Both sides of the output-change bound for one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputChangeBound {
    /// `||(W - eta P G)^T X - W^T X||_F`
    pub delta: f64,
    /// `eta lambda sqrt(d) ||G^T||_F ||X||_F R (1 + lambda R)`
    pub bound: f64,
    /// `R = ||(X X^T)^-1||_2`
    pub r: f64,
    pub holds: bool,
}

/// Evaluates the output-change bound with `P` built from `X` in closed form.
/// `X X^T` must be invertible (full row rank).
pub fn output_change_check(w: &Matrix, g: &Matrix, x: &Matrix, lambda: f64, eta: f64) -> Result<OutputChangeBound> {
    let d = w.rows();
    if x.rows() != d {
        return Err(usage!("inputs have dimension {}, weights expect {d}", x.rows()));
    }
    let xxt = x.matmul(&x.transpose())?;
    let xxt_inv = inverse(&xxt).map_err(|e| {
        Error::Precondition(alloc::format!(
            "X X^T ({d}x{d}) is singular or ill-conditioned, X needs full row rank: {e}"
        ))
    })?;
    let r = symmetric_spectral_norm(&xxt_inv, 1e-10)?;
    let mut state = ProjectionState::new(d, lambda)?;
    state.p = batch_projection(x, lambda)?;
    let updated = projected_step(w, g, &state, eta)?;
    let delta = output_change(w, &updated, x)?;
    let bound = eta * lambda * sqrt(d as f64) * g.frobenius() * x.frobenius() * r * (1.0 + lambda * r);
    Ok(OutputChangeBound { delta, bound, r, holds: delta <= bound + 1e-9 })
}
