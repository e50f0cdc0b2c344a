//! Gaussian-process classification with a logistic likelihood and the
//! Laplace approximation to the latent posterior.
//!
//! Training runs Newton's method on
//! `psi(f) = log p(y | f) - 1/2 f' K^-1 f` in the numerically stable form
//! built around `B = I + W^1/2 K W^1/2`, where `W` is the negative Hessian
//! of the log likelihood. A halving line search keeps every accepted step
//! non-decreasing in `psi`. The fitted model keeps the Cholesky factor of
//! `B` at the mode so prediction never refactorises.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{require_both_classes, sigmoid, signed_targets, softplus};
use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub max_newton_iters: usize,
    pub newton_tol: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams {
            signal_variance: 4.0,
            length_scale: 5.0,
            max_newton_iters: 100,
            newton_tol: 1e-6,
        }
    }
}

/// `signal_variance * exp(-|x1 - x2|^2 / (2 length_scale^2))`.
pub fn kernel_rbf(x1: &[f64], x2: &[f64], params: &GpParams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    Ok(rbf(x1.iter().copied(), x2.iter().copied(), params))
}

fn rbf(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, params: &GpParams) -> f64 {
    let sq: f64 = a.zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    params.signal_variance * (-sq / (2.0 * params.length_scale * params.length_scale)).exp()
}

/// Kernel matrix of the rows of `x`, symmetric with an exact diagonal.
pub fn gram_matrix(x: &DMatrix<f64>, params: &GpParams) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = rbf(x.row(i).iter().copied(), x.row(j).iter().copied(), params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub params: GpParams,
    pub x_train: DMatrix<f64>,
    /// Targets in `{-1, +1}`.
    pub y_train: Vec<f64>,
    /// Posterior mode of the latent function at the training inputs.
    pub f_hat: Vec<f64>,
    pub w_sqrt: Vec<f64>,
    /// Lower Cholesky factor of `I + W^1/2 K W^1/2` at the mode.
    pub chol_b: DMatrix<f64>,
    /// `d log p(y | f) / df` at the mode; the predictive mean weights.
    pub grad_log_lik: Vec<f64>,
    /// Laplace objective value after each accepted Newton step.
    pub objective_trace: Vec<f64>,
    pub newton_iters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpPrediction {
    pub latent_mean: f64,
    pub latent_var: f64,
    pub probability: f64,
    pub label: Label,
}

/// Logistic-over-Gaussian integral approximated by `sigmoid(mu / sqrt(1 + pi var / 8))`.
pub fn predictive_probability(mean: f64, var: f64) -> f64 {
    sigmoid(mean / (1.0 + PI * var.max(0.0) / 8.0).sqrt())
}

impl GpModel {
    pub fn predict(&self, x: &[f64]) -> Result<GpPrediction> {
        if x.len() != self.x_train.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x_train.ncols(),
                found: x.len(),
            });
        }
        let n = self.x_train.nrows();
        let k_star = DVector::from_iterator(
            n,
            (0..n).map(|i| rbf(self.x_train.row(i).iter().copied(), x.iter().copied(), &self.params)),
        );
        let latent_mean: f64 = k_star.iter().zip(&self.grad_log_lik).map(|(k, g)| k * g).sum();
        let scaled = DVector::from_iterator(n, k_star.iter().zip(&self.w_sqrt).map(|(k, s)| k * s));
        let v = self
            .chol_b
            .solve_lower_triangular(&scaled)
            .ok_or_else(|| Error::Numerical("gp: singular Cholesky factor".into()))?;
        let latent_var = (self.params.signal_variance - v.dot(&v)).max(0.0);
        let probability = predictive_probability(latent_mean, latent_var);
        Ok(GpPrediction {
            latent_mean,
            latent_var,
            probability,
            label: Label::from(probability >= 0.5),
        })
    }
}

pub fn train_gp(x: &DMatrix<f64>, y: &[Label], params: &GpParams) -> Result<GpModel> {
    require_both_classes(y, "gp")?;
    let n = x.nrows();
    let ys = signed_targets(y);
    let k = gram_matrix(x, params);

    let log_lik = |f: &DVector<f64>| -> f64 { f.iter().zip(&ys).map(|(f, y)| -softplus(-y * f)).sum() };
    // psi(f) with f = K a, so f' K^-1 f = a' f.
    let objective = |a: &DVector<f64>, f: &DVector<f64>| -0.5 * a.dot(f) + log_lik(f);

    let mut a = DVector::zeros(n);
    let mut f = DVector::zeros(n);
    let mut psi = objective(&a, &f);
    let mut trace = vec![psi];
    let mut iters = 0;

    while iters < params.max_newton_iters {
        iters += 1;
        let state = LaplaceState::at(&f, &ys, &k)?;
        // Newton target: a_new = b - W^1/2 B^-1 W^1/2 K b, b = W f + grad.
        let b = state.w.component_mul(&f) + &state.grad;
        let kb = &k * &b;
        let rhs = state.w_sqrt.component_mul(&kb);
        let solved = state.chol.solve(&rhs);
        let a_newton = &b - state.w_sqrt.component_mul(&solved);

        let direction = &a_newton - &a;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let a_try = &a + &direction * step;
            let f_try = &k * &a_try;
            let psi_try = objective(&a_try, &f_try);
            if psi_try.is_finite() && psi_try >= psi {
                accepted = Some((a_try, f_try, psi_try));
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, f_new, psi_new)) = accepted else {
            break;
        };
        let change = psi_new - psi;
        a = a_new;
        f = f_new;
        psi = psi_new;
        trace.push(psi);
        if change < params.newton_tol {
            break;
        }
    }

    let state = LaplaceState::at(&f, &ys, &k)?;
    Ok(GpModel {
        params: params.clone(),
        x_train: x.clone(),
        y_train: ys,
        f_hat: f.iter().copied().collect(),
        w_sqrt: state.w_sqrt.iter().copied().collect(),
        chol_b: state.chol.l(),
        grad_log_lik: state.grad.iter().copied().collect(),
        objective_trace: trace,
        newton_iters: iters,
    })
}

struct LaplaceState {
    w: DVector<f64>,
    w_sqrt: DVector<f64>,
    grad: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl LaplaceState {
    fn at(f: &DVector<f64>, ys: &[f64], k: &DMatrix<f64>) -> Result<Self> {
        let n = f.len();
        let pi = DVector::from_iterator(n, f.iter().map(|&v| sigmoid(v)));
        let w = DVector::from_iterator(n, pi.iter().map(|p| p * (1.0 - p)));
        let w_sqrt = w.map(f64::sqrt);
        let grad = DVector::from_iterator(n, pi.iter().zip(ys).map(|(p, y)| (y + 1.0) / 2.0 - p));
        let mut bmat = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                bmat[(i, j)] += w_sqrt[i] * k[(i, j)] * w_sqrt[j];
            }
        }
        let chol = cholesky_with_jitter(bmat)?;
        Ok(LaplaceState {
            w,
            w_sqrt,
            grad,
            chol,
        })
    }
}

/// Cholesky factorisation, retrying with diagonal jitter from 1e-10 up to 1e-6.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows();
    let mut jitter = 1e-10;
    while jitter <= 1e-6 * (1.0 + 1e-9) {
        let mut tried = m.clone();
        for i in 0..n {
            tried[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(tried) {
            log::debug!("gp: Cholesky needed jitter {jitter:e}");
            return Ok(chol);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("gp: matrix not positive definite after jitter 1e-6".into()))
}
