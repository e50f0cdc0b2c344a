//! One-hidden-layer perceptron trained with L-BFGS.
//!
//! Architecture: `x -> relu(W1' x + b1) -> w2 . h + b2 -> sigmoid`. The loss is
//! the mean binary cross-entropy plus `alpha/2 (|W1|^2 + |w2|^2)`; biases are
//! not penalised. Weights start uniform in `+-sqrt(6 / (fan_in + fan_out))`
//! from the classifier seed, biases at zero.
//!
//! Parameters are kept in one flat vector:
//! `[W1 (dim x hidden, column-major) | b1 | w2 | b2]`.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lbfgs::{self, LbfgsOptions};
use super::{require_both_classes, sigmoid, softplus};
use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub l2_alpha: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 256,
            l2_alpha: 1e-5,
            max_iters: 200,
            grad_tol: 1e-5,
            memory: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dim: usize,
    pub hidden: usize,
    /// `dim x hidden`.
    pub w1: DMatrix<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MlpModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut z = self.b2;
        for k in 0..self.hidden {
            let pre = self.b1[k] + self.w1.column(k).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if pre > 0.0 {
                z += self.w2[k] * pre;
            }
        }
        z
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// Shape bookkeeping for the flat parameter vector.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub dim: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.dim * self.hidden + 2 * self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], f64) {
        let (w1, rest) = theta.split_at(self.dim * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }
}

/// Seeded Glorot-uniform initial parameters.
pub fn initial_parameters(layout: Layout, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; layout.len()];
    let bound1 = (6.0 / (layout.dim + layout.hidden) as f64).sqrt();
    let bound2 = (6.0 / (layout.hidden + 1) as f64).sqrt();
    let n_w1 = layout.dim * layout.hidden;
    for v in &mut theta[..n_w1] {
        *v = rng.random_range(-bound1..bound1);
    }
    let w2_start = n_w1 + layout.hidden;
    for v in &mut theta[w2_start..w2_start + layout.hidden] {
        *v = rng.random_range(-bound2..bound2);
    }
    theta
}

/// Regularised mean cross-entropy and its gradient at `theta`.
pub fn loss_and_gradient(
    theta: &[f64],
    grad: &mut [f64],
    x: &DMatrix<f64>,
    targets: &[f64],
    layout: Layout,
    alpha: f64,
) -> f64 {
    let n = x.nrows();
    let (w1s, b1, w2s, b2) = layout.split(theta);
    let w1 = DMatrixView::from_slice(w1s, layout.dim, layout.hidden);
    let w2 = DVectorView::from_slice(w2s, layout.hidden);

    let mut pre = x * w1;
    for (k, mut col) in pre.column_iter_mut().enumerate() {
        col.add_scalar_mut(b1[k]);
    }
    let act = pre.map(|v| v.max(0.0));
    let logits = &act * w2;

    let mut data_loss = 0.0;
    let mut delta = DVector::zeros(n);
    for i in 0..n {
        let z = logits[i] + b2;
        // -[t log p + (1 - t) log(1 - p)] = softplus(z) - t z
        data_loss += softplus(z) - targets[i] * z;
        delta[i] = (sigmoid(z) - targets[i]) / n as f64;
    }
    let penalty = 0.5 * alpha * (w1s.iter().map(|v| v * v).sum::<f64>() + w2s.iter().map(|v| v * v).sum::<f64>());

    let grad_w2 = act.tr_mul(&delta);
    let mut d_hidden = &delta * w2.transpose();
    d_hidden.zip_apply(&pre, |d, p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    let grad_w1 = x.tr_mul(&d_hidden);

    let n_w1 = layout.dim * layout.hidden;
    let h = layout.hidden;
    for (g, (dw, w)) in grad[..n_w1].iter_mut().zip(grad_w1.iter().zip(w1s)) {
        *g = dw + alpha * w;
    }
    for (k, g) in grad[n_w1..n_w1 + h].iter_mut().enumerate() {
        *g = d_hidden.column(k).sum();
    }
    for (k, g) in grad[n_w1 + h..n_w1 + 2 * h].iter_mut().enumerate() {
        *g = grad_w2[k] + alpha * w2s[k];
    }
    grad[n_w1 + 2 * h] = delta.sum();

    data_loss / n as f64 + penalty
}

pub fn train_mlp(x: &DMatrix<f64>, y: &[Label], params: &MlpParams) -> Result<MlpModel> {
    require_both_classes(y, "mlp")?;
    if x.nrows() < 2 {
        return Err(Error::Empty("mlp needs at least two samples"));
    }
    let layout = Layout {
        dim: x.ncols(),
        hidden: params.hidden,
    };
    let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let theta0 = initial_parameters(layout, params.seed);
    let options = LbfgsOptions {
        memory: params.memory,
        max_iters: params.max_iters,
        grad_tol: params.grad_tol,
    };
    let result = lbfgs::minimize(
        |theta, grad| loss_and_gradient(theta, grad, x, &targets, layout, params.l2_alpha),
        theta0,
        &options,
    )?;
    if !result.value.is_finite() {
        return Err(Error::Numerical(format!("mlp: non-finite loss {}", result.value)));
    }

    let (w1, b1, w2, b2) = layout.split(&result.x);
    Ok(MlpModel {
        dim: layout.dim,
        hidden: layout.hidden,
        w1: DMatrix::from_column_slice(layout.dim, layout.hidden, w1),
        b1: b1.to_vec(),
        w2: w2.to_vec(),
        b2,
        seed: params.seed,
        initial_loss: result.initial_value,
        final_loss: result.value,
        iterations: result.iterations,
        converged: result.converged,
    })
}
