//! Limited-memory BFGS for smooth unconstrained minimisation.
//!
//! Directions come from the standard two-loop recursion over the last
//! `memory` curvature pairs, scaled by `s'y / y'y`. Steps are chosen by
//! backtracking until the Armijo condition holds; pairs with `s'y <= 0`
//! are skipped so the implicit inverse Hessian stays positive definite.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the largest absolute gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 200,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `objective`, which returns the value and writes the gradient.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, options: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite loss {value} at the initial point")));
    }
    let initial_value = value;

    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(options.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(options.memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(options.memory);

    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = max_abs(&grad) < options.grad_tol;

    while !converged && iterations < options.max_iters {
        // Two-loop recursion: direction = -H grad.
        let mut q = grad.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for k in (0..m).rev() {
            alphas[k] = rho_hist[k] * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alphas[k] * yi;
            }
        }
        let gamma = match m {
            0 => 1.0 / max_abs(&grad).max(1.0),
            _ => dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for k in 0..m {
            let beta = rho_hist[k] * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += (alphas[k] - beta) * si;
            }
        }
        let mut direction: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &direction);
        if slope.is_nan() || slope >= 0.0 {
            // Not a descent direction: restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            let scale = 1.0 / max_abs(&grad).max(1.0);
            direction = grad.iter().map(|g| -g * scale).collect();
            slope = dot(&grad, &direction);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut value_new = value;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_new[i] = x[i] + step * direction[i];
            }
            value_new = objective(&x_new, &mut grad_new);
            if value_new.is_finite() && value_new <= value + ARMIJO_C1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            log::debug!("lbfgs: line search failed at iteration {iterations}");
            break;
        }
        if grad_new.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == options.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        value = value_new;
        converged = max_abs(&grad) < options.grad_tol;
    }

    Ok(LbfgsResult {
        grad_norm: max_abs(&grad),
        x,
        value,
        initial_value,
        iterations,
        converged,
    })
}
