//! Soft-margin linear SVM.
//!
//! Minimises `1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))` with an
//! unregularised bias. The bias turns the dual into
//!
//! ```text
//! min_a 1/2 a'Qa - e'a   s.t. 0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j x_i . x_j
//! ```
//!
//! whose equality constraint forces coordinate descent to move two
//! coordinates at a time. Working pairs are picked with second-order
//! information. The solver stops once the maximal KKT violation is below
//! `kkt_tol` and the primal-dual gap is below `REL_GAP` of the primal
//! objective; the violation alone is an absolute bound and leaves too much
//! slack when the objective is small (well-separated data).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{require_both_classes, signed_targets, LinearModel};
use crate::error::{Error, Result};
use crate::Label;

const TAU: f64 = 1e-12;
/// Relative primal-dual gap required on top of the KKT test.
pub const REL_GAP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0 }
    }
}

pub const KKT_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SvmSolution {
    pub model: LinearModel,
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub kkt_violation: f64,
}

pub fn train_svm(x: &DMatrix<f64>, y: &[Label], params: &SvmParams) -> Result<LinearModel> {
    Ok(solve_dual(x, y, params.c, KKT_TOL)?.model)
}

/// Primal objective of `(w, b)` on the data.
pub fn primal_objective(model: &LinearModel, x: &DMatrix<f64>, y: &[Label], c: f64) -> f64 {
    let targets = signed_targets(y);
    let reg = 0.5 * model.w.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = (0..x.nrows())
        .map(|i| {
            let f = x.row(i).iter().zip(&model.w).map(|(a, b)| a * b).sum::<f64>() + model.b;
            (1.0 - targets[i] * f).max(0.0)
        })
        .sum();
    reg + c * hinge
}

pub fn solve_dual(x: &DMatrix<f64>, y: &[Label], c: f64, kkt_tol: f64) -> Result<SvmSolution> {
    require_both_classes(y, "svm")?;
    let n = x.nrows();
    let ys = signed_targets(y);
    let gram = x * x.transpose();
    let q = |i: usize, j: usize| ys[i] * ys[j] * gram[(i, j)];
    let qd: Vec<f64> = (0..n).map(|i| gram[(i, i)]).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let max_iters = (100 * n).max(10_000_000);
    let mut iterations = 0;
    let mut violation;
    loop {
        // i: maximal violator in the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let cand = if ys[t] > 0.0 {
                (!upper(alpha[t])).then(|| -grad[t])
            } else {
                (!lower(alpha[t])).then_some(grad[t])
            };
            if let Some(v) = cand {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        // j: best second-order partner in the "low" set.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let (active, g2, grad_diff, quad) = if ys[t] > 0.0 {
                    (
                        !lower(alpha[t]),
                        grad[t],
                        gmax + grad[t],
                        qd[i] + qd[t] - 2.0 * ys[i] * q(i, t),
                    )
                } else {
                    (
                        !upper(alpha[t]),
                        -grad[t],
                        gmax - grad[t],
                        qd[i] + qd[t] + 2.0 * ys[i] * q(i, t),
                    )
                };
                if !active {
                    continue;
                }
                gmax2 = gmax2.max(g2);
                if grad_diff > 0.0 {
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        violation = gmax + gmax2;
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            break;
        };
        if violation < kkt_tol && (violation < TAU || relative_gap(&alpha, &grad, &ys, c) <= REL_GAP) {
            break;
        }
        if iterations >= max_iters {
            log::warn!("svm: iteration cap reached, KKT violation {violation:.3e}");
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if ys[i] != ys[j] {
            let quad = (qd[i] + qd[j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (k, g) in grad.iter_mut().enumerate() {
            *g += q(i, k) * di + q(j, k) * dj;
        }
    }

    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numerical("svm dual diverged".into()));
    }

    let b = -bias_offset(&alpha, &grad, &ys, c);
    let mut w = vec![0.0; x.ncols()];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for (wj, xj) in w.iter_mut().zip(x.row(i).iter()) {
                *wj += a * ys[i] * xj;
            }
        }
    }

    Ok(SvmSolution {
        model: LinearModel { w, b },
        alpha,
        iterations,
        kkt_violation: violation,
    })
}

/// `(P - D) / P` for the current multipliers, with the bias from
/// [`bias_offset`]. Uses `y_i w.x_i = grad_i + 1` and `|w|^2 = a'Qa`.
fn relative_gap(alpha: &[f64], grad: &[f64], ys: &[f64], c: f64) -> f64 {
    let b = -bias_offset(alpha, grad, ys, c);
    let quad: f64 = alpha.iter().zip(grad).map(|(a, g)| a * (g + 1.0)).sum();
    let hinge: f64 = grad.iter().zip(ys).map(|(g, y)| (-g - y * b).max(0.0)).sum();
    let primal = 0.5 * quad + c * hinge;
    let dual = alpha.iter().sum::<f64>() - 0.5 * quad;
    (primal - dual) / primal.max(TAU)
}

/// The offset `rho` with decision `w . x - rho`: averaged over free
/// multipliers, or the midpoint of the feasible interval when none are free.
fn bias_offset(alpha: &[f64], grad: &[f64], ys: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for ((&a, &g), &y) in alpha.iter().zip(grad).zip(ys) {
        let yg = y * g;
        if a >= c {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a <= 0.0 {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
