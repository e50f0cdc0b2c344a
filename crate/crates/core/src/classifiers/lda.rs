//! Two-class linear discriminant analysis.
//!
//! The direction is `w = S^+ (mu_1 - mu_0)` where `S` is the pooled
//! within-class covariance and `S^+` its SVD pseudo-inverse. The intercept
//! places the boundary between the class means, shifted by the log prior
//! ratio. `S` is never formed: with `X_c` the class-centred data,
//! `S = X_c' X_c / (n - 2)`, so a thin SVD of `X_c` gives its eigenpairs
//! directly, which matters when the dimension exceeds the sample count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{require_both_classes, LinearModel};
use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaParams {
    /// Eigenvalues of the covariance below `sv_cutoff * largest` are dropped.
    pub sv_cutoff: f64,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams { sv_cutoff: 1e-12 }
    }
}

pub fn train_lda(x: &DMatrix<f64>, y: &[Label], params: &LdaParams) -> Result<LinearModel> {
    require_both_classes(y, "lda")?;
    let (n, d) = x.shape();
    let n1 = y.iter().filter(|&&l| l == 1).count();
    let n0 = n - n1;

    let mut mu0 = DVector::zeros(d);
    let mut mu1 = DVector::zeros(d);
    for (i, &label) in y.iter().enumerate() {
        let row = x.row(i).transpose();
        if label == 1 {
            mu1 += row;
        } else {
            mu0 += row;
        }
    }
    mu0 /= n0 as f64;
    mu1 /= n1 as f64;

    let mut centred = x.clone();
    for (i, &label) in y.iter().enumerate() {
        let mu = if label == 1 { &mu1 } else { &mu0 };
        for j in 0..d {
            centred[(i, j)] -= mu[j];
        }
    }

    let dof = n.saturating_sub(2).max(1) as f64;
    let svd = centred.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("lda: SVD did not return right singular vectors".into()))?;
    let eigen: Vec<f64> = svd.singular_values.iter().map(|s| s * s / dof).collect();
    let largest = eigen.iter().cloned().fold(0.0, f64::max);

    let delta = &mu1 - &mu0;
    let mut w = DVector::zeros(d);
    if largest > 0.0 {
        for (k, &lambda) in eigen.iter().enumerate() {
            if lambda > params.sv_cutoff * largest {
                let v = v_t.row(k).transpose();
                let coef = v.dot(&delta) / lambda;
                w.axpy(coef, &v, 1.0);
            }
        }
    }

    let midpoint = (&mu0 + &mu1) * 0.5;
    let b = -midpoint.dot(&w) + (n1 as f64 / n0 as f64).ln();
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("lda: non-finite discriminant".into()));
    }
    Ok(LinearModel {
        w: w.iter().copied().collect(),
        b,
    })
}
