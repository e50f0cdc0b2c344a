//! The five back-end binary classifiers and a uniform train/predict facade.
//!
//! Every trainer is deterministic given its data, spec and (for the MLP)
//! seed. Inputs are expected to be standardised by the caller. Labels are
//! `0`/`1`; all decision rules resolve an exact tie towards class `1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

pub mod gp;
pub mod lbfgs;
pub mod lda;
pub mod mlp;
pub mod svm;
pub mod xgb;

pub use gp::{kernel_rbf, GpModel, GpParams};
pub use lda::LdaParams;
pub use mlp::{MlpModel, MlpParams};
pub use svm::SvmParams;
pub use xgb::{TreeEnsembleModel, XgbParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Svm,
    Lda,
    Gp,
    Mlp,
    Xgb,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::Svm,
        ClassifierKind::Lda,
        ClassifierKind::Gp,
        ClassifierKind::Mlp,
        ClassifierKind::Xgb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Lda => "lda",
            ClassifierKind::Gp => "gp",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Xgb => "xgb",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown classifier `{s}`")))
    }
}

/// A classifier kind together with its hyperparameters.
///
/// Defaults are the fixed settings of the reference pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Svm(SvmParams),
    Lda(LdaParams),
    Gp(GpParams),
    Mlp(MlpParams),
    Xgb(XgbParams),
}

impl ClassifierSpec {
    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Svm => ClassifierSpec::Svm(SvmParams::default()),
            ClassifierKind::Lda => ClassifierSpec::Lda(LdaParams::default()),
            ClassifierKind::Gp => ClassifierSpec::Gp(GpParams::default()),
            ClassifierKind::Mlp => ClassifierSpec::Mlp(MlpParams::default()),
            ClassifierKind::Xgb => ClassifierSpec::Xgb(XgbParams::default()),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::Svm(_) => ClassifierKind::Svm,
            ClassifierSpec::Lda(_) => ClassifierKind::Lda,
            ClassifierSpec::Gp(_) => ClassifierKind::Gp,
            ClassifierSpec::Mlp(_) => ClassifierKind::Mlp,
            ClassifierSpec::Xgb(_) => ClassifierKind::Xgb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{}: `{name}` must be positive", self.kind())))
            }
        };
        match self {
            ClassifierSpec::Svm(p) => positive("c", p.c),
            ClassifierSpec::Lda(p) => positive("sv_cutoff", p.sv_cutoff),
            ClassifierSpec::Gp(p) => {
                positive("signal_variance", p.signal_variance)?;
                positive("length_scale", p.length_scale)?;
                positive("newton_tol", p.newton_tol)
            }
            ClassifierSpec::Mlp(p) => {
                if p.hidden == 0 || p.memory == 0 {
                    return Err(Error::Config("mlp: `hidden` and `memory` must be positive".into()));
                }
                positive("grad_tol", p.grad_tol)?;
                if p.l2_alpha < 0.0 {
                    return Err(Error::Config("mlp: `l2_alpha` must be non-negative".into()));
                }
                Ok(())
            }
            ClassifierSpec::Xgb(p) => {
                positive("eta", p.eta)?;
                if p.gamma < 0.0 || p.lambda < 0.0 {
                    return Err(Error::Config("xgb: `gamma`/`lambda` must be non-negative".into()));
                }
                Ok(())
            }
        }
    }
}

/// An affine decision function: class 1 iff `w . x + b >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelParams {
    /// Fitted on single-class data; always predicts `label`.
    Constant { label: Label },
    Linear(LinearModel),
    Gp(GpModel),
    Mlp(MlpModel),
    Trees(TreeEnsembleModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ClassifierSpec,
    pub dim: usize,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        self.spec.kind()
    }

    /// True when the training data held a single class.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.params, ModelParams::Constant { .. })
    }

    /// Real-valued score whose sign gives the decision (`>= 0` is class 1).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(match &self.params {
            ModelParams::Constant { label } => {
                if *label == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            ModelParams::Linear(m) => m.decision_value(x),
            ModelParams::Gp(m) => m.predict(x)?.probability - 0.5,
            ModelParams::Mlp(m) => m.logit(x),
            ModelParams::Trees(m) => m.margin(x),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(decide(self.score(x)?))
    }

    /// Predicts every row of an `n x dim` matrix.
    pub fn predict_rows(&self, rows: &DMatrix<f64>) -> Result<Vec<Label>> {
        let mut buf = vec![0.0; rows.ncols()];
        (0..rows.nrows())
            .map(|i| {
                for (j, v) in buf.iter_mut().enumerate() {
                    *v = rows[(i, j)];
                }
                self.predict(&buf)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Class 1 iff `score >= 0`.
pub fn decide(score: f64) -> Label {
    Label::from(score >= 0.0)
}

/// Trains the classifier described by `spec` on standardised rows `x`.
///
/// Single-class training data yields a constant model instead of an error.
pub fn train(spec: &ClassifierSpec, x: &DMatrix<f64>, y: &[Label]) -> Result<TrainedModel> {
    spec.validate()?;
    check_training_data(x, y)?;
    let dim = x.ncols();
    if let Some(label) = single_class(y) {
        return Ok(TrainedModel {
            spec: spec.clone(),
            dim,
            params: ModelParams::Constant { label },
        });
    }
    let params = match spec {
        ClassifierSpec::Svm(p) => ModelParams::Linear(svm::train_svm(x, y, p)?),
        ClassifierSpec::Lda(p) => ModelParams::Linear(lda::train_lda(x, y, p)?),
        ClassifierSpec::Gp(p) => ModelParams::Gp(gp::train_gp(x, y, p)?),
        ClassifierSpec::Mlp(p) => ModelParams::Mlp(mlp::train_mlp(x, y, p)?),
        ClassifierSpec::Xgb(p) => ModelParams::Trees(xgb::train_xgb(x, y, p)?),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        dim,
        params,
    })
}

pub(crate) fn check_training_data(x: &DMatrix<f64>, y: &[Label]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("no training rows"));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::Config("labels must be 0 or 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training feature".into()));
    }
    Ok(())
}

/// The label shared by every sample, if there is only one.
pub(crate) fn single_class(y: &[Label]) -> Option<Label> {
    let first = *y.first()?;
    y.iter().all(|&l| l == first).then_some(first)
}

pub(crate) fn require_both_classes(y: &[Label], what: &'static str) -> Result<()> {
    match single_class(y) {
        Some(_) => Err(Error::SingleClass(what)),
        None => Ok(()),
    }
}

/// `{0,1}` labels as `-1/+1` targets.
pub(crate) fn signed_targets(y: &[Label]) -> Vec<f64> {
    y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
