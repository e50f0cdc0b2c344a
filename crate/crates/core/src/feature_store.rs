//! Embedding feature sets: provenance manifests, CSV tables and scaling.
//!
//! A feature file is a UTF-8 CSV with the header
//! `subject_id,label,dim_0,...,dim_{D-1}`. Labels are `0`, `1` or `NA`;
//! floats are written in their shortest round-trip decimal form so a
//! save/load cycle is lossless.
//!
//! A manifest is a TOML file with one `[[feature_set]]` table per entry:
//!
//! ```toml
//! [[feature_set]]
//! id = "bert-e28"
//! encoder = "bert"          # bert | roberta
//! epoch = 28                # omit for a non-fine-tuned encoder
//! source = "manual"         # manual | asr
//! source_tag = "cnn-tdnn"   # optional free-form ASR system tag
//! dim = 768
//! path = "bert-e28.train.csv"
//! test_path = "bert-e28.test.csv"   # optional held-out split
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    Bert,
    Roberta,
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoder::Bert => f.write_str("bert"),
            Encoder::Roberta => f.write_str("roberta"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Manual,
    Asr,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Manual => f.write_str("manual"),
            Source::Asr => f.write_str("asr"),
        }
    }
}

/// Provenance of one embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSetManifest {
    pub id: String,
    pub encoder: Encoder,
    /// Fine-tuning epoch of the encoder snapshot; `None` for the pre-trained encoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
    pub dim: usize,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, rename = "feature_set")]
    pub feature_sets: Vec<FeatureSetManifest>,
}

impl Manifest {
    /// Reads a manifest and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::from_toml(&text).map_err(|e| match e {
            Error::Serde(message) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for entry in &mut manifest.feature_sets {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            if let Some(test) = entry.test_path.as_mut() {
                if test.is_relative() {
                    *test = base.join(&*test);
                }
            }
        }
        Ok(manifest)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.feature_sets {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::DuplicateFeatureSet(entry.id.clone()));
            }
            if entry.dim == 0 {
                return Err(Error::Config(format!("feature set `{}` has dim 0", entry.id)));
            }
            if entry.epoch == Some(0) {
                return Err(Error::Config(format!(
                    "feature set `{}`: epochs are 1-based",
                    entry.id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSetManifest> {
        self.feature_sets.iter().find(|entry| entry.id == id)
    }
}

/// Per-subject embedding rows, with labels when the split is annotated.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub subject_ids: Vec<String>,
    pub labels: Option<Vec<Label>>,
    /// `n x dim`, one row per subject.
    pub rows: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        labels: Option<Vec<Label>>,
        rows: DMatrix<f64>,
    ) -> Result<Self> {
        let matrix = FeatureMatrix {
            subject_ids,
            labels,
            rows,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.subject_ids.len();
        if self.rows.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.rows.nrows(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: labels.len(),
                });
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::Config(format!("label {bad} outside {{0,1}}")));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &self.subject_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSubject(id.clone()));
            }
        }
        if self.rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|labels| indices.iter().map(|&i| labels[i]).collect()),
            rows: self.rows.select_rows(indices),
        }
    }

    /// Loads a feature file, checking its width against `expected_dim` when given.
    pub fn load_csv(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => parse_err(0, format!("{other:?}")),
            })?;

        let header = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        if header.len() < 2 || &header[0] != "subject_id" || &header[1] != "label" {
            return Err(parse_err(1, "header must start with `subject_id,label`".into()));
        }
        let dim = header.len() - 2;
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("dim_{j}") {
                return Err(parse_err(1, format!("expected column `dim_{j}`, found `{name}`")));
            }
        }
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: dim,
                });
            }
        }

        let mut subject_ids = Vec::new();
        let mut labels: Vec<Option<Label>> = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            if record.len() != dim + 2 {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: record.len().saturating_sub(2),
                });
            }
            subject_ids.push(record[0].to_string());
            labels.push(match &record[1] {
                "0" => Some(0),
                "1" => Some(1),
                "NA" => None,
                other => return Err(parse_err(line, format!("label `{other}` not in {{0,1,NA}}"))),
            });
            for field in record.iter().skip(2) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad float `{field}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value `{field}`")));
                }
                values.push(v);
            }
        }

        let labels = if labels.iter().all(Option::is_some) && !labels.is_empty() {
            Some(labels.into_iter().flatten().collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(parse_err(0, "labels must be all present or all NA".into()));
        };
        let rows = DMatrix::from_row_slice(subject_ids.len(), dim, &values);
        FeatureMatrix::new(subject_ids, labels, rows)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("subject_id,label");
        for j in 0..self.dim() {
            let _ = write!(out, ",dim_{j}");
        }
        out.push('\n');
        for (i, id) in self.subject_ids.iter().enumerate() {
            out.push_str(id);
            match &self.labels {
                Some(labels) => {
                    let _ = write!(out, ",{}", labels[i]);
                }
                None => out.push_str(",NA"),
            }
            for v in self.rows.row(i).iter() {
                // `Display` for f64 is the shortest string that parses back exactly.
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Loads the training split of a manifest entry.
pub fn load_feature_set(entry: &FeatureSetManifest) -> Result<FeatureMatrix> {
    FeatureMatrix::load_csv(&entry.path, Some(entry.dim))
}

/// Loads the held-out split of a manifest entry, if it declares one.
pub fn load_test_set(entry: &FeatureSetManifest) -> Result<Option<FeatureMatrix>> {
    entry
        .test_path
        .as_ref()
        .map(|path| FeatureMatrix::load_csv(path, Some(entry.dim)))
        .transpose()
}

/// Per-column standardisation using the population (divisor `n`) deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rows.ncols(),
            });
        }
        let mut out = rows.clone();
        for (j, mut column) in out.column_iter_mut().enumerate() {
            let (mean, std) = (self.means[j], self.stds[j]);
            if std > 0.0 {
                column.apply(|v| *v = (*v - mean) / std);
            } else {
                column.fill(0.0);
            }
        }
        Ok(out)
    }
}

pub fn fit_scaler(train: &FeatureMatrix) -> Result<Scaler> {
    fit_scaler_rows(&train.rows)
}

pub fn fit_scaler_rows(rows: &DMatrix<f64>) -> Result<Scaler> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::Empty("cannot fit a scaler on zero rows"));
    }
    let mut means = Vec::with_capacity(rows.ncols());
    let mut stds = Vec::with_capacity(rows.ncols());
    for column in rows.column_iter() {
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(Scaler { means, stds })
}

pub fn apply_scaler(scaler: &Scaler, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        subject_ids: matrix.subject_ids.clone(),
        labels: matrix.labels.clone(),
        rows: scaler.transform(&matrix.rows)?,
    })
}
