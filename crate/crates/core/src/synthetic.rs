//! Seeded Gaussian stand-in for a real embedding corpus.
//!
//! Every subject owns a latent vector `z ~ N(0, I)`. A feature set for
//! encoder `e` adds the class offset `+-separation/2 * u_e` (a fixed random
//! unit direction per encoder) and fresh per-set noise of scale
//! `snapshot_noise`, so snapshots of one encoder are correlated but not
//! identical. Pre-trained ("base") sets carry half the class offset.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::feature_store::{Encoder, FeatureMatrix, FeatureSetManifest, Manifest, Source};
use crate::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub separation: f64,
    pub snapshot_noise: f64,
    pub encoders: Vec<Encoder>,
    pub epochs: Vec<u32>,
    pub include_base: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_train: 108,
            n_test: 48,
            dim: 768,
            separation: 3.0,
            snapshot_noise: 0.5,
            encoders: vec![Encoder::Bert, Encoder::Roberta],
            epochs: vec![28, 29, 30],
            include_base: true,
        }
    }
}

/// Balanced labels in a seeded order.
fn balanced_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let mut labels: Vec<Label> = (0..n).map(|i| Label::from(i < n / 2)).collect();
    labels.shuffle(rng);
    labels
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    v / norm
}

struct Split {
    ids: Vec<String>,
    labels: Vec<Label>,
    latent: DMatrix<f64>,
}

/// Generates every feature set and writes CSVs plus `manifest.toml` into
/// `dir`. Returns the manifest with absolute paths.
pub fn generate(config: &SyntheticConfig, dir: &Path) -> Result<Manifest> {
    if config.n_train < 2 || config.dim == 0 || config.encoders.is_empty() {
        return Err(Error::Config("synthetic data needs n_train >= 2, dim >= 1 and an encoder".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let splits: Vec<Split> = [("S", config.n_train), ("T", config.n_test)]
        .into_iter()
        .map(|(prefix, n)| Split {
            ids: (1..=n).map(|i| format!("{prefix}{i:03}")).collect(),
            labels: balanced_labels(n, &mut rng),
            latent: gaussian(n, config.dim, &mut rng),
        })
        .collect();

    let mut entries = Vec::new();
    for &encoder in &config.encoders {
        let u = unit_direction(config.dim, &mut rng);
        let mut variants: Vec<(Option<u32>, f64)> = Vec::new();
        if config.include_base {
            variants.push((None, 0.5));
        }
        variants.extend(config.epochs.iter().map(|&e| (Some(e), 1.0)));
        for (epoch, strength) in variants {
            let id = match epoch {
                Some(e) => format!("{encoder}-e{e}"),
                None => format!("{encoder}-base"),
            };
            let mut paths: Vec<PathBuf> = Vec::new();
            for (split, suffix) in splits.iter().zip(["train", "test"]) {
                let n = split.ids.len();
                let noise = gaussian(n, config.dim, &mut rng);
                let mut rows = &split.latent + noise * config.snapshot_noise;
                for (i, mut row) in rows.row_iter_mut().enumerate() {
                    let sign = if split.labels[i] == 1 { 1.0 } else { -1.0 };
                    row += u.transpose() * (sign * strength * config.separation / 2.0);
                }
                let path = dir.join(format!("{id}.{suffix}.csv"));
                if n > 0 {
                    FeatureMatrix::new(split.ids.clone(), Some(split.labels.clone()), rows)?.save_csv(&path)?;
                    paths.push(path);
                }
            }
            let mut paths = paths.into_iter();
            entries.push(FeatureSetManifest {
                id,
                encoder,
                epoch,
                source: Source::Manual,
                source_tag: None,
                dim: config.dim,
                path: paths.next().expect("train split is written"),
                test_path: paths.next(),
            });
        }
    }

    let relative = Manifest {
        feature_sets: entries
            .iter()
            .map(|e| FeatureSetManifest {
                path: PathBuf::from(e.path.file_name().expect("file name")),
                test_path: e.test_path.as_ref().map(|p| PathBuf::from(p.file_name().expect("file name"))),
                ..e.clone()
            })
            .collect(),
    };
    let manifest_path = dir.join("manifest.toml");
    fs::write(&manifest_path, relative.to_toml()?).map_err(|e| Error::io(&manifest_path, e))?;
    Manifest::load(&manifest_path)
}

/// A config exercising every voting level on the generated sets.
pub fn example_config(manifest: &str) -> String {
    format!(
        r#"manifest = "{manifest}"
output_dir = "results"

[cv]
k = 10
seed = 2021

[[system]]
id = "bert-e30-svm"
features = ["bert-e30"]
classifiers = ["svm"]

[[system]]
id = "bert-snapshots-svm-mean"
features = [{{ encoder = "bert", fine_tuned = true }}]
classifiers = ["svm"]
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}
combine = false

[[system]]
id = "bert-snapshots-svm"
features = [{{ encoder = "bert", fine_tuned = true }}]
classifiers = ["svm"]
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}

[[system]]
id = "bert-roberta-concat-svm"
features = [{{ encoder = "bert", fine_tuned = true }}, {{ encoder = "roberta", fine_tuned = true }}]
classifiers = ["svm"]
fusion_mode = "concat_features"
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}

[[system]]
id = "bert-roberta-vote-svm"
features = [{{ encoder = "bert", fine_tuned = true }}, {{ encoder = "roberta", fine_tuned = true }}]
classifiers = ["svm"]
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}

[[system]]
id = "bert-roberta-vote-svm-nested"
features = [{{ encoder = "bert", fine_tuned = true }}, {{ encoder = "roberta", fine_tuned = true }}]
classifiers = ["svm"]
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}
flatten = false

[[system]]
id = "bert-roberta-vote-all"
features = [{{ encoder = "bert", fine_tuned = true }}, {{ encoder = "roberta", fine_tuned = true }}]
classifiers = ["svm", "lda", "gp", "mlp", "xgb"]
snapshot_scheme = {{ kind = "fixed_stride", stride = 1, total_epochs = 30 }}
"#
    )
}
