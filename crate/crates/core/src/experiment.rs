//! Config-driven experiment grids.
//!
//! An experiment is a TOML file listing systems. Each system expands to a
//! voting pool over manifest feature sets, is cross-validated on the
//! training split, and (when test files exist) decides the test split by
//! voting the fold models. Results go to `report.csv`, `report.txt` and
//! one decision file per system, all under the output directory.
//!
//! ```toml
//! manifest = "features/manifest.toml"
//! output_dir = "results"
//!
//! [cv]
//! k = 10
//! seed = 2021
//!
//! [[system]]
//! id = "snapshot-bert-svm"
//! features = [{ encoder = "bert", source = "manual", fine_tuned = true }]
//! classifiers = ["svm"]
//! snapshot_scheme = { kind = "fixed_stride", stride = 1, total_epochs = 30 }
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{ClassifierKind, ClassifierSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_metrics, cross_validate, fit_full, make_folds, mean_accuracy, truth_of, vote_over_folds,
    FoldAssignment, FoldModels, Metrics,
};
use crate::feature_store::{load_feature_set, load_test_set, FeatureMatrix, Manifest};
use crate::fusion::{
    build_atoms, concat_features, CvSpec, DecisionVector, EnsembleSpec, FeatureSelector, FusionMode,
    SnapshotScheme, TieBreak,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(rename = "system")]
    pub systems: Vec<SystemConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub fold_vote: bool,
    pub flatten_fold_vote: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        let d = CvSpec::default();
        CvConfig {
            k: d.k,
            seed: d.seed,
            fold_vote: d.fold_vote,
            flatten_fold_vote: d.flatten_fold_vote,
        }
    }
}

/// A classifier by name with default settings, or a full table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifierChoice {
    Kind(ClassifierKind),
    Spec(ClassifierSpec),
}

impl ClassifierChoice {
    pub fn spec(&self) -> ClassifierSpec {
        match self {
            ClassifierChoice::Kind(k) => ClassifierSpec::default_for(*k),
            ClassifierChoice::Spec(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub id: String,
    pub features: Vec<FeatureSelector>,
    pub classifiers: Vec<ClassifierChoice>,
    #[serde(default)]
    pub fusion_mode: FusionMode,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Vote over every atom at once (default) instead of resolving each
    /// feature family first.
    #[serde(default = "yes")]
    pub flatten: bool,
    /// `false` reports the mean over the atoms evaluated one by one instead
    /// of their vote.
    #[serde(default = "yes")]
    pub combine: bool,
    pub snapshot_scheme: Option<SnapshotScheme>,
}

fn yes() -> bool {
    true
}

/// A parsed config plus what is needed to resolve its relative paths.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub raw: String,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&raw, base_dir)
    }

    pub fn from_toml(raw: &str, base_dir: PathBuf) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            base_dir,
            raw: raw.to_string(),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::Config("config defines no [[system]]".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.systems {
            if s.id.is_empty()
                || s.id.starts_with('.')
                || !s.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            {
                return Err(Error::Config(format!(
                    "system id `{}` must be non-empty and use only [A-Za-z0-9._-]",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate system id `{}`", s.id)));
            }
            for c in &s.classifiers {
                c.spec().validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Overrides the manifest named in the config.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemRow {
    pub id: String,
    pub atoms: usize,
    pub error: Option<String>,
    pub cv_accuracy: Option<f64>,
    pub cv_fold_mean: Option<f64>,
    pub test: Option<Metrics>,
    /// Set for non-combined systems (mean of the atoms' test accuracies) and
    /// otherwise equal to `test.accuracy`.
    pub test_accuracy: Option<f64>,
    pub test_by_source: Vec<(String, f64)>,
    pub ties: usize,
    pub degenerate_models: usize,
    pub held_out: Option<DecisionVector>,
    pub test_decisions: Option<DecisionVector>,
}

impl SystemRow {
    fn failed(id: &str, atoms: usize, err: &Error) -> Self {
        SystemRow {
            id: id.to_string(),
            atoms,
            error: Some(err.to_string()),
            cv_accuracy: None,
            cv_fold_mean: None,
            test: None,
            test_accuracy: None,
            test_by_source: Vec::new(),
            ties: 0,
            degenerate_models: 0,
            held_out: None,
            test_decisions: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config_digest: String,
    pub seed: u64,
    pub k: usize,
    pub systems: Vec<SystemRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default()
}

impl ExperimentReport {
    pub fn has_errors(&self) -> bool {
        self.systems.iter().any(|s| s.error.is_some())
    }

    fn columns(row: &SystemRow) -> Vec<String> {
        let m = row.test.as_ref();
        vec![
            row.id.clone(),
            row.atoms.to_string(),
            if row.error.is_some() { "error" } else { "ok" }.to_string(),
            pct(row.cv_accuracy),
            pct(row.cv_fold_mean),
            pct(row.test_accuracy),
            pct(m.map(|m| m.precision)),
            pct(m.map(|m| m.recall)),
            pct(m.map(|m| m.f1)),
            row.test_by_source
                .iter()
                .map(|(s, a)| format!("{s}={:.2}", 100.0 * a))
                .collect::<Vec<_>>()
                .join(";"),
            row.ties.to_string(),
            row.degenerate_models.to_string(),
        ]
    }

    const HEADER: [&'static str; 12] = [
        "system",
        "atoms",
        "status",
        "cv_acc",
        "cv_fold_mean",
        "test_acc",
        "test_precision",
        "test_recall",
        "test_f1",
        "test_by_source",
        "ties",
        "degenerate_models",
    ];

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = Self::HEADER.to_vec();
        header.push("error");
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for row in &self.systems {
            let mut cols = Self::columns(row);
            cols.push(row.error.clone().unwrap_or_default());
            w.write_record(&cols).map_err(|e| Error::Serde(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Aligned table for humans, errors listed underneath.
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self.systems.iter().map(Self::columns).collect();
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "config digest: {}", self.config_digest);
        let _ = writeln!(out, "cv: k = {}, seed = {}", self.k, self.seed);
        out.push('\n');
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let header: Vec<String> = Self::HEADER.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        for row in &self.systems {
            if let Some(e) = &row.error {
                let _ = writeln!(out, "\n{}: {e}", row.id);
            }
        }
        out
    }

    /// Writes the report and decision files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let decisions = dir.join("decisions");
        fs::create_dir_all(&decisions).map_err(|e| Error::io(&decisions, e))?;
        let write = |p: PathBuf, text: String| fs::write(&p, text).map_err(|e| Error::io(&p, e));
        write(dir.join("report.csv"), self.to_csv_string()?)?;
        write(dir.join("report.txt"), self.to_text())?;
        for row in &self.systems {
            if let Some(v) = &row.held_out {
                write(decisions.join(format!("{}.cv.csv", row.id)), v.to_csv_string())?;
            }
            if let Some(v) = &row.test_decisions {
                write(decisions.join(format!("{}.test.csv", row.id)), v.to_csv_string())?;
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 over the config text, the manifest text and the CV seed.
pub fn config_digest(config_text: &str, manifest_text: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    h.update([0u8]);
    h.update(manifest_text.as_bytes());
    h.update([0u8]);
    h.update(format!("seed={seed}").as_bytes());
    hex::encode(h.finalize())
}

struct SetData {
    train: Arc<FeatureMatrix>,
    test: Option<Arc<FeatureMatrix>>,
    source: String,
}

struct PlannedSystem<'a> {
    config: &'a SystemConfig,
    spec: EnsembleSpec,
}

/// Runs every system of the config and returns the assembled report.
///
/// Configuration problems (bad schema, unresolved feature sets, unreadable
/// files) fail the whole run; failures inside one system are recorded on
/// its row and the other systems still complete.
pub fn run_experiment(loaded: &LoadedConfig, options: &RunOptions) -> Result<ExperimentReport> {
    let config = &loaded.config;
    let manifest_path = match (&options.manifest, &config.manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => return Err(Error::Config("no manifest given in the config or on the command line".into())),
    };
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = Manifest::load(&manifest_path)?;
    let seed = options.seed.unwrap_or(config.cv.seed);
    let cv = CvSpec {
        k: config.cv.k,
        seed,
        fold_vote: config.cv.fold_vote,
        flatten_fold_vote: config.cv.flatten_fold_vote,
    };

    let mut planned = Vec::with_capacity(config.systems.len());
    for sys in &config.systems {
        let classifiers: Vec<ClassifierSpec> = sys.classifiers.iter().map(ClassifierChoice::spec).collect();
        let atoms = build_atoms(
            &sys.features,
            &classifiers,
            sys.snapshot_scheme.as_ref(),
            sys.fusion_mode,
            &manifest,
        )
        .map_err(|e| Error::Config(format!("system `{}`: {e}", sys.id)))?;
        planned.push(PlannedSystem {
            config: sys,
            spec: EnsembleSpec {
                atoms,
                tie_break: sys.tie_break,
                fusion_mode: sys.fusion_mode,
                flatten: sys.flatten,
                cv: cv.clone(),
            },
        });
    }

    let needed: BTreeSet<&str> = planned
        .iter()
        .flat_map(|p| p.spec.atoms.iter().flat_map(|a| a.feature_sets.iter().map(String::as_str)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let loaded_sets: Vec<(String, SetData)> = needed
            .par_iter()
            .map(|id| {
                let entry = manifest.get(id).ok_or_else(|| Error::UnknownFeatureSet(id.to_string()))?;
                let source = match &entry.source_tag {
                    Some(tag) => format!("{}:{tag}", entry.source),
                    None => entry.source.to_string(),
                };
                Ok((
                    id.to_string(),
                    SetData {
                        train: Arc::new(load_feature_set(entry)?),
                        test: load_test_set(entry)?.map(Arc::new),
                        source,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        let sets: BTreeMap<String, SetData> = loaded_sets.into_iter().collect();

        // One fold assignment shared by every system, taken from the first
        // feature set in manifest order.
        let reference = manifest
            .feature_sets
            .iter()
            .find_map(|e| sets.get(&e.id))
            .ok_or(Error::Empty("no feature sets referenced"))?;
        let labels = reference
            .train
            .labels
            .as_ref()
            .ok_or(Error::Empty("training feature sets must be labelled"))?;
        let folds = make_folds(&reference.train.subject_ids, labels, cv.k, seed)?;

        let systems: Vec<SystemRow> = planned
            .par_iter()
            .map(|p| {
                run_system(p, &sets, &folds).unwrap_or_else(|e| {
                    log::error!("system {}: {e}", p.config.id);
                    SystemRow::failed(&p.config.id, p.spec.atoms.len(), &e)
                })
            })
            .collect();
        Ok(ExperimentReport {
            config_digest: config_digest(&loaded.raw, &manifest_text, seed),
            seed,
            k: cv.k,
            systems,
        })
    })
}

type AtomData = (Vec<Arc<FeatureMatrix>>, Option<Vec<Arc<FeatureMatrix>>>, Vec<String>);

/// Atom training and test matrices; concatenated atoms are built here.
fn atom_data(spec: &EnsembleSpec, sets: &BTreeMap<String, SetData>) -> Result<AtomData> {
    let mut train = Vec::with_capacity(spec.atoms.len());
    let mut test = Some(Vec::with_capacity(spec.atoms.len()));
    let mut sources = Vec::with_capacity(spec.atoms.len());
    for atom in &spec.atoms {
        let parts: Vec<&SetData> = atom
            .feature_sets
            .iter()
            .map(|id| sets.get(id).ok_or_else(|| Error::UnknownFeatureSet(id.clone())))
            .collect::<Result<_>>()?;
        let mut srcs: Vec<&str> = parts.iter().map(|p| p.source.as_str()).collect();
        srcs.dedup();
        sources.push(srcs.join("+"));
        if let [one] = parts.as_slice() {
            train.push(Arc::clone(&one.train));
            test = test.and_then(|mut t| {
                t.push(Arc::clone(one.test.as_ref()?));
                Some(t)
            });
        } else {
            let tr: Vec<FeatureMatrix> = parts.iter().map(|p| aligned_to(&p.train, &parts[0].train)).collect::<Result<_>>()?;
            train.push(Arc::new(concat_features(&tr)?));
            let te: Option<Vec<FeatureMatrix>> = parts
                .iter()
                .map(|p| p.test.as_ref().map(|t| aligned_to(t, parts[0].test.as_ref().unwrap_or(t))))
                .collect::<Option<Result<Vec<_>>>>()
                .transpose()?;
            test = match (test, te) {
                (Some(mut t), Some(te)) => {
                    t.push(Arc::new(concat_features(&te)?));
                    Some(t)
                }
                _ => None,
            };
        }
    }
    Ok((train, test, sources))
}

/// `m` with its rows reordered to follow `reference`'s subject order.
fn aligned_to(m: &FeatureMatrix, reference: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.subject_ids == reference.subject_ids {
        return Ok(m.clone());
    }
    let pos: BTreeMap<&str, usize> = m.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let idx: Vec<usize> = reference
        .subject_ids
        .iter()
        .map(|s| pos.get(s.as_str()).copied().ok_or_else(|| Error::SubjectMismatch(format!("subject {s} missing"))))
        .collect::<Result<_>>()?;
    if idx.len() != m.len() {
        return Err(Error::SubjectMismatch("feature sets cover different subjects".into()));
    }
    Ok(m.select(&idx))
}

fn refs(v: &[Arc<FeatureMatrix>]) -> Vec<&FeatureMatrix> {
    v.iter().map(|m| m.as_ref()).collect()
}

fn run_system(p: &PlannedSystem<'_>, sets: &BTreeMap<String, SetData>, folds: &FoldAssignment) -> Result<SystemRow> {
    let spec = &p.spec;
    let (train, test, sources) = atom_data(spec, sets)?;
    let train = refs(&train);
    let test_refs = test.as_deref().map(refs);
    let truth = match &test_refs {
        Some(t) if t[0].labels.is_some() => Some(truth_of(t[0])?),
        _ => None,
    };

    if !p.config.combine {
        return run_uncombined(p, &train, test_refs.as_deref(), truth.as_ref(), folds);
    }

    let out = cross_validate(spec, &train, folds)?;
    let mut row = SystemRow {
        id: p.config.id.clone(),
        atoms: spec.atoms.len(),
        error: None,
        cv_accuracy: Some(out.cv_accuracy),
        cv_fold_mean: Some(out.fold_mean_accuracy),
        test: None,
        test_accuracy: None,
        test_by_source: Vec::new(),
        ties: out.ties,
        degenerate_models: out.degenerate_models,
        held_out: Some(out.held_out.clone()),
        test_decisions: None,
    };
    let Some(test) = test_refs else {
        return Ok(row);
    };
    let models: Vec<FoldModels> = if spec.cv.fold_vote {
        out.folds
    } else {
        vec![fit_full(spec, &train)?]
    };
    let (decisions, ties) = vote_over_folds(spec, &models, &test)?;
    row.ties += ties;
    if let Some(truth) = &truth {
        let m = compute_metrics(&decisions, truth)?;
        row.test_accuracy = Some(m.accuracy);
        row.test = Some(m);

        let distinct: BTreeSet<&String> = sources.iter().collect();
        if distinct.len() > 1 {
            for source in distinct {
                let keep: Vec<usize> = (0..sources.len()).filter(|&i| &sources[i] == source).collect();
                let sub_spec = EnsembleSpec {
                    atoms: keep.iter().map(|&i| spec.atoms[i].clone()).collect(),
                    ..spec.clone()
                };
                let sub_models: Vec<FoldModels> = models
                    .iter()
                    .map(|m| FoldModels {
                        fold: m.fold,
                        atoms: keep.iter().map(|&i| m.atoms[i].clone()).collect(),
                    })
                    .collect();
                let sub_test: Vec<&FeatureMatrix> = keep.iter().map(|&i| test[i]).collect();
                let (d, _) = vote_over_folds(&sub_spec, &sub_models, &sub_test)?;
                row.test_by_source.push((source.clone(), compute_metrics(&d, truth)?.accuracy));
            }
        }
    }
    row.test_decisions = Some(decisions);
    Ok(row)
}

/// Each atom alone; accuracies are averaged over the atoms.
fn run_uncombined(
    p: &PlannedSystem<'_>,
    train: &[&FeatureMatrix],
    test: Option<&[&FeatureMatrix]>,
    truth: Option<&DecisionVector>,
    folds: &FoldAssignment,
) -> Result<SystemRow> {
    let spec = &p.spec;
    let mut cv_accs = Vec::new();
    let mut fold_means = Vec::new();
    let mut test_accs = Vec::new();
    let (mut ties, mut degenerate) = (0, 0);
    for (i, atom) in spec.atoms.iter().enumerate() {
        let single = EnsembleSpec {
            atoms: vec![atom.clone()],
            ..spec.clone()
        };
        let out = cross_validate(&single, &train[i..=i], folds)?;
        cv_accs.push(out.cv_accuracy);
        fold_means.push(out.fold_mean_accuracy);
        ties += out.ties;
        degenerate += out.degenerate_models;
        if let (Some(test), Some(truth)) = (test, truth) {
            let models = if spec.cv.fold_vote {
                out.folds
            } else {
                vec![fit_full(&single, &train[i..=i])?]
            };
            let (d, t) = vote_over_folds(&single, &models, &test[i..=i])?;
            ties += t;
            test_accs.push(compute_metrics(&d, truth)?.accuracy);
        }
    }
    Ok(SystemRow {
        id: p.config.id.clone(),
        atoms: spec.atoms.len(),
        error: None,
        cv_accuracy: Some(mean_accuracy(&cv_accs)?),
        cv_fold_mean: Some(mean_accuracy(&fold_means)?),
        test: None,
        test_accuracy: if test_accs.is_empty() { None } else { Some(mean_accuracy(&test_accs)?) },
        test_by_source: Vec::new(),
        ties,
        degenerate_models: degenerate,
        held_out: None,
        test_decisions: None,
    })
}
