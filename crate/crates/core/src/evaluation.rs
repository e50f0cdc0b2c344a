//! Stratified k-fold cross-validation, voting across fold models, and
//! confusion-matrix metrics with AD as the positive class.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{self, TrainedModel};
use crate::error::{Error, Result};
use crate::feature_store::{fit_scaler_rows, FeatureMatrix, Scaler};
use crate::fusion::{run_decision_vote_counted, vote_pool, DecisionVector, EnsembleSpec};
use crate::Label;

/// Subject to fold map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.get(subject).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Subjects of fold `fold`, sorted by id.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// `subject_id,fold` rows sorted by subject id.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("subject_id,fold\n");
        for (s, f) in &self.folds {
            out.push_str(&format!("{s},{f}\n"));
        }
        out
    }
}

/// Seeded stratified partition into `k` folds.
///
/// Positives and negatives are each sorted by id and shuffled; the
/// concatenation (positives first) is dealt round-robin, so both the fold
/// sizes and the per-fold positive counts differ by at most one.
pub fn make_folds(subjects: &[String], labels: &[Label], k: usize, seed: u64) -> Result<FoldAssignment> {
    if subjects.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: subjects.len(),
            found: labels.len(),
        });
    }
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if subjects.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} subjects into {k} folds",
            subjects.len()
        )));
    }
    let mut pos: Vec<&String> = Vec::new();
    let mut neg: Vec<&String> = Vec::new();
    for (s, &l) in subjects.iter().zip(labels) {
        if l == 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass("fold assignment needs both classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.sort();
    neg.sort();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = BTreeMap::new();
    for (i, s) in pos.into_iter().chain(neg).enumerate() {
        if folds.insert(s.clone(), i % k).is_some() {
            return Err(Error::DuplicateSubject(s.clone()));
        }
    }
    Ok(FoldAssignment { k, seed, folds })
}

/// Confusion counts and derived ratios; AD (label 1) is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<Self> {
        let n = tp + fp + fn_ + tn;
        if n == 0 {
            return Err(Error::Empty("metrics over zero subjects"));
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Metrics {
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / n as f64,
            precision,
            recall,
            f1,
        })
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn compute_metrics(pred: &DecisionVector, truth: &DecisionVector) -> Result<Metrics> {
    if !pred.same_universe(truth) {
        return Err(Error::SubjectMismatch(
            "predictions and labels cover different subjects".into(),
        ));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, t) in pred.0.values().zip(truth.0.values()) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Metrics::from_counts(tp, fp, fn_, tn)
}

pub fn mean_accuracy(accs: &[f64]) -> Result<f64> {
    if accs.is_empty() {
        return Err(Error::Empty("mean of zero accuracies"));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Labels of an annotated feature matrix as a decision vector.
pub fn truth_of(matrix: &FeatureMatrix) -> Result<DecisionVector> {
    let labels = matrix
        .labels
        .as_ref()
        .ok_or(Error::Empty("feature matrix carries no labels"))?;
    Ok(DecisionVector::from_pairs(
        matrix.subject_ids.iter().cloned().zip(labels.iter().copied()),
    ))
}

/// Hex SHA-256 of the sorted subject ids, one per line.
pub fn fingerprint<S: AsRef<str>>(subjects: &[S]) -> String {
    let mut ids: Vec<&str> = subjects.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// One atom's scaler and classifier, fit on a known set of subjects.
#[derive(Clone, Debug)]
pub struct FittedAtom {
    pub scaler: Scaler,
    pub model: TrainedModel,
    /// Subjects whose rows were used for fitting, in fitting order.
    pub train_subjects: Vec<String>,
    pub fingerprint: String,
}

impl FittedAtom {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<DecisionVector> {
        let rows = self.scaler.transform(&matrix.rows)?;
        let labels = self.model.predict_rows(&rows)?;
        Ok(DecisionVector::from_pairs(
            matrix.subject_ids.iter().cloned().zip(labels),
        ))
    }
}

/// All atoms fit on one training portion.
#[derive(Clone, Debug)]
pub struct FoldModels {
    /// `None` for models fit on every training subject.
    pub fold: Option<usize>,
    pub atoms: Vec<FittedAtom>,
}

impl FoldModels {
    pub fn degenerate_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.model.is_degenerate()).count()
    }

    /// Each atom's decisions on its matrix, then the pool vote.
    pub fn predict(&self, spec: &EnsembleSpec, data: &[&FeatureMatrix]) -> Result<(DecisionVector, usize)> {
        check_atom_count(spec, data.len())?;
        let decisions: Vec<DecisionVector> = self
            .atoms
            .iter()
            .zip(data)
            .map(|(a, m)| a.predict(m))
            .collect::<Result<_>>()?;
        vote_pool(&decisions, &spec.groups(), spec.flatten, spec.tie_break)
    }
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    /// Pooled held-out accuracy, correct / N.
    pub cv_accuracy: f64,
    /// Mean of the per-fold accuracies.
    pub fold_mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// Ensemble decision for every subject while it was held out.
    pub held_out: DecisionVector,
    pub folds: Vec<FoldModels>,
    pub ties: usize,
    pub degenerate_models: usize,
}

fn check_atom_count(spec: &EnsembleSpec, found: usize) -> Result<()> {
    if found != spec.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.atoms.len(),
            found,
        });
    }
    Ok(())
}

/// Row index of every subject in every atom's matrix, checked to cover the
/// same subjects as atom 0. Returns the canonical (sorted) subject order.
fn align(data: &[&FeatureMatrix]) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let first = data.first().ok_or(Error::Empty("no atom data"))?;
    let mut subjects = first.subject_ids.clone();
    subjects.sort();
    let mut index = Vec::with_capacity(data.len());
    for (k, m) in data.iter().enumerate() {
        let rows: HashMap<&str, usize> = m.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if rows.len() != subjects.len() {
            return Err(Error::SubjectMismatch(format!("atom {k} has {} subjects, atom 0 has {}", rows.len(), subjects.len())));
        }
        let idx = subjects
            .iter()
            .map(|s| {
                rows.get(s.as_str())
                    .copied()
                    .ok_or_else(|| Error::SubjectMismatch(format!("subject {s} missing from atom {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        index.push(idx);
    }
    Ok((subjects, index))
}

fn canonical_labels(data: &[&FeatureMatrix], index: &[Vec<usize>]) -> Result<Vec<Label>> {
    let mut labels: Option<Vec<Label>> = None;
    for (m, idx) in data.iter().zip(index) {
        let Some(l) = &m.labels else { continue };
        let aligned: Vec<Label> = idx.iter().map(|&i| l[i]).collect();
        match &labels {
            None => labels = Some(aligned),
            Some(existing) if *existing != aligned => {
                return Err(Error::SubjectMismatch("atoms disagree on training labels".into()));
            }
            Some(_) => {}
        }
    }
    labels.ok_or(Error::Empty("training data carries no labels"))
}

fn fit_atoms(
    spec: &EnsembleSpec,
    data: &[&FeatureMatrix],
    index: &[Vec<usize>],
    subjects: &[String],
    labels: &[Label],
    train: &[usize],
    fold: Option<usize>,
) -> Result<FoldModels> {
    let y: Vec<Label> = train.iter().map(|&i| labels[i]).collect();
    let atoms = spec
        .atoms
        .par_iter()
        .zip(data.par_iter().zip(index.par_iter()))
        .map(|(atom, (m, idx))| {
            let rows: Vec<usize> = train.iter().map(|&i| idx[i]).collect();
            let portion = m.select(&rows);
            debug_assert!(portion.subject_ids.iter().zip(train).all(|(a, &i)| *a == subjects[i]));
            let scaler = fit_scaler_rows(&portion.rows)?;
            let x = scaler.transform(&portion.rows)?;
            let model = classifiers::train(&atom.classifier, &x, &y)
                .map_err(|e| Error::Numerical(format!("{atom}: {e}")))?;
            if model.is_degenerate() {
                log::warn!("{atom}: single-class training portion, using a constant model");
            }
            Ok(FittedAtom {
                scaler,
                model,
                fingerprint: fingerprint(&portion.subject_ids),
                train_subjects: portion.subject_ids,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldModels { fold, atoms })
}

/// k-fold cross-validation of an ensemble.
///
/// `data[a]` holds the training rows for atom `a`. For every fold the scaler
/// and classifier of each atom are fit on the other folds only, and the
/// held-out subjects are decided by the ensemble vote.
pub fn cross_validate(spec: &EnsembleSpec, data: &[&FeatureMatrix], folds: &FoldAssignment) -> Result<CvOutcome> {
    spec.validate()?;
    check_atom_count(spec, data.len())?;
    let (subjects, index) = align(data)?;
    let labels = canonical_labels(data, &index)?;
    let fold_ids: Vec<usize> = subjects
        .iter()
        .map(|s| {
            folds
                .fold_of(s)
                .ok_or_else(|| Error::SubjectMismatch(format!("subject {s} has no fold")))
        })
        .collect::<Result<_>>()?;
    if folds.folds.len() != subjects.len() {
        return Err(Error::SubjectMismatch("fold assignment covers other subjects".into()));
    }

    let per_fold = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let (held, train): (Vec<usize>, Vec<usize>) = (0..subjects.len()).partition(|&i| fold_ids[i] == f);
            if held.is_empty() {
                return Err(Error::Empty("empty fold"));
            }
            let models = fit_atoms(spec, data, &index, &subjects, &labels, &train, Some(f))?;
            let held_data: Vec<FeatureMatrix> = data
                .iter()
                .zip(&index)
                .map(|(m, idx)| m.select(&held.iter().map(|&i| idx[i]).collect::<Vec<_>>()))
                .collect();
            let refs: Vec<&FeatureMatrix> = held_data.iter().collect();
            let (decisions, ties) = models.predict(spec, &refs)?;
            let correct = held
                .iter()
                .filter(|&&i| decisions.get(&subjects[i]) == Some(labels[i]))
                .count();
            Ok((models, decisions, ties, correct, held.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut held_out = BTreeMap::new();
    let mut fold_models = Vec::with_capacity(folds.k);
    let mut fold_accuracies = Vec::with_capacity(folds.k);
    let (mut ties, mut correct_total, mut degenerate) = (0, 0, 0);
    for (models, decisions, t, correct, n) in per_fold {
        ties += t;
        correct_total += correct;
        degenerate += models.degenerate_count();
        fold_accuracies.push(correct as f64 / n as f64);
        held_out.extend(decisions.0);
        fold_models.push(models);
    }
    Ok(CvOutcome {
        cv_accuracy: correct_total as f64 / subjects.len() as f64,
        fold_mean_accuracy: mean_accuracy(&fold_accuracies)?,
        fold_accuracies,
        held_out: DecisionVector(held_out),
        folds: fold_models,
        ties,
        degenerate_models: degenerate,
    })
}

/// Fits every atom on all training subjects.
pub fn fit_full(spec: &EnsembleSpec, data: &[&FeatureMatrix]) -> Result<FoldModels> {
    spec.validate()?;
    check_atom_count(spec, data.len())?;
    let (subjects, index) = align(data)?;
    let labels = canonical_labels(data, &index)?;
    let all: Vec<usize> = (0..subjects.len()).collect();
    fit_atoms(spec, data, &index, &subjects, &labels, &all, None)
}

/// Test decisions from several groups of fold models.
///
/// Nested (default): each fold's ensemble votes, then the folds vote.
/// Flattened (`spec.cv.flatten_fold_vote`): every fold x atom model votes
/// once in a single pool.
pub fn vote_over_folds(
    spec: &EnsembleSpec,
    fold_models: &[FoldModels],
    test: &[&FeatureMatrix],
) -> Result<(DecisionVector, usize)> {
    check_atom_count(spec, test.len())?;
    align(test)?;
    if fold_models.is_empty() {
        return Err(Error::Empty("no fold models to vote"));
    }
    if spec.cv.flatten_fold_vote {
        let mut pool = Vec::with_capacity(fold_models.len() * test.len());
        for models in fold_models {
            for (a, m) in models.atoms.iter().zip(test) {
                pool.push(a.predict(m)?);
            }
        }
        return run_decision_vote_counted(&pool, spec.tie_break);
    }
    let per_fold: Vec<(DecisionVector, usize)> = fold_models
        .par_iter()
        .map(|m| m.predict(spec, test))
        .collect::<Result<_>>()?;
    let inner_ties: usize = per_fold.iter().map(|(_, t)| t).sum();
    let decisions: Vec<DecisionVector> = per_fold.into_iter().map(|(d, _)| d).collect();
    let (out, t) = run_decision_vote_counted(&decisions, spec.tie_break)?;
    Ok((out, inner_ties + t))
}
