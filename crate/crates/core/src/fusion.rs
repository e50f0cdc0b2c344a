//! Majority-vote decision fusion and the pieces that define voting pools.
//!
//! A voting pool is a list of [`Atom`]s: one classifier trained on one
//! feature set (or on a concatenation of several). Pools are built by
//! expanding feature-set selectors against a manifest and crossing them
//! with a list of classifiers. Snapshot selection picks which fine-tuning
//! epochs of an encoder contribute feature sets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::error::{Error, Result};
use crate::feature_store::{Encoder, FeatureMatrix, FeatureSetManifest, Manifest, Source};
use crate::Label;

/// Label returned when a pool splits evenly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Predict AD.
    #[default]
    Positive,
    Negative,
}

impl TieBreak {
    pub fn label(self) -> Label {
        match self {
            TieBreak::Positive => 1,
            TieBreak::Negative => 0,
        }
    }
}

/// Outcome of one vote, remembering whether the tie-break decided it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub label: Label,
    pub tied: bool,
}

pub fn majority_vote(decisions: &[Label], tie_break: TieBreak) -> Result<Label> {
    Ok(count_vote(decisions, tie_break)?.label)
}

pub fn count_vote(decisions: &[Label], tie_break: TieBreak) -> Result<Vote> {
    if decisions.is_empty() {
        return Err(Error::Empty("majority vote over an empty pool"));
    }
    let ones = decisions.iter().filter(|&&d| d == 1).count();
    let zeros = decisions.len() - ones;
    Ok(match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => Vote { label: 1, tied: false },
        std::cmp::Ordering::Less => Vote { label: 0, tied: false },
        std::cmp::Ordering::Equal => Vote {
            label: tie_break.label(),
            tied: true,
        },
    })
}

/// Binary decisions keyed by subject id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecisionVector(pub BTreeMap<String, Label>);

impl DecisionVector {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Label)>,
        S: Into<String>,
    {
        DecisionVector(pairs.into_iter().map(|(s, l)| (s.into(), l)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, subject: &str) -> Option<Label> {
        self.0.get(subject).copied()
    }

    pub fn same_universe(&self, other: &DecisionVector) -> bool {
        self.0.len() == other.0.len() && self.0.keys().zip(other.0.keys()).all(|(a, b)| a == b)
    }

    /// `subject_id,decision` rows sorted by subject id.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("subject_id,decision\n");
        for (subject, label) in &self.0 {
            out.push_str(subject);
            out.push(',');
            out.push(if *label == 1 { '1' } else { '0' });
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads a two-column `subject_id,<label>` CSV; the second header name is free.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.split(',').next() == Some("subject_id") => {}
            _ => return Err(parse_err(1, "expected header `subject_id,<label column>`".into())),
        }
        let mut map = BTreeMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(subject), Some(value), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(i + 1, "expected two columns".into()));
            };
            let label = match value.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(i + 1, format!("decision `{other}` not in {{0,1}}"))),
            };
            if map.insert(subject.trim().to_string(), label).is_some() {
                return Err(Error::DuplicateSubject(subject.to_string()));
            }
        }
        Ok(DecisionVector(map))
    }
}

/// Per-subject majority vote across atoms.
pub fn run_decision_vote(atom_decisions: &[DecisionVector], tie_break: TieBreak) -> Result<DecisionVector> {
    Ok(run_decision_vote_counted(atom_decisions, tie_break)?.0)
}

/// Like [`run_decision_vote`], also returning how many subjects were tied.
pub fn run_decision_vote_counted(
    atom_decisions: &[DecisionVector],
    tie_break: TieBreak,
) -> Result<(DecisionVector, usize)> {
    let first = atom_decisions
        .first()
        .ok_or(Error::Empty("decision vote over zero atoms"))?;
    for (k, other) in atom_decisions.iter().enumerate().skip(1) {
        if !first.same_universe(other) {
            return Err(Error::SubjectMismatch(format!(
                "decision vector {k} covers different subjects than vector 0"
            )));
        }
    }
    let mut ties = 0;
    let mut out = BTreeMap::new();
    let mut votes = Vec::with_capacity(atom_decisions.len());
    for subject in first.0.keys() {
        votes.clear();
        votes.extend(atom_decisions.iter().map(|v| v.0[subject]));
        let vote = count_vote(&votes, tie_break)?;
        ties += usize::from(vote.tied);
        out.insert(subject.clone(), vote.label);
    }
    Ok((DecisionVector(out), ties))
}

/// Votes a pool whose atoms belong to groups (feature families).
///
/// Flattened pools vote once over every atom; nested pools first resolve a
/// vote inside each group and then vote over the group decisions.
pub fn vote_pool(
    atom_decisions: &[DecisionVector],
    groups: &[usize],
    flatten: bool,
    tie_break: TieBreak,
) -> Result<(DecisionVector, usize)> {
    let mut distinct: Vec<usize> = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if flatten || distinct.len() <= 1 {
        return run_decision_vote_counted(atom_decisions, tie_break);
    }
    let mut ties = 0;
    let mut group_votes = Vec::with_capacity(distinct.len());
    for g in distinct {
        let members: Vec<DecisionVector> = atom_decisions
            .iter()
            .zip(groups)
            .filter(|(_, &gi)| gi == g)
            .map(|(v, _)| v.clone())
            .collect();
        let (v, t) = run_decision_vote_counted(&members, tie_break)?;
        ties += t;
        group_votes.push(v);
    }
    let (v, t) = run_decision_vote_counted(&group_votes, tie_break)?;
    Ok((v, ties + t))
}

/// Horizontal concatenation of feature sets over the same subjects.
pub fn concat_features(sets: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = sets.first().ok_or(Error::Empty("nothing to concatenate"))?;
    for other in &sets[1..] {
        if other.subject_ids != first.subject_ids {
            return Err(Error::SubjectMismatch(
                "concatenated feature sets must list subjects in the same order".into(),
            ));
        }
        if other.labels.is_some() && first.labels.is_some() && other.labels != first.labels {
            return Err(Error::SubjectMismatch("feature sets disagree on labels".into()));
        }
    }
    let n = first.len();
    let dim: usize = sets.iter().map(FeatureMatrix::dim).sum();
    let mut rows = nalgebra::DMatrix::zeros(n, dim);
    let mut offset = 0;
    for set in sets {
        rows.view_mut((0, offset), (n, set.dim())).copy_from(&set.rows);
        offset += set.dim();
    }
    FeatureMatrix::new(
        first.subject_ids.clone(),
        sets.iter().find_map(|s| s.labels.clone()),
        rows,
    )
}

/// How the epochs of a snapshot ensemble are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochSelection {
    /// The last epoch and every `stride` before it.
    FixedStride { stride: u32 },
    /// Distinct epochs drawn uniformly without replacement.
    Random { seed: u64 },
    /// Gaps from the final epoch growing by a factor of three.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotScheme {
    #[serde(flatten)]
    pub selection: EpochSelection,
    #[serde(default = "default_snapshot_count")]
    pub count: usize,
    pub total_epochs: u32,
}

fn default_snapshot_count() -> usize {
    3
}

impl SnapshotScheme {
    pub fn new(selection: EpochSelection, total_epochs: u32) -> Self {
        SnapshotScheme {
            selection,
            count: default_snapshot_count(),
            total_epochs,
        }
    }
}

/// Ascending list of selected epochs, each in `[1, total_epochs]`.
///
/// * fixed stride `s`: `[E - (c-1)s, ..., E - s, E]`
/// * geometric: offsets `0, d, 4d, 13d, ...` back from `E` with `d = round(E/10)`
/// * random: `c` distinct epochs from a seeded shuffle
pub fn snapshot_epochs(scheme: &SnapshotScheme) -> Result<Vec<u32>> {
    let e = scheme.total_epochs;
    let count = scheme.count;
    if e == 0 || count == 0 {
        return Err(Error::Config("snapshot scheme needs total_epochs >= 1 and count >= 1".into()));
    }
    let from_offsets = |offsets: Vec<u64>| -> Result<Vec<u32>> {
        let span = *offsets.last().unwrap_or(&0);
        if span >= u64::from(e) {
            return Err(Error::Config(format!(
                "snapshot span {span} does not fit in {e} epochs"
            )));
        }
        let mut epochs: Vec<u32> = offsets.iter().map(|&o| e - o as u32).collect();
        epochs.sort_unstable();
        Ok(epochs)
    };
    match &scheme.selection {
        EpochSelection::FixedStride { stride } => {
            if *stride == 0 {
                return Err(Error::Config("stride must be positive".into()));
            }
            from_offsets((0..count as u64).map(|k| k * u64::from(*stride)).collect())
        }
        EpochSelection::Geometric => {
            let d = (f64::from(e) / 10.0).round() as u64;
            if d == 0 && count > 1 {
                return Err(Error::Config(format!("geometric scheme needs at least 5 epochs, got {e}")));
            }
            // Cumulative gaps d, 3d, 9d, ...: offset_k = d (3^k - 1) / 2.
            from_offsets((0..count as u32).map(|k| d * (3u64.pow(k) - 1) / 2).collect())
        }
        EpochSelection::Random { seed } => {
            if count > e as usize {
                return Err(Error::Config(format!("cannot draw {count} distinct epochs from {e}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut epochs: Vec<u32> = rand::seq::index::sample(&mut rng, e as usize, count)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            epochs.sort_unstable();
            Ok(epochs)
        }
    }
}

/// Picks feature sets from a manifest.
///
/// A bare string names one feature set by id. A table selects a family of
/// snapshots: entries matching the given encoder/source/tag, restricted to
/// explicit `epochs`, else to the system's snapshot scheme, else all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSelector {
    Id(String),
    Family(FamilySelector),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySelector {
    pub encoder: Option<Encoder>,
    pub source: Option<Source>,
    pub source_tag: Option<String>,
    pub epochs: Option<Vec<u32>>,
    /// `false` picks the pre-trained (epoch-less) entry.
    pub fine_tuned: Option<bool>,
}

impl FamilySelector {
    fn matches(&self, entry: &FeatureSetManifest) -> bool {
        self.encoder.is_none_or(|e| e == entry.encoder)
            && self.source.is_none_or(|s| s == entry.source)
            && self
                .source_tag
                .as_ref()
                .is_none_or(|t| entry.source_tag.as_ref() == Some(t))
            && match self.fine_tuned {
                Some(true) => entry.epoch.is_some(),
                Some(false) => entry.epoch.is_none(),
                None => true,
            }
    }
}

impl fmt::Display for FeatureSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSelector::Id(id) => f.write_str(id),
            FeatureSelector::Family(fam) => {
                let mut parts = Vec::new();
                if let Some(e) = fam.encoder {
                    parts.push(e.to_string());
                }
                if let Some(s) = fam.source {
                    parts.push(s.to_string());
                }
                if let Some(t) = &fam.source_tag {
                    parts.push(t.clone());
                }
                write!(f, "{{{}}}", parts.join(","))
            }
        }
    }
}

/// Resolves one selector to feature-set ids, in epoch order.
pub fn resolve_selector(
    selector: &FeatureSelector,
    scheme: Option<&SnapshotScheme>,
    manifest: &Manifest,
) -> Result<Vec<String>> {
    let family = match selector {
        FeatureSelector::Id(id) => {
            return manifest
                .get(id)
                .map(|e| vec![e.id.clone()])
                .ok_or_else(|| Error::UnknownFeatureSet(id.clone()));
        }
        FeatureSelector::Family(family) => family,
    };
    let mut candidates: Vec<&FeatureSetManifest> =
        manifest.feature_sets.iter().filter(|e| family.matches(e)).collect();
    candidates.sort_by(|a, b| a.epoch.cmp(&b.epoch).then_with(|| a.id.cmp(&b.id)));

    let wanted: Option<Vec<u32>> = match (&family.epochs, scheme, family.fine_tuned) {
        (Some(epochs), _, _) => Some(epochs.clone()),
        (None, Some(scheme), fine_tuned) if fine_tuned != Some(false) => Some(snapshot_epochs(scheme)?),
        _ => None,
    };
    let ids: Vec<String> = match wanted {
        None => candidates.iter().map(|e| e.id.clone()).collect(),
        Some(epochs) => epochs
            .iter()
            .map(|&epoch| {
                let hits: Vec<_> = candidates.iter().filter(|e| e.epoch == Some(epoch)).collect();
                match hits.as_slice() {
                    [one] => Ok(one.id.clone()),
                    [] => Err(Error::UnknownFeatureSet(format!("{selector} at epoch {epoch}"))),
                    _ => Err(Error::Config(format!(
                        "selector {selector} is ambiguous at epoch {epoch}; add source/source_tag"
                    ))),
                }
            })
            .collect::<Result<_>>()?,
    };
    if ids.is_empty() {
        return Err(Error::UnknownFeatureSet(format!("{selector} matches nothing")));
    }
    Ok(ids)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Every atom votes on its own decisions.
    #[default]
    DecisionVote,
    /// Families are concatenated position-wise before classification.
    ConcatFeatures,
}

/// One voter: a classifier over one feature set, or over a concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub feature_sets: Vec<String>,
    pub classifier: ClassifierSpec,
    /// Index of the selector (feature family) the atom came from.
    pub group: usize,
}

impl Atom {
    pub fn feature_set_id(&self) -> String {
        self.feature_sets.join("+")
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.feature_set_id(), self.classifier.kind())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvSpec {
    pub k: usize,
    pub seed: u64,
    /// Test decisions come from voting the fold models; otherwise each atom
    /// is refit on all training subjects.
    pub fold_vote: bool,
    /// Let every (fold, atom) model vote jointly instead of fold-by-fold.
    pub flatten_fold_vote: bool,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec {
            k: 10,
            seed: 0,
            fold_vote: true,
            flatten_fold_vote: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub atoms: Vec<Atom>,
    pub tie_break: TieBreak,
    pub fusion_mode: FusionMode,
    /// Vote over all atoms at once rather than within each family first.
    pub flatten: bool,
    pub cv: CvSpec,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Empty("ensemble has no atoms"));
        }
        if self.fusion_mode == FusionMode::ConcatFeatures {
            let kind = self.atoms[0].classifier.kind();
            if self.atoms.iter().any(|a| a.classifier.kind() != kind) {
                return Err(Error::Config("concatenation pools must share one classifier kind".into()));
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> Vec<usize> {
        self.atoms.iter().map(|a| a.group).collect()
    }
}

/// Expands selectors x classifiers into the voting pool, order-stable:
/// selectors outermost, then their feature sets, then classifiers.
pub fn build_atoms(
    selectors: &[FeatureSelector],
    classifiers: &[ClassifierSpec],
    scheme: Option<&SnapshotScheme>,
    mode: FusionMode,
    manifest: &Manifest,
) -> Result<Vec<Atom>> {
    if selectors.is_empty() || classifiers.is_empty() {
        return Err(Error::Empty("a system needs feature sets and classifiers"));
    }
    let families: Vec<Vec<String>> = selectors
        .iter()
        .map(|s| resolve_selector(s, scheme, manifest))
        .collect::<Result<_>>()?;

    let atoms = match mode {
        FusionMode::DecisionVote => families
            .iter()
            .enumerate()
            .flat_map(|(group, ids)| {
                ids.iter().flat_map(move |id| {
                    classifiers.iter().map(move |c| Atom {
                        feature_sets: vec![id.clone()],
                        classifier: c.clone(),
                        group,
                    })
                })
            })
            .collect(),
        FusionMode::ConcatFeatures => {
            let [classifier] = classifiers else {
                return Err(Error::Config("concat_features takes exactly one classifier".into()));
            };
            let width = families[0].len();
            if families.iter().any(|f| f.len() != width) {
                return Err(Error::Config(
                    "concat_features needs the same number of snapshots in every family".into(),
                ));
            }
            (0..width)
                .map(|i| Atom {
                    feature_sets: families.iter().map(|f| f[i].clone()).collect(),
                    classifier: classifier.clone(),
                    group: 0,
                })
                .collect()
        }
    };
    Ok(atoms)
}
