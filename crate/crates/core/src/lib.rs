//! Decision-fusion toolkit for transcript-based dementia screening.
//!
//! Per-subject text-embedding feature sets (one per encoder snapshot and
//! transcript source) feed five binary back-end classifiers. Their decisions
//! are combined by plain majority voting at several levels: across encoder
//! snapshots, across embedding types, across classifiers, across transcript
//! sources, and finally across the models trained in each cross-validation
//! fold.
//!
//! The crate is organised bottom-up:
//!
//! * [`feature_store`] loads, validates, scales and persists embedding tables.
//! * [`transcripts`] turns CHAT transcripts into participant text.
//! * [`classifiers`] holds the SVM, LDA, GP, MLP and boosted-tree learners.
//! * [`fusion`] implements voting, snapshot epoch schemes and atom expansion.
//! * [`evaluation`] runs stratified cross-validation and computes metrics.
//! * [`experiment`] ties everything together behind a TOML config.

pub mod classifiers;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod feature_store;
pub mod fusion;
pub mod synthetic;
pub mod transcripts;

pub use nalgebra;

pub use classifiers::{ClassifierKind, ClassifierSpec, TrainedModel};
pub use error::{Error, Result};
pub use evaluation::{FoldAssignment, Metrics};
pub use feature_store::{FeatureMatrix, FeatureSetManifest, Manifest, Scaler};
pub use fusion::{Atom, DecisionVector, EnsembleSpec, SnapshotScheme, TieBreak};

/// Binary class label: `0` is non-AD, `1` is AD (the positive class).
pub type Label = u8;
