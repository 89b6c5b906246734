//! Screening image-volume datasets for "bad" items with a Siamese embedder
//! trained on a small set of approved reference volumes.
//!
//! The flow is: load volumes ([`volume`]), train the shared-weight embedder on
//! reference pairs with contrastive loss ([`siamese`], [`nn`]), score every item
//! by its mean Euclidean distance to the references and flag those above the
//! largest intra-reference distance ([`med`]). [`iforest`] provides the
//! Isolation Forest baseline, [`eval`] the metrics, and [`synth`] a seeded
//! synthetic corpus to run everything on.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod iforest;
pub mod med;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod siamese;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use eval::{auc, confusion_at, roc_points, ConfusionCounts, EvalReport, LabeledScores, RocCurve, ThresholdRule};
pub use iforest::{ForestConfig, IsolationForest};
pub use med::{ScoreRecord, ThresholdModel};
pub use nn::{EmbeddingNet, NetSpec, Pooling, SgdConfig, Tensor};
pub use pipeline::{Dataset, ScreeningConfig, ScreeningRun};
pub use siamese::{ReferenceSet, TrainConfig, TrainReport};
pub use synth::{CorruptionKind, GenConfig};
pub use volume::{DatasetEntry, DatasetManifest, Label, Volume};
