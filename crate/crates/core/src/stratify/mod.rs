//! Predictive stratification: a clinical and an echocardiographic logistic
//! specialist whose probabilities are blended by a thresholded meta-model.

pub mod dataset;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod schema;
pub mod specialist;

use thiserror::Error;

pub use dataset::{load_dataset, read_dataset, write_dataset, Cell, FeatureRow, LabeledRow, RawDataset};
pub use meta::{train_meta, GridPoint, MetaFit, MetaModel, Objective};
pub use metrics::{evaluate, roc_auc, Evaluation, Metrics};
pub use pipeline::{
    highlights, predict, stratify_cohort, train_stacked, Highlight, Prediction, RankedPatient, StackedModel, StratifiedCohort, TrainConfig,
    TrainReport, MODEL_SCHEMA,
};
pub use preprocess::{
    drop_incomplete, preprocess, ColumnDescriptor, ColumnEncoding, DropReport, DroppedRow, FeatureMatrix, Preprocessor,
};
pub use schema::{csv_header, feature_index, Block, FeatureKind, FeatureSpec, FEATURES};
pub use specialist::{train_specialist, train_specialist_traced, SpecialistModel, TrainingMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StratifyError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("dataset header does not match the feature schema at column `{0}`")]
    SchemaMismatch(String),
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every row has a missing required feature")]
    AllRowsDropped,
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("need at least {need} rows, have {have}")]
    TooFewRows { have: usize, need: usize },
    #[error("training did not converge (final loss {loss})")]
    NonConvergence { loss: f64 },
    #[error("missing features: {}", .0.join(", "))]
    MissingFeatures(Vec<String>),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("model artifact: {0}")]
    Artifact(String),
}
