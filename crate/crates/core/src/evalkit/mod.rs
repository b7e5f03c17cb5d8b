//! Validation splits, the baseline classifier and evaluation statistics.

pub mod baseline;
pub mod folds;
pub mod metrics;
pub mod stats;

use thiserror::Error;

pub use baseline::{predict, train_baseline, AdamConfig, BaselineModel, TrainConfig, TrainHistory};
pub use folds::{make_folds, Scheme, SplitAssignment};
pub use metrics::{confusion_matrix, top_confusable_pairs, ConfusablePair, ConfusionMatrix};
pub use stats::{one_way_anova, t_test_one_tailed, Dof, StatTestResult};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("user-independent folds need at least {needed} subjects, found {got}")]
    TooFewSubjects { got: usize, needed: usize },
    #[error("{0} repetitions cannot be split evenly into folds")]
    IncompatibleRepetitionCount(usize),
    #[error("fold {0} does not exist")]
    MissingFold(usize),
    #[error("trial {0} has no fold assignment")]
    UnassignedTrial(String),
    #[error("malformed fold table: {0}")]
    BadFoldTable(String),
    #[error("training labels hold a single class")]
    DegenerateLabels,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {0} is not a letter class")]
    BadLabel(usize),
    #[error("confusion matrix has no off-diagonal entries")]
    NoErrors,
    #[error("{0}")]
    InsufficientSamples(String),
    #[error("all groups are constant and equal")]
    DegenerateGroups,
    #[error("zero variance: samples are identical, no evidence either way")]
    ZeroVariance,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}
