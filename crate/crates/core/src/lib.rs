//! Packet classification with a tuple-predicting neural model.
//!
//! A [`tss::TssIndex`] groups rules into tuples by prefix length. A
//! [`model::ResidualMlp`] predicts which tuple holds a packet's winning
//! rule; the [`classifier::Classifier`] probes that tuple and falls back to
//! a priority-ordered search over the rest on a miss. [`pipeline`] runs the
//! two stages over double-buffered batches and drives rule updates.

pub mod baseline;
pub mod classifier;
pub mod model;
pub mod pipeline;
pub mod ruleset;
pub mod tss;

pub use baseline::Baseline;
pub use classifier::{Classified, Classifier, ClassifierConfig, ClassifyStats, Predictor};
pub use model::{ModelConfig, ResidualMlp, TrainingConfig, MODEL_MAGIC};
pub use pipeline::{
    run_pipeline, PipelineConfig, PipelineError, SharedClassifier, ThroughputMonitor,
    UpdateDecision,
};
pub use ruleset::{
    Condition, FeatureVector, FieldKind, Packet, Priority, Rule, RuleId, Ruleset, RulesetError,
    Schema, Trace,
};
pub use tss::{Hit, MatchResult, RuleEdit, TssError, TssIndex, TupleIdx, TupleSignature};
