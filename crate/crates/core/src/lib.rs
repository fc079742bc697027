//! Predictive and prescriptive sleep-quality modeling.
//!
//! The pipeline turns raw questionnaire responses into encoded feature
//! vectors ([`survey`], [`preprocess`]), fits a regularized boosted-tree
//! classifier ([`gbm`]), attributes predictions to features with exact tree
//! Shapley values ([`shap`]), and converts population-level attributions into
//! minimal-change behavior plans with a small integer program ([`intervention`]).
//! [`experiment`] batches those plans into sweeps, frontiers and ablations.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod dataset;
pub mod experiment;
pub mod features;
pub mod gbm;
pub mod intervention;
pub mod preprocess;
pub mod psqi;
pub mod schema;
pub mod shap;
pub mod survey;

pub use dataset::{Dataset, FeatureVector, SleepLabel};
pub use schema::SurveySchema;
