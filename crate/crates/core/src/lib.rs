//! Stance and moral-foundation analysis of social-media comments about vaccination.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`]: loading, validating and filtering page/post/comment exports.
//! - [`annotation`]: the annotation store, Cohen's kappa and gold-label aggregation.
//! - [`preprocess`]: tokenisation and fixed-length embedding encoding.
//! - [`entitylink`]: TagMe-compatible entity linking and entity features.
//! - [`models`]: the relevance, presence and polarity networks.
//! - [`eval`]: AUROC, stratified folds, cross-validation and ablations.
//! - [`analytics`]: Virtue-vs-Vice ratios, shares and monthly time series.

pub mod analytics;
pub mod annotation;
pub mod config;
pub mod corpus;
pub mod entitylink;
pub mod eval;
pub mod labels;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod synthetic;
mod table;

mod jsonl;

pub use labels::{Foundation, MoralLabel, PageStance, Polarity, Stance};
