//! Desk-scale pipeline for 30-day emergency-department return risk on
//! synthetic mental-health cohorts.
//!
//! The crate is organized as a chain of stages, each usable on its own:
//!
//! * [`cohort`] — visit-level data model, eligibility filtering, 30-day
//!   return labeling, and a calibrated synthetic cohort generator.
//! * [`harmonize`] — vital averaging, clinical binning, temporal features,
//!   missing-data policy, KNN imputation, and one-hot / z-score encoding
//!   into a model-ready feature matrix.
//! * [`extract`] — few-shot text classification of chief complaints and
//!   social-determinant notes, with a deterministic offline fallback and a
//!   weighted-metrics evaluator.
//! * [`learn`] — gradient-boosted trees, AdaBoost, logistic regression and
//!   a small MLP behind one probability contract, plus splitting,
//!   oversampling, grid search, and ranking metrics.
//! * [`attribution`] — path-dependent TreeSHAP, closed-form linear SHAP,
//!   an exponential brute-force Shapley oracle, and global importance.
//! * [`explain`] — context bundles, templated patient narratives, and the
//!   machine-checkable claim sidecar that travels with each narrative.
//! * [`assess`] — the four-dimension narrative reliability protocol with
//!   severity classes and batch error rates.
//! * [`pipeline`] — end-to-end orchestration used by the `edrk` CLI.

pub mod assess;
pub mod attribution;
pub mod cohort;
pub mod explain;
pub mod extract;
pub mod harmonize;
pub mod learn;
pub mod pipeline;
pub mod tables;
pub mod text;
