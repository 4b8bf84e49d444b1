//! Hybrid & integrative reduced-rank regression (HiRRR).
//!
//! Joint low-rank modeling of a primary outcome plus surrogate outcomes from
//! multi-record data, augmented by an autoencoder branch over single-record
//! outcome data that shares the same decoder. Includes GLM and plain
//! reduced-rank baselines, cross-validation, evaluation metrics, a simulation
//! harness, and a synthetic-EHR cohort pipeline.

pub mod cohort;
pub mod error;
pub mod estimators;
pub mod expfam;
pub mod kernels;
pub mod metrics;
pub mod model_selection;
pub mod reporting;
pub mod seeding;
pub mod simulation;
pub mod types;

pub use error::HirrrError;
pub use expfam::Family;
pub use types::{Dataset, FitConfig, ModelParams};
