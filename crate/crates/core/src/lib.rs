//! Robust self-supervised pre-training for tabular data.
//!
//! The pipeline has four stages:
//!
//! 1. [`model::pretrain_erm`] fits an encoder with one reconstruction head per
//!    feature against the masked reconstruction loss.
//! 2. [`robust::robustify_all`] specializes one copy of that model per
//!    categorical feature, either by upweighting rows the head gets wrong
//!    (JTT) or by retraining the head on a category-balanced validation
//!    subset (DFR).
//! 3. [`ensemble`] routes every row to the specialized model of the feature
//!    it reconstructs worst and trains a logistic classifier on the routed
//!    latents.
//! 4. [`eval`] computes overall metrics, per-category accuracy tables and
//!    error-slice reports.
//!
//! [`pipeline`] ties the stages together with on-disk artifacts and is what
//! the `tabdro` binary drives.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod ndcore;
pub mod pipeline;
pub mod robust;
pub(crate) mod util;

pub use error::{Error, Result};
