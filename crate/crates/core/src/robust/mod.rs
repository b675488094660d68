//! Per-feature specialization of a pre-trained model.
//!
//! JTT builds an error set for categorical feature `j` from the base model's
//! clean-input reconstructions and fine-tunes encoder plus head `j` with
//! those rows upweighted. DFR draws a category-balanced subset of the
//! validation split and retrains head `j` alone.

mod balanced;
mod bank;
mod error_set;
mod finetune;

pub use balanced::{build_balanced_subset, BalancedSubset};
pub use bank::{robustify_all, BankManifest, FeatureMeta, ModelBank, Strategy, StrategyKind};
pub use error_set::{build_error_set, ErrorSet};
pub use finetune::{dfr_finetune, jtt_finetune, jtt_weights, FinetuneConfig};

#[cfg(test)]
mod tests;
