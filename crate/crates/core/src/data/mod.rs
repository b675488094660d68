//! Tabular dataset handling: schema inference, encoding, stratified splits
//! and a synthetic generator with a planted spurious correlation.

mod encode;
mod schema;
mod split;
mod synth;
mod table;

pub use encode::{encode, EncodedDataset, UnknownPolicy};
pub use schema::{infer_schema, FeatureKind, FeatureSpec, InferOptions, KindHint, Schema};
pub use split::{stratified_split, SplitBundle, SplitIds};
pub use synth::{
    synth_spurious, synth_table, SynthSpec, GROUP_FEATURE, MINORITY_CATEGORY, SPURIOUS_FEATURE, TARGET as SYNTH_TARGET,
};
pub use table::RawTable;
