//! Configuration, run directories with per-phase resume, and the
//! end-to-end pipeline behind the `tabdro` binary.

mod config;
mod run;

pub use config::{
    apply_override, CsvSource, DataConfig, EvalConfig, PipelineConfig, SourceKind, SplitConfig, Stage2Config,
    DEFAULT_SEED, SEED_ENV,
};
pub use run::{
    load_table, run_pipeline, write_synth, Phase, PhaseRecord, RunManifest, RunOptions, RunSummary, Selection,
};
