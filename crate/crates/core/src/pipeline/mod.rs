//! File-based pipeline stages and their run configuration.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory and writes its own, so any stage can be re-run on its own.

mod config;
mod prepare;
mod stages;

pub use config::{
    resolve_config, DistillConfig, DistractorPool, EvalConfig, EvalSplit, Layout, ProjectConfig, RunConfig,
    DEFAULT_OUT, OUT_ENV, RUN_FILE,
};
pub use prepare::{build_vocab, prepare, preprocess_synthetic, Prepared, VOCAB_MIN_FREQ};
pub use stages::{
    build_teacher, cmd_distill, cmd_eval, cmd_links, cmd_preprocess, cmd_synth, cmd_train, cmd_vsm,
    distill_sequences, exit_code, queries_for, run_chain, threshold_report, Stage, ThresholdReport,
};
