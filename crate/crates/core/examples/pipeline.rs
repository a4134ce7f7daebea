//! The whole stage chain in-process, writing every artifact under one
//! output directory: synth, preprocess, links, distill, train, eval, vsm.
//!
//! `cargo run --release --example pipeline -- [out-dir]`

use std::path::PathBuf;

use tracelink::pipeline::{run_chain, RunConfig};

fn main() -> tracelink::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("tracelink-example"), PathBuf::from);
    let mut cfg = RunConfig::default().with_seed(1);
    cfg.out = Some(out.clone());
    cfg.synth.n_issues = 120;
    cfg.eval.distractors = tracelink::pipeline::DistractorPool::All;
    cfg.distill.epochs = 2;
    cfg.distill.max_sequences = 64;
    cfg.train.epochs = 3;
    run_chain(&cfg)?;
    println!("artifacts in {}", out.display());
    Ok(())
}
