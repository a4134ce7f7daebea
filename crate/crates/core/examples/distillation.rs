//! Distilling a 12-layer teacher into a 2-layer student by matching hidden
//! states of paired layers.
//!
//! `cargo run --release --example distillation`

use tracelink::corpus::{generate_synthetic_corpus, Schema, SplitSpec, SynthConfig};
use tracelink::distill::{run_distillation, ChannelMap, DistillSchedule};
use tracelink::encoder::{code_sequence, issue_sequence, Budgets, EncoderConfig, EncoderState, Sequence};
use tracelink::pipeline::{prepare, preprocess_synthetic};

fn main() -> tracelink::Result<()> {
    let schema = Schema::default();
    let synth = generate_synthetic_corpus(&SynthConfig {
        n_issues: 60,
        ..Default::default()
    })?;
    let p = prepare(preprocess_synthetic(&synth, &schema)?, &schema.text.build()?, &SplitSpec::default())?;
    let b = Budgets::default();
    let seqs: Vec<Sequence> = p
        .corpus
        .issues
        .iter()
        .map(|i| issue_sequence(i, &p.vocab, &b))
        .chain(p.corpus.commits.iter().map(|c| code_sequence(c, &p.vocab, &b)))
        .take(64)
        .collect();

    let mut teacher = EncoderState::new(EncoderConfig {
        hidden_dim: 32,
        vocab_size: p.vocab.len(),
        ..EncoderConfig::teacher()
    })?;
    teacher.frozen = true;
    let channels: ChannelMap = "1:1,5:2".parse()?;
    let schedule = DistillSchedule {
        epochs: 8,
        ..Default::default()
    };

    let random = EncoderState::new(EncoderConfig {
        hidden_dim: 32,
        vocab_size: p.vocab.len(),
        ..EncoderConfig::student()
    })?;
    let from_scratch = run_distillation(&teacher, random, &seqs, &channels, &schedule)?;
    println!("student from random init, {} sequences, channels {channels}", seqs.len());
    print!("{}", from_scratch.curve_csv());

    let copied = EncoderState::copy_blocks(&teacher, &channels.teacher_blocks(2).expect("two channels"))?;
    let warm = run_distillation(&teacher, copied, &seqs, &channels, &schedule)?;
    println!(
        "student copied from teacher blocks 1 and 5: loss {:.4} -> {:.4}",
        warm.initial_loss(),
        warm.final_loss()
    );
    Ok(())
}
