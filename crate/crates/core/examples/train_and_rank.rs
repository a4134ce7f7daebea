//! Fine-tuning a small student on the link task, then ranking and
//! classifying test links.
//!
//! `cargo run --release --example train_and_rank`

use tracelink::corpus::{generate_synthetic_corpus, LinkRecord, Schema, SplitSpec, SynthConfig};
use tracelink::encoder::{Budgets, EncoderConfig, EncoderState};
use tracelink::links::pair_set;
use tracelink::pipeline::{prepare, preprocess_synthetic};
use tracelink::retrieval::{build_queries, evaluate, QueryConfig, DEFAULT_THRESHOLD};
use tracelink::trainer::{train, LinkModel, ModelScorer, TrainConfig, TrainData, TrainEvent};

fn main() -> tracelink::Result<()> {
    let schema = Schema::default();
    let synth = generate_synthetic_corpus(&SynthConfig::default())?;
    let p = prepare(preprocess_synthetic(&synth, &schema)?, &schema.text.build()?, &SplitSpec::default())?;
    let pool: Vec<LinkRecord> = p.splits.valid.iter().chain(&p.splits.test).cloned().collect();
    let valid = build_queries(&p.splits.valid, Some(&pool), &QueryConfig::default())?;
    let test = build_queries(&p.splits.test, Some(&pool), &QueryConfig::default())?;

    let encoder = EncoderState::new(EncoderConfig {
        hidden_dim: 32,
        vocab_size: p.vocab.len(),
        ..EncoderConfig::student()
    })?;
    let model = LinkModel::new(encoder, p.vocab.clone(), Budgets::default(), 0)?;
    let data = TrainData {
        corpus: &p.corpus,
        train: p.splits.train.clone(),
        aux: p.aux_train.clone(),
        valid_queries: valid,
        known_true: pair_set(&p.true_links),
    };
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 8,
        ..Default::default()
    };
    let outcome = train(model, &data, &cfg, None, &mut |e| {
        if let TrainEvent::Epoch(s) = e {
            println!("epoch {}  total loss {:.3}  valid MRR {:.4}", s.epoch, s.total, s.valid_mrr);
        }
    })?;
    println!("best epoch {}", outcome.best_epoch);

    let model = outcome.model;
    let eval = evaluate(&mut ModelScorer::new(&model, &p.corpus), &test)?;
    print!("{}", eval.report.to_table());

    let link = &p.splits.test[0];
    let (issue, commit) = p.corpus.resolve(link)?;
    let (score, linked) = model.predict(issue, commit, DEFAULT_THRESHOLD)?;
    println!("{} x {}: cosine {score:.3}, linked at {DEFAULT_THRESHOLD}: {linked}", link.issue_id, link.commit_id);
    Ok(())
}
