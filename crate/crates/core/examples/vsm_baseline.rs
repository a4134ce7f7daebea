//! TF-IDF cosine baseline ranking held-out commits for each test issue.
//!
//! `cargo run --release --example vsm_baseline`

use tracelink::corpus::{generate_synthetic_corpus, Schema, SplitSpec, SynthConfig};
use tracelink::pipeline::{prepare, preprocess_synthetic};
use tracelink::retrieval::{build_queries, evaluate, CorpusStats, QueryConfig, VsmScorer};

fn main() -> tracelink::Result<()> {
    let schema = Schema::default();
    let synth = generate_synthetic_corpus(&SynthConfig::default())?;
    let corpus = preprocess_synthetic(&synth, &schema)?;
    let p = prepare(corpus, &schema.text.build()?, &SplitSpec::default())?;

    let pool: Vec<_> = p.splits.valid.iter().chain(&p.splits.test).cloned().collect();
    let queries = build_queries(&p.splits.test, Some(&pool), &QueryConfig::default())?;
    let stats = CorpusStats::from_links(&p.corpus, &p.splits.train)?;
    let mut scorer = VsmScorer::new(&p.corpus, stats);
    let eval = evaluate(&mut scorer, &queries)?;
    println!(
        "{} test queries, {} candidates each",
        queries.len(),
        queries.first().map_or(0, |q| q.candidates.len())
    );
    print!("{}", eval.report.to_table());
    Ok(())
}
