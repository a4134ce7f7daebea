//! True links from commit tags, the issue-grouped split, issue-code examples
//! and time-window false links.
//!
//! `cargo run --example links`

use tracelink::corpus::{generate_synthetic_corpus, split_links, Corpus, Schema, SplitSpec, SynthConfig};
use tracelink::links::{
    extract_true_links, generate_false_links_time, generate_issue_code_links, FalseLinkMode, FalseLinkPolicy,
};
use tracelink::pipeline::preprocess_synthetic;

fn main() -> tracelink::Result<()> {
    let schema = Schema::default();
    let synth = generate_synthetic_corpus(&SynthConfig {
        n_issues: 60,
        ..Default::default()
    })?;
    let corpus: Corpus = preprocess_synthetic(&synth, &schema)?;

    let truth = extract_true_links(&corpus.issues, &corpus.commits);
    println!("true links: {} ({} tags name unknown issues)", truth.links.len(), truth.unknown_issue);

    let splits = split_links(&truth.links, &SplitSpec::default())?;
    println!(
        "split: train {} / valid {} / test {}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );

    let aux = generate_issue_code_links(&splits.train, &corpus, &schema.text.build()?)?;
    let mentioned = aux.iter().filter(|a| a.label == 1).count();
    println!("issue-code examples: {} ({mentioned} files named in their issue)", aux.len());
    if let Some(a) = aux.iter().find(|a| a.label == 1) {
        println!("  e.g. {} mentions {} (changed in {})", a.issue_id, a.file_name, a.commit_id);
    }

    let policy = FalseLinkPolicy {
        mode: FalseLinkMode::TimeInterval,
        ..Default::default()
    };
    let false_links = generate_false_links_time(&truth.links, &corpus, &policy)?;
    println!(
        "time-window false links: {} ({} issues without candidates)",
        false_links.links.len(),
        false_links.skipped
    );
    for l in false_links.links.iter().take(3) {
        println!("  {} x {} ({:?})", l.issue_id, l.commit_id, l.provenance);
    }
    Ok(())
}
