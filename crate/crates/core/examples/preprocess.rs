//! Text and code preprocessing on hand-written records and on a synthetic project.
//!
//! `cargo run --example preprocess`

use tracelink::corpus::{generate_synthetic_corpus, Schema, SynthConfig};
use tracelink::preprocess::{extract_identifiers, find_issue_tags, CodePipelineConfig, TextPipelineConfig};
use tracelink::pipeline::preprocess_synthetic;

fn main() -> tracelink::Result<()> {
    let text = TextPipelineConfig::default().build()?;
    let raw = "NullPointerException when the TaskScheduler restarts workers (see PROJ-1402)";
    println!("text:        {raw}");
    println!("tokens:      {:?}", text.apply(raw));
    println!("issue tags:  {:?}", find_issue_tags("[PROJ-1402] guard scheduler restart"));

    let code = "public void restartWorker(int workerId) { taskQueue.drainTo(pending_jobs); }";
    println!("code:        {code}");
    println!("identifiers: {:?}", extract_identifiers(code, &CodePipelineConfig::default()));

    let synth = generate_synthetic_corpus(&SynthConfig {
        n_issues: 40,
        ..Default::default()
    })?;
    let corpus = preprocess_synthetic(&synth, &Schema::default())?;
    let issue = &corpus.issues[0];
    println!("\nsynthetic project: {} issues, {} commits", corpus.issues.len(), corpus.commits.len());
    println!("issue {}: {:?}", issue.issue_id, issue.raw_title);
    println!("  title tokens: {:?}", issue.title_tokens);
    let commit = corpus
        .commits
        .iter()
        .find(|c| c.tagged_issue_id.as_deref() == Some(issue.issue_id.as_str()))
        .expect("every synthetic issue has a fixing commit");
    println!("commit {}: {:?}", commit.commit_id, commit.raw_message);
    println!("  message tokens: {:?}", commit.message_tokens);
    for f in &commit.changed_files {
        println!("  {} -> {} diff identifiers", f.file_path, f.diff_tokens.len());
    }
    Ok(())
}
