use crate::corpus::{split_links, Corpus, LinkRecord, Schema, Splits, SplitSpec, SyntheticCorpus};
use crate::encoder::Vocab;
use crate::error::Result;
use crate::links::{extract_true_links, generate_issue_code_links, IssueCodeLink};
use crate::preprocess::TextPipeline;

/// Minimum corpus frequency for a token to enter the vocabulary.
pub const VOCAB_MIN_FREQ: usize = 2;

/// A corpus with its true links, splits, auxiliary examples and vocabulary.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub true_links: Vec<LinkRecord>,
    pub splits: Splits,
    /// Issue-code examples built from the training split.
    pub aux_train: Vec<IssueCodeLink>,
    pub vocab: Vocab,
}

/// Runs raw synthetic records through the text and code pipelines.
pub fn preprocess_synthetic(synth: &SyntheticCorpus, schema: &Schema) -> Result<Corpus> {
    let text = schema.text.build()?;
    schema.code.validate()?;
    let issues = synth
        .issues
        .iter()
        .cloned()
        .map(|mut i| {
            i.preprocess(&text);
            i
        })
        .collect();
    let commits = synth
        .commits
        .iter()
        .cloned()
        .map(|mut c| {
            c.preprocess(&text, &schema.code);
            c
        })
        .collect();
    Ok(Corpus::new(issues, commits))
}

/// Every token sequence the encoders will read: issue text, commit messages
/// and per-file diff tokens.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Vocab {
    let issue_seqs = corpus.issues.iter().map(|i| i.text_tokens().collect::<Vec<_>>());
    let msg_seqs = corpus.commits.iter().map(|c| c.message_tokens.iter().collect::<Vec<_>>());
    let code_seqs = corpus.commits.iter().map(|c| c.code_tokens().collect::<Vec<_>>());
    Vocab::build(issue_seqs.chain(msg_seqs).chain(code_seqs), min_freq)
}

pub fn prepare(corpus: Corpus, text: &TextPipeline, split: &SplitSpec) -> Result<Prepared> {
    let true_links = extract_true_links(&corpus.issues, &corpus.commits).links;
    let splits = split_links(&true_links, split)?;
    let aux_train = generate_issue_code_links(&splits.train, &corpus, text)?;
    let vocab = build_vocab(&corpus, VOCAB_MIN_FREQ);
    Ok(Prepared {
        corpus,
        true_links,
        splits,
        aux_train,
        vocab,
    })
}
