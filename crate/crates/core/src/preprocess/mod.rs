//! Text and code preprocessing.
//!
//! Issue titles, descriptions and commit messages go through
//! [`preprocess_text`]: code blocks are cut out, hyperlinks and issue tags
//! removed, the rest lowercased, tokenized, stopword filtered and stemmed.
//! Diffs and source files go through [`extract_identifiers`], which pulls
//! identifier names out with regular expressions and splits them on
//! camelCase / snake_case boundaries.

mod code;
mod lists;
mod text;

use std::collections::BTreeSet;
use std::path::Path;

pub use code::{
    extract_identifiers, extract_identifiers_with, split_identifier, CodePipelineConfig,
    ExtractorKind, IdentifierExtractor, PatternExtractor,
};
pub use lists::{CODE_KEYWORDS, ENGLISH_STOPWORDS};
pub use text::{
    extract_issue_code, find_issue_tags, preprocess_text, BlockKind, CodeBlock, IssueCode,
    StemmerKind, TextPipeline, TextPipelineConfig, DEFAULT_ISSUE_TAG_PATTERN,
};

use crate::error::{Error, Result};

/// Reads a word list: one token per line, blank lines and `#` comments ignored.
pub fn load_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}
