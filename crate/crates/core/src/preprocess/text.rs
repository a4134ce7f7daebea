use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::lists::ENGLISH_STOPWORDS;
use crate::error::{Error, Result};

/// Bracketed project-key-dash-number tags such as `[CALCITE-2299]`.
pub const DEFAULT_ISSUE_TAG_PATTERN: &str = r"\[[A-Za-z][A-Za-z0-9_]*-[0-9]+\]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StemmerKind {
    #[default]
    PorterLike,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextPipelineConfig {
    pub stopwords: BTreeSet<String>,
    pub stemmer: StemmerKind,
    pub strip_hyperlinks: bool,
    pub strip_issue_tags: bool,
    pub issue_tag_pattern: String,
}

impl Default for TextPipelineConfig {
    fn default() -> Self {
        Self {
            stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            stemmer: StemmerKind::PorterLike,
            strip_hyperlinks: true,
            strip_issue_tags: true,
            issue_tag_pattern: DEFAULT_ISSUE_TAG_PATTERN.to_string(),
        }
    }
}

impl TextPipelineConfig {
    /// Compiles the configuration into a reusable pipeline.
    pub fn build(&self) -> Result<TextPipeline> {
        TextPipeline::new(self.clone())
    }
}

/// A compiled text pipeline. Build once, apply to many records.
pub struct TextPipeline {
    cfg: TextPipelineConfig,
    tag_re: Regex,
    stemmer: Option<Stemmer>,
}

impl std::fmt::Debug for TextPipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextPipeline").field("cfg", &self.cfg).finish()
    }
}

impl TextPipeline {
    pub fn new(cfg: TextPipelineConfig) -> Result<Self> {
        // Case-insensitive so that uppercasing the input never changes what is stripped.
        let tag_re = Regex::new(&format!("(?i:{})", cfg.issue_tag_pattern))
            .map_err(|e| Error::Config(format!("issue tag pattern: {e}")))?;
        let stemmer = match cfg.stemmer {
            StemmerKind::PorterLike => Some(Stemmer::create(Algorithm::English)),
            StemmerKind::None => None,
        };
        Ok(Self {
            cfg,
            tag_re,
            stemmer,
        })
    }

    pub fn config(&self) -> &TextPipelineConfig {
        &self.cfg
    }

    /// Issue tags found in `raw`, brackets stripped and uppercased (`CALCITE-2299`).
    pub fn issue_tags(&self, raw: &str) -> Vec<String> {
        self.tag_re
            .find_iter(raw)
            .map(|m| {
                m.as_str()
                    .trim_matches(|c| c == '[' || c == ']')
                    .to_uppercase()
            })
            .collect()
    }

    pub fn apply(&self, raw: &str) -> Vec<String> {
        let IssueCode { remaining, .. } = extract_issue_code(raw);
        let mut text = remaining;
        if self.cfg.strip_hyperlinks {
            text = hyperlink_re().replace_all(&text, " ").into_owned();
        }
        if self.cfg.strip_issue_tags {
            text = self.tag_re.replace_all(&text, " ").into_owned();
        }
        let lowered = text.to_lowercase();

        let mut out = Vec::new();
        for raw_tok in word_re().find_iter(&lowered) {
            let tok = raw_tok.as_str();
            if !self.keep(tok) {
                continue;
            }
            let stemmed = self.stem_fixpoint(tok);
            if self.keep(&stemmed) {
                out.push(stemmed);
            }
        }
        out
    }

    /// Lowercases, filters and stems a single token the same way [`apply`](Self::apply)
    /// treats words. `None` when the token would be dropped.
    pub fn normalize_token(&self, tok: &str) -> Option<String> {
        let lowered = tok.to_lowercase();
        if !self.keep(&lowered) {
            return None;
        }
        let stemmed = self.stem_fixpoint(&lowered);
        self.keep(&stemmed).then_some(stemmed)
    }

    fn keep(&self, tok: &str) -> bool {
        tok.len() > 1 && !self.cfg.stopwords.contains(tok) && !tok.bytes().all(|b| b.is_ascii_digit())
    }

    /// Snowball stemming is not idempotent on every word; iterating to a fixed
    /// point makes the whole pipeline idempotent.
    fn stem_fixpoint(&self, tok: &str) -> String {
        let Some(stemmer) = &self.stemmer else {
            return tok.to_string();
        };
        let mut cur = tok.to_string();
        for _ in 0..8 {
            let next = stemmer.stem(&cur).into_owned();
            if next == cur || next.is_empty() {
                break;
            }
            cur = next;
        }
        cur
    }
}

/// Lowercases, tokenizes, removes stopwords, hyperlinks, issue tags and code
/// blocks, and stems. Compiles `cfg` on every call; use [`TextPipeline`] in loops.
pub fn preprocess_text(raw: &str, cfg: &TextPipelineConfig) -> Result<Vec<String>> {
    Ok(TextPipeline::new(cfg.clone())?.apply(raw))
}

/// Issue tags in `raw` matched by the default pattern, uppercased without brackets.
pub fn find_issue_tags(raw: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(DEFAULT_ISSUE_TAG_PATTERN).unwrap())
        .find_iter(raw)
        .map(|m| {
            m.as_str()
                .trim_matches(|c| c == '[' || c == ']')
                .to_uppercase()
        })
        .collect()
}

fn hyperlink_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:(?:https?|ftp|file)://|www\.)[^\s<>\]\)]+").unwrap())
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[a-z0-9]+").unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Fenced,
    Markup,
    Inline,
    Indented,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub kind: BlockKind,
    /// Code without its delimiters.
    pub content: String,
    /// Number of bytes cut from the text, delimiters included.
    pub removed_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IssueCode {
    pub blocks: Vec<CodeBlock>,
    pub remaining: String,
}

fn code_block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(concat!(
            r"(?s)```[^\n`]*\n?(?P<fenced>.*?)```",
            r"|(?is)\{code(?::[^}]*)?\}(?P<code>.*?)\{code\}",
            r"|(?is)\{noformat\}(?P<noformat>.*?)\{noformat\}",
            r"|`(?P<inline>[^`\n]+)`",
            r"|(?m)(?P<indented>(?:^(?: {4}|\t)[^\n]*(?:\n|$))+)",
        ))
        .unwrap()
    })
}

/// Splits code blocks (fenced, `{code}`/`{noformat}` markup, inline backticks,
/// indented) out of issue text. Repeats until no block is left, so applying it
/// to `remaining` again finds nothing.
pub fn extract_issue_code(raw: &str) -> IssueCode {
    let re = code_block_re();
    let mut blocks = Vec::new();
    let mut text = raw.to_string();
    loop {
        let mut next = String::with_capacity(text.len());
        let mut last = 0;
        let mut found = false;
        for caps in re.captures_iter(&text) {
            let whole = caps.get(0).unwrap();
            if whole.as_str().is_empty() {
                continue;
            }
            found = true;
            let (kind, content) = if let Some(m) = caps.name("fenced") {
                (BlockKind::Fenced, m.as_str())
            } else if let Some(m) = caps.name("code").or_else(|| caps.name("noformat")) {
                (BlockKind::Markup, m.as_str())
            } else if let Some(m) = caps.name("inline") {
                (BlockKind::Inline, m.as_str())
            } else {
                (BlockKind::Indented, caps.name("indented").unwrap().as_str())
            };
            next.push_str(&text[last..whole.start()]);
            last = whole.end();
            blocks.push(CodeBlock {
                kind,
                content: content.to_string(),
                removed_len: whole.len(),
            });
        }
        if !found {
            return IssueCode {
                blocks,
                remaining: text,
            };
        }
        next.push_str(&text[last..]);
        text = next;
    }
}
