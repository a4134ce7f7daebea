//! Link-set construction: true links from issue tags, issue-code links for the
//! auxiliary task, and generated false links (least-similar issue within a
//! batch, or the classic time-window sampling).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommitRecord, Corpus, IssueRecord, LinkRecord, Provenance, Timestamp};
use crate::error::{Error, Result};
use crate::preprocess::{split_identifier, TextPipeline};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrueLinks {
    pub links: Vec<LinkRecord>,
    /// Commits whose tag names an issue that was not loaded.
    pub unknown_issue: usize,
}

/// One link per tagged commit whose tag names a loaded issue, in commit order.
pub fn extract_true_links(issues: &[IssueRecord], commits: &[CommitRecord]) -> TrueLinks {
    let known: HashSet<&str> = issues.iter().map(|i| i.issue_id.as_str()).collect();
    let mut out = TrueLinks::default();
    for c in commits {
        let Some(tag) = c.tagged_issue_id.as_deref() else {
            continue;
        };
        if known.contains(tag) {
            out.links.push(LinkRecord::new(tag, &c.commit_id, Provenance::TaggedTrue));
        } else {
            out.unknown_issue += 1;
        }
    }
    out
}

/// Auxiliary-task example: does this changed file belong to the issue?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueCodeLink {
    pub issue_id: String,
    #[serde(rename = "commitid")]
    pub commit_id: String,
    /// Position of the file in the commit's `changed_files`.
    pub file_index: usize,
    pub file_name: String,
    pub label: u8,
}

/// Whether the issue text names the file: the extension-stripped basename
/// either as one (lowercased) token, or as the contiguous run of its
/// camelCase / snake_case parts.
pub fn issue_mentions_file(issue: &IssueRecord, file_name: &str, text: &TextPipeline) -> bool {
    let verbatim = text.normalize_token(file_name);
    let parts: Vec<String> = split_identifier(file_name, true, true)
        .iter()
        .filter_map(|p| text.normalize_token(p))
        .collect();
    [&issue.title_tokens, &issue.description_tokens]
        .into_iter()
        .any(|toks| {
            verbatim.as_ref().is_some_and(|v| toks.contains(v))
                || (!parts.is_empty() && toks.windows(parts.len()).any(|w| w == parts.as_slice()))
        })
}

/// One example per (true link, changed source file).
pub fn generate_issue_code_links(
    true_links: &[LinkRecord],
    corpus: &Corpus,
    text: &TextPipeline,
) -> Result<Vec<IssueCodeLink>> {
    let mut out = Vec::new();
    for link in true_links {
        let (issue, commit) = corpus.resolve(link)?;
        for (idx, f) in commit.changed_files.iter().enumerate() {
            if !f.is_source() {
                continue;
            }
            out.push(IssueCodeLink {
                issue_id: issue.issue_id.clone(),
                commit_id: commit.commit_id.clone(),
                file_index: idx,
                file_name: f.file_name.clone(),
                label: u8::from(issue_mentions_file(issue, &f.file_name, text)),
            });
        }
    }
    Ok(out)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratedFalseLinks {
    pub links: Vec<LinkRecord>,
    /// Least-similar picks that were themselves true links and got replaced
    /// by the next candidate.
    pub collisions: usize,
    /// Issues for which every candidate collided.
    pub skipped: usize,
}

/// For every distinct issue `s` of the batch (scan order), pairs the first
/// scanned commit of `s` with the batch issue least similar to `s`.
///
/// Ties go to the issue scanned first. A pair that is a known true link is
/// replaced by the next least similar issue.
pub fn generate_false_links_similarity(
    batch_true: &[LinkRecord],
    issue_embed: &BTreeMap<String, Vec<f64>>,
    known_true: &HashSet<(String, String)>,
) -> Result<GeneratedFalseLinks> {
    let mut issues: Vec<&str> = Vec::new();
    let mut first_commit: Vec<&str> = Vec::new();
    for l in batch_true {
        if !issues.contains(&l.issue_id.as_str()) {
            issues.push(&l.issue_id);
            first_commit.push(&l.commit_id);
        }
    }
    if issues.len() < 2 {
        return Err(Error::InvalidInput(
            "false link generation needs at least two distinct issues in the batch".into(),
        ));
    }
    let embeds: Vec<&[f64]> = issues
        .iter()
        .map(|id| {
            issue_embed
                .get(*id)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::InvalidInput(format!("no embedding for issue {id}")))
        })
        .collect::<Result<_>>()?;

    let mut out = GeneratedFalseLinks::default();
    for i in 0..issues.len() {
        let mut cands: Vec<(f64, usize)> = (0..issues.len())
            .filter(|&j| j != i)
            .map(|j| (cosine(embeds[i], embeds[j]), j))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let q = first_commit[i];
        let mut chosen = None;
        for (rank, &(_, j)) in cands.iter().enumerate() {
            if known_true.contains(&(issues[j].to_string(), q.to_string())) {
                continue;
            }
            if rank > 0 {
                out.collisions += 1;
            }
            chosen = Some(j);
            break;
        }
        match chosen {
            Some(j) => out
                .links
                .push(LinkRecord::new(issues[j], q, Provenance::GeneratedFalseSimilarity)),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FalseLinkMode {
    #[default]
    SimilarityInBatch,
    TimeInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalseLinkPolicy {
    pub mode: FalseLinkMode,
    /// Half-width of the window around each issue date (time mode only).
    pub window_days: u32,
    pub per_true: usize,
    pub seed: u64,
}

impl Default for FalseLinkPolicy {
    fn default() -> Self {
        Self {
            mode: FalseLinkMode::SimilarityInBatch,
            window_days: 7,
            per_true: 1,
            seed: 0,
        }
    }
}

impl FalseLinkPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if self.per_true == 0 {
            return Err(Error::Config("per_true must be at least 1".into()));
        }
        Ok(())
    }
}

/// Commits submitted within `window_days` of the issue's creation, update or
/// resolution date that are not truly linked to the issue. Corpus order.
pub fn time_window_candidates<'c>(
    issue: &IssueRecord,
    corpus: &'c Corpus,
    true_set: &HashSet<(String, String)>,
    window_days: u32,
) -> Vec<&'c CommitRecord> {
    let window = window_days as i64 * Timestamp::DAY;
    let dates: Vec<Timestamp> = issue.dates().collect();
    corpus
        .commits
        .iter()
        .filter(|c| {
            let Some(t) = c.commit_time else {
                return false;
            };
            c.tagged_issue_id.as_deref() != Some(issue.issue_id.as_str())
                && !true_set.contains(&(issue.issue_id.clone(), c.commit_id.clone()))
                && dates.iter().any(|d| (t.0 - d.0).abs() <= window)
        })
        .collect()
}

/// Time-window false links: for each true link, `per_true` commits sampled
/// without replacement from [`time_window_candidates`] of its issue.
pub fn generate_false_links_time(
    true_links: &[LinkRecord],
    corpus: &Corpus,
    policy: &FalseLinkPolicy,
) -> Result<GeneratedFalseLinks> {
    policy.validate()?;
    let true_set: HashSet<(String, String)> = true_links
        .iter()
        .map(|l| (l.issue_id.clone(), l.commit_id.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut out = GeneratedFalseLinks::default();
    let mut skipped_issues: BTreeSet<&str> = BTreeSet::new();
    for link in true_links {
        let issue = corpus
            .issue(&link.issue_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown issue {}", link.issue_id)))?;
        let cands = time_window_candidates(issue, corpus, &true_set, policy.window_days);
        if cands.is_empty() {
            skipped_issues.insert(&link.issue_id);
            continue;
        }
        for c in cands.choose_multiple(&mut rng, policy.per_true) {
            out.links.push(LinkRecord::new(
                &issue.issue_id,
                &c.commit_id,
                Provenance::GeneratedFalseTime,
            ));
        }
    }
    out.skipped = skipped_issues.len();
    Ok(out)
}

/// `(issue_id, commit_id)` pairs of the given links.
pub fn pair_set(links: &[LinkRecord]) -> HashSet<(String, String)> {
    links
        .iter()
        .map(|l| (l.issue_id.clone(), l.commit_id.clone()))
        .collect()
}
