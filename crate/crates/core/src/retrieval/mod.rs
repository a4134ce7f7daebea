//! Thresholded prediction, the one-true-versus-99-distractors ranking
//! protocol, ranking metrics and the TF-IDF baseline.

mod metrics;
mod vsm;

pub use metrics::{hit_at_k, mrr, ndcg_at_k, precision_at_k, reciprocal_rank, MetricReport, ScoredQuery};
pub use vsm::{commit_doc, issue_doc, vsm_score, CorpusStats, VsmScorer};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LinkRecord;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Candidates per query: the true commit and 99 distractors.
pub const CANDIDATES: usize = 100;

/// `(score, score > threshold)`
pub fn predict(score: f64, threshold: f64) -> (f64, bool) {
    (score, score > threshold)
}

/// Anything that scores an (issue, commit) pair.
pub trait LinkScorer {
    fn score(&mut self, issue_id: &str, commit_id: &str) -> Result<f64>;
}

impl<F: FnMut(&str, &str) -> Result<f64>> LinkScorer for F {
    fn score(&mut self, issue_id: &str, commit_id: &str) -> Result<f64> {
        self(issue_id, commit_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub commit_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingQuery {
    pub query_id: usize,
    pub issue_id: String,
    pub true_commit: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub max_issues: usize,
    pub seed: u64,
    /// Put other commits of the query issue back in as relevant candidates
    /// instead of leaving them out.
    pub multi_relevant: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            max_issues: 1000,
            seed: 0,
            multi_relevant: false,
        }
    }
}

/// One query per true link of up to `max_issues` sampled issues.
///
/// Distractor commits are drawn from the true links of other issues in
/// `distractor_pool`, or in the sampled query links when no pool is given.
/// Commits linked to the query issue anywhere in the inputs never serve as
/// distractors.
pub fn build_queries(
    query_links: &[LinkRecord],
    distractor_pool: Option<&[LinkRecord]>,
    cfg: &QueryConfig,
) -> Result<Vec<RankingQuery>> {
    if cfg.max_issues == 0 {
        return Err(Error::Config("max_issues must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_issue: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for l in query_links.iter().filter(|l| l.is_true()) {
        let v = by_issue.entry(&l.issue_id).or_default();
        if !v.contains(&l.commit_id.as_str()) {
            v.push(&l.commit_id);
        }
    }
    let mut issues: Vec<&str> = by_issue.keys().copied().collect();
    if issues.len() > cfg.max_issues {
        issues.shuffle(&mut rng);
        issues.truncate(cfg.max_issues);
        issues.sort_unstable();
    }
    let picked: BTreeSet<&str> = issues.iter().copied().collect();
    let picked_links: Vec<&LinkRecord> = query_links
        .iter()
        .filter(|l| l.is_true() && picked.contains(l.issue_id.as_str()))
        .collect();
    let pool: Vec<&LinkRecord> = match distractor_pool {
        Some(p) => p.iter().filter(|l| l.is_true()).collect(),
        None => picked_links.clone(),
    };
    let mut linked: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for l in query_links.iter().chain(pool.iter().copied()).filter(|l| l.is_true()) {
        linked.entry(&l.issue_id).or_default().insert(&l.commit_id);
    }
    let pool_commits: BTreeSet<&str> = pool.iter().map(|l| l.commit_id.as_str()).collect();
    if picked_links.is_empty() || pool.len() < CANDIDATES {
        return Err(Error::InvalidInput(format!(
            "ranking protocol needs at least {CANDIDATES} usable true links, found {}",
            pool.len()
        )));
    }

    let mut out = Vec::new();
    for issue in &issues {
        let own = &linked[issue];
        let usable: Vec<&str> = pool_commits.iter().copied().filter(|c| !own.contains(c)).collect();
        for &truth in &by_issue[issue] {
            let relevant: Vec<&str> = if cfg.multi_relevant {
                by_issue[issue].iter().copied().filter(|&c| c != truth).collect()
            } else {
                Vec::new()
            };
            let n_distract = CANDIDATES - 1 - relevant.len().min(CANDIDATES - 1);
            if usable.len() < n_distract {
                return Err(Error::InvalidInput(format!(
                    "issue {issue}: only {} distractor commits available, need {n_distract}",
                    usable.len()
                )));
            }
            let mut cands: Vec<Candidate> = index::sample(&mut rng, usable.len(), n_distract)
                .into_iter()
                .map(|i| Candidate {
                    commit_id: usable[i].to_string(),
                    label: 0,
                })
                .collect();
            for r in relevant.iter().take(CANDIDATES - 1) {
                let at = rng.gen_range(0..=cands.len());
                cands.insert(
                    at,
                    Candidate {
                        commit_id: r.to_string(),
                        label: 1,
                    },
                );
            }
            let at = rng.gen_range(0..=cands.len());
            cands.insert(
                at,
                Candidate {
                    commit_id: truth.to_string(),
                    label: 1,
                },
            );
            out.push(RankingQuery {
                query_id: out.len(),
                issue_id: issue.to_string(),
                true_commit: truth.to_string(),
                candidates: cands,
            });
        }
    }
    Ok(out)
}

/// Scores every candidate of every query.
pub fn score_queries<S: LinkScorer + ?Sized>(scorer: &mut S, queries: &[RankingQuery]) -> Result<Vec<ScoredQuery>> {
    queries
        .iter()
        .map(|q| {
            let scores = q
                .candidates
                .iter()
                .map(|c| scorer.score(&q.issue_id, &c.commit_id))
                .collect::<Result<Vec<_>>>()?;
            ScoredQuery::new(scores, q.candidates.iter().map(|c| c.label).collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub scored: Vec<ScoredQuery>,
}

impl Evaluation {
    /// `query_id,candidate_id,score,label,rank` rows.
    pub fn scores_csv(&self, queries: &[RankingQuery]) -> String {
        let mut s = String::from("query_id,candidate_id,score,label,rank\n");
        for (q, sq) in queries.iter().zip(&self.scored) {
            let ranks = sq.ranks();
            for (i, c) in q.candidates.iter().enumerate() {
                writeln!(s, "{},{},{:.17e},{},{}", q.query_id, c.commit_id, sq.scores[i], c.label, ranks[i])
                    .expect("string write");
            }
        }
        s
    }

    /// Writes `metrics.json`, `metrics.txt` and optionally `scores.csv` into `dir`.
    pub fn write(&self, dir: &Path, queries: Option<&[RankingQuery]>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        w("metrics.json", self.report.to_json())?;
        w("metrics.txt", self.report.to_table())?;
        if let Some(q) = queries {
            w("scores.csv", self.scores_csv(q))?;
        }
        Ok(())
    }
}

pub fn evaluate<S: LinkScorer + ?Sized>(scorer: &mut S, queries: &[RankingQuery]) -> Result<Evaluation> {
    let scored = score_queries(scorer, queries)?;
    let report = MetricReport::from_queries(&scored)?;
    Ok(Evaluation { report, scored })
}
