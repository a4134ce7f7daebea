use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{CommitRecord, Corpus, IssueRecord, LinkRecord};
use crate::error::Result;

use super::LinkScorer;

/// Document frequencies over a reference document set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_docs<'a, D, T>(docs: D) -> Self
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut s = CorpusStats::default();
        for d in docs {
            s.n_docs += 1;
            let uniq: BTreeSet<&String> = d.into_iter().collect();
            for t in uniq {
                *s.df.entry(t.clone()).or_default() += 1;
            }
        }
        s
    }

    /// Statistics over the distinct issues and commits of `links`.
    pub fn from_links(corpus: &Corpus, links: &[LinkRecord]) -> Result<Self> {
        let mut issues = BTreeSet::new();
        let mut commits = BTreeSet::new();
        let mut docs = Vec::new();
        for l in links {
            let (i, c) = corpus.resolve(l)?;
            if issues.insert(&i.issue_id) {
                docs.push(issue_doc(i));
            }
            if commits.insert(&c.commit_id) {
                docs.push(commit_doc(c));
            }
        }
        Ok(Self::from_docs(docs.iter()))
    }

    /// `ln(N / (1 + df)) + 1`
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        (self.n_docs.max(1) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn weights(&self, doc: &[String]) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in doc {
            *tf.entry(t.clone()).or_default() += 1.0;
        }
        for (t, w) in tf.iter_mut() {
            *w *= self.idf(t);
        }
        tf
    }
}

pub fn issue_doc(issue: &IssueRecord) -> Vec<String> {
    issue.text_tokens().cloned().collect()
}

/// Message tokens followed by the diff tokens of every changed file.
pub fn commit_doc(commit: &CommitRecord) -> Vec<String> {
    commit.message_tokens.iter().chain(commit.code_tokens()).cloned().collect()
}

/// Cosine between raw-count TF-IDF vectors.
pub fn vsm_score(issue_doc: &[String], commit_doc: &[String], stats: &CorpusStats) -> f64 {
    let a = stats.weights(issue_doc);
    let b = stats.weights(commit_doc);
    let dot: f64 = a.iter().filter_map(|(t, w)| b.get(t).map(|v| w * v)).sum();
    let na = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb = b.values().map(|w| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// TF-IDF baseline scorer.
pub struct VsmScorer<'c> {
    corpus: &'c Corpus,
    stats: CorpusStats,
    issue_docs: HashMap<String, Vec<String>>,
    commit_docs: HashMap<String, Vec<String>>,
}

impl<'c> VsmScorer<'c> {
    pub fn new(corpus: &'c Corpus, stats: CorpusStats) -> Self {
        Self {
            corpus,
            stats,
            issue_docs: HashMap::new(),
            commit_docs: HashMap::new(),
        }
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }
}

impl LinkScorer for VsmScorer<'_> {
    fn score(&mut self, issue_id: &str, commit_id: &str) -> Result<f64> {
        let link = LinkRecord::new(issue_id, commit_id, crate::corpus::Provenance::TaggedTrue);
        let (i, c) = self.corpus.resolve(&link)?;
        let idoc = self.issue_docs.entry(issue_id.to_string()).or_insert_with(|| issue_doc(i));
        let cdoc = self.commit_docs.entry(commit_id.to_string()).or_insert_with(|| commit_doc(c));
        Ok(vsm_score(idoc, cdoc, &self.stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_and_orthogonality() {
        let stats = CorpusStats::from_docs([d("a b"), d("b c")].iter());
        assert!((vsm_score(&d("a b b"), &d("a b b"), &stats) - 1.0).abs() < 1e-12);
        assert_eq!(vsm_score(&d("a"), &d("c"), &stats), 0.0);
        assert_eq!(vsm_score(&[], &d("c"), &stats), 0.0);
    }

    #[test]
    fn hand_computed_toy_corpus() {
        let docs = [d("x y"), d("y z"), d("y y w")];
        let stats = CorpusStats::from_docs(docs.iter());
        assert_eq!(stats.n_docs, 3);
        // df: x=1 y=3 z=1 w=1
        let idf_x = (3.0f64 / 2.0).ln() + 1.0;
        let idf_y = (3.0f64 / 4.0).ln() + 1.0;
        let idf_z = idf_x;
        let idf_q = 3.0f64.ln() + 1.0; // unseen
        assert!((stats.idf("y") - idf_y).abs() < 1e-15);
        assert!((stats.idf("q") - idf_q).abs() < 1e-15);
        // issue "x y y", commit "y z q"
        let a = [idf_x, 2.0 * idf_y, 0.0, 0.0];
        let b = [0.0, idf_y, idf_z, idf_q];
        let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
        let na = a.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nb = b.iter().map(|p| p * p).sum::<f64>().sqrt();
        let got = vsm_score(&d("x y y"), &d("y z q"), &stats);
        assert!((got - dot / (na * nb)).abs() < 1e-9);
    }
}
