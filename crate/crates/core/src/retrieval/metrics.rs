use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and binary labels of the candidates of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredQuery {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} scores for {} candidates",
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Candidate indices by descending score; equal scores keep index order.
    /// NaN scores rank last; `-0.0` ties with `0.0`.
    pub fn ranking(&self) -> Vec<usize> {
        let key = |i: usize| {
            let s = self.scores[i];
            if s.is_nan() {
                f64::NEG_INFINITY
            } else {
                s + 0.0
            }
        };
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        idx
    }

    /// 1-based rank of every candidate.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.len()];
        for (pos, i) in self.ranking().into_iter().enumerate() {
            r[i] = pos + 1;
        }
        r
    }

    /// Relevance of the ranked list, top first.
    fn ranked_relevance(&self) -> Vec<u8> {
        self.ranking().into_iter().map(|i| u8::from(self.labels[i] > 0)).collect()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidInput(format!(
                "cutoff k={k} outside 1..={} candidates",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Relevant candidates in the top `k`, divided by `k`.
pub fn precision_at_k(q: &ScoredQuery, k: usize) -> Result<f64> {
    q.check_k(k)?;
    let rel = q.ranked_relevance();
    Ok(rel[..k].iter().map(|&r| r as f64).sum::<f64>() / k as f64)
}

/// 1 if any relevant candidate is in the top `k`.
pub fn hit_at_k(q: &ScoredQuery, k: usize) -> Result<f64> {
    q.check_k(k)?;
    Ok(if q.ranked_relevance()[..k].contains(&1) { 1.0 } else { 0.0 })
}

/// Inverse rank of the best-ranked relevant candidate; 0 without one.
pub fn reciprocal_rank(q: &ScoredQuery) -> f64 {
    q.ranked_relevance()
        .iter()
        .position(|&r| r == 1)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn mrr(queries: &[ScoredQuery]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().map(reciprocal_rank).sum::<f64>() / queries.len() as f64
}

/// DCG of the top `k` over the DCG of the ideal ordering.
pub fn ndcg_at_k(q: &ScoredQuery, k: usize) -> Result<f64> {
    q.check_k(k)?;
    let rel = q.ranked_relevance();
    let dcg = |r: &[u8]| -> f64 {
        r.iter()
            .take(k)
            .enumerate()
            .map(|(i, &x)| x as f64 / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = rel.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(&ideal);
    Ok(if z == 0.0 { 0.0 } else { dcg(&rel) / z })
}

/// Aggregate ranking quality over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub p_at_1: f64,
    pub p_at_10: f64,
    pub hit_at_1: f64,
    pub hit_at_10: f64,
    pub mrr: f64,
    pub ndcg_at_1: f64,
    pub ndcg_at_10: f64,
}

impl MetricReport {
    pub fn from_queries(queries: &[ScoredQuery]) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("no queries to evaluate".into()));
        }
        let n = queries.len() as f64;
        let mean = |f: &dyn Fn(&ScoredQuery) -> Result<f64>| -> Result<f64> {
            let mut s = 0.0;
            for q in queries {
                s += f(q)?;
            }
            Ok(s / n)
        };
        Ok(Self {
            queries: queries.len(),
            p_at_1: mean(&|q| precision_at_k(q, 1))?,
            p_at_10: mean(&|q| precision_at_k(q, 10))?,
            hit_at_1: mean(&|q| hit_at_k(q, 1))?,
            hit_at_10: mean(&|q| hit_at_k(q, 10))?,
            mrr: mrr(queries),
            ndcg_at_1: mean(&|q| ndcg_at_k(q, 1))?,
            ndcg_at_10: mean(&|q| ndcg_at_k(q, 10))?,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("P@1", self.p_at_1),
            ("P@10", self.p_at_10),
            ("Hit@1", self.hit_at_1),
            ("Hit@10", self.hit_at_10),
            ("MRR", self.mrr),
            ("NDCG@1", self.ndcg_at_1),
            ("NDCG@10", self.ndcg_at_10),
        ];
        let mut s = format!("{:<8} {:>8}\n", "metric", "value");
        for (k, v) in rows {
            s.push_str(&format!("{k:<8} {v:>8.4}\n"));
        }
        s.push_str(&format!("{:<8} {:>8}\n", "queries", self.queries));
        s
    }
}
