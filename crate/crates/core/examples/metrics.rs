//! Ranking metrics on hand-built queries.
//!
//! `cargo run --example metrics`

use tracelink::retrieval::{ndcg_at_k, reciprocal_rank, MetricReport, ScoredQuery};

fn main() -> tracelink::Result<()> {
    // 100 candidates, the true commit ranked second
    let scores: Vec<f64> = (0..100).map(|i| 1.0 - i as f64 / 100.0).collect();
    let mut labels = vec![0u8; 100];
    labels[1] = 1;
    let q = ScoredQuery::new(scores, labels)?;
    println!("rank 2: RR {:.4}, NDCG@10 {:.5}", reciprocal_rank(&q), ndcg_at_k(&q, 10)?);

    let mut queries = vec![q];
    for rank in [1, 1, 3, 12, 60] {
        let mut labels = vec![0u8; 100];
        labels[rank - 1] = 1;
        queries.push(ScoredQuery::new((0..100).map(|i| -(i as f64)).collect(), labels)?);
    }
    let report = MetricReport::from_queries(&queries)?;
    print!("{}", report.to_table());
    print!("{}", report.to_json());
    Ok(())
}
