//! Scores a toy ranking with average precision, ROC AUC and MRR.
//!
//! `cargo run --example ranking_metrics`

use todyformer::tasks::{average_precision, mrr, roc_auc};

fn main() -> todyformer::Result<()> {
    let scores = [0.9, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.1];
    let labels = [true, false, true, true, false, false, true, false];
    println!("AP  {:.4}", average_precision(&scores, &labels)?);
    println!("AUC {:.4}", roc_auc(&scores, &labels)?);
    let pos = [0.9, 0.5, 0.2];
    let negs = vec![vec![0.1, 0.3], vec![0.6, 0.4], vec![0.8, 0.7]];
    println!("MRR {:.4}", mrr(&pos, &negs)?);
    Ok(())
}
