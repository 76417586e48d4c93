//! Budgeted retrieval of rare rows with an online logistic surrogate,
//! printing the cumulative positives found after each batch.

use uqe::embedding::{EmbeddingMatrix, EmbeddingProvider, HashingProvider};
use uqe::learner::{search_with, SearchConfig};

fn main() {
    let topics = ["billing error", "late parcel", "password reset", "size exchange", "gift card"];
    // one dialog in fifty is about a locked account
    let texts: Vec<String> = (0..4000)
        .map(|i| {
            if i % 50 == 7 {
                format!("customer {i} is locked out of the account after a password change")
            } else {
                format!("customer {i} asks about a {}", topics[i % topics.len()])
            }
        })
        .collect();
    let provider = HashingProvider::new(128);
    let emb = EmbeddingMatrix::from_rows(provider.embed_batch(&texts).unwrap(), provider.id()).unwrap();
    let candidates: Vec<usize> = (0..texts.len()).collect();
    let truth = |i: usize| Ok(texts[i].contains("locked out"));

    let config = SearchConfig::new(256, 1);
    let out = search_with(&candidates, &emb, &config, &truth).unwrap();
    for step in &out.state.trace {
        println!("batch {:>2}: {:>3} calls, {:>2} found", step.step, step.cumulative_calls, step.cumulative_positives);
    }
    let relevant = texts.iter().filter(|t| t.contains("locked out")).count();
    println!(
        "recall {:.2} with 256 calls; a uniform sample would expect {:.2}",
        out.positives.len() as f64 / relevant as f64,
        256.0 / texts.len() as f64
    );
}
