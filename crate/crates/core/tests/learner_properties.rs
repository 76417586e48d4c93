use proptest::prelude::*;
use uqe::embedding::EmbeddingMatrix;
use uqe::learner::{acquire_batch, fit_logistic, search_with, SearchConfig, SearchState, Surrogate};

fn matrix(n: usize, seed: u64) -> EmbeddingMatrix {
    // two well separated groups: even rows near +1, odd rows near -1
    let rows = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let jitter = ((i as u64).wrapping_mul(seed | 1) % 97) as f32 / 970.0;
            vec![s + jitter, s - jitter, jitter]
        })
        .collect();
    EmbeddingMatrix::from_rows(rows, "test").unwrap()
}

proptest! {
    #[test]
    fn search_respects_budget_and_labels_each_row_once(
        n in 20usize..300,
        budget in 1usize..120,
        batch in 1usize..32,
        seed in any::<u64>(),
    ) {
        let emb = matrix(n, seed);
        let candidates: Vec<usize> = (0..n).collect();
        let config = SearchConfig { batch_size: batch, ..SearchConfig::new(budget, seed) };
        let out = search_with(&candidates, &emb, &config, &|i| Ok(i % 2 == 0)).unwrap();
        let labeled: Vec<usize> = out.state.labeled.iter().map(|l| l.0).collect();
        let mut distinct = labeled.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(labeled.len(), budget.min(n));
        prop_assert_eq!(distinct.len(), labeled.len());
        prop_assert!(out.positives.iter().all(|&i| i % 2 == 0));
        prop_assert!(out.state.trace.windows(2).all(|w| w[0].cumulative_positives <= w[1].cumulative_positives));
    }

    #[test]
    fn limit_stops_the_search(n in 40usize..200, limit in 1usize..10, seed in any::<u64>()) {
        let emb = matrix(n, seed);
        let candidates: Vec<usize> = (0..n).collect();
        let config = SearchConfig { limit: Some(limit), ..SearchConfig::new(n / 2, seed) };
        let out = search_with(&candidates, &emb, &config, &|i| Ok(i % 2 == 0)).unwrap();
        prop_assert_eq!(out.positives.len(), limit);
    }

    #[test]
    fn training_loss_never_increases(seed in any::<u64>()) {
        let emb = matrix(40, seed);
        let xs: Vec<&[f32]> = (0..40).map(|i| emb.row(i)).collect();
        let ys: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (_, history) = fit_logistic(&xs, &ys, 3, 1.0);
        prop_assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn all_labeled_gives_an_empty_batch() {
    let emb = matrix(4, 1);
    let mut state = SearchState::new(4, 4, 2);
    state.record(&[0, 1, 2, 3], &[true, false, true, false]);
    let s = Surrogate::untrained(3, 1.0, 0);
    assert!(acquire_batch(&state, &s, &emb, &[0, 1, 2, 3], 2, None).is_empty());
}

#[test]
fn trained_surrogate_picks_positives_on_separable_rows() {
    let emb = matrix(100, 7);
    let candidates: Vec<usize> = (0..100).collect();
    let config = SearchConfig { batch_size: 10, ..SearchConfig::new(50, 3) };
    let out = search_with(&candidates, &emb, &config, &|i| Ok(i % 2 == 0)).unwrap();
    // once a positive and a negative are seen every later pick is positive
    assert!(out.positives.len() >= 40, "{}", out.positives.len());
}
