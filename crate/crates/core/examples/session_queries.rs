//! Ingest the bundled review fixture into a session and run aggregation,
//! group-by and retrieval queries against the mock oracle.

use std::path::Path;

use uqe::engine::{EngineConfig, MockBindings, QueryOptions, Session};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/imdb");
    let oracle = MockBindings::load(&dir.join("reviews.mock.json"))?.build();
    let config = EngineConfig {
        k: 4,
        aggregation_budget: 64,
        ..EngineConfig::default()
    };
    let mut session = Session::with_oracle(config, Box::new(oracle));
    session.ingest("movie_reviews", &dir.join("reviews.jsonl"), &dir.join("reviews.schema.json"))?;

    let queries = [
        "SELECT COUNT(*) AS count FROM movie_reviews WHERE \"the review is positive\"",
        "SELECT reason, COUNT(*) AS count FROM movie_reviews WHERE movie_year < 2020\nGROUP BY \"the reason why the review is positive\" AS reason",
        "SELECT review_id, movie_year FROM movie_reviews WHERE \"the review is positive\" AND movie_year > 2015 LIMIT 5",
    ];
    for uql in queries {
        let sampled = session.run_query(uql, &QueryOptions { seed: Some(4), ..QueryOptions::default() })?;
        let exact = session.run_query(uql, &QueryOptions { exact: true, ..QueryOptions::default() })?;
        println!("{uql}\n-- sampled ({} oracle calls)\n{}", sampled.diagnostics.oracle_calls, sampled.table.render_text());
        println!("-- exact ({} oracle calls)\n{}", exact.diagnostics.oracle_calls, exact.table.render_text());
    }
    Ok(())
}
