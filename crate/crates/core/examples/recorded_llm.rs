//! Drive the chat-completion oracle from a recorded transcript instead of a
//! live endpoint. The recording fails the first request to show a retry.

use std::path::Path;

use uqe::engine::{EngineConfig, QueryOptions, Session};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let config = EngineConfig::load(&root.join("llm/uqe.conf"))?;
    let cache = tempfile_dir();
    let config = EngineConfig { cache_dir: cache.clone(), ..config };
    let mut session = Session::new(config)?;
    session.ingest("movie_reviews", &root.join("imdb/reviews.jsonl"), &root.join("imdb/reviews.schema.json"))?;
    let uql = "SELECT COUNT(*) AS count FROM movie_reviews WHERE \"the review is positive\"";
    let r = session.run_query(uql, &QueryOptions { exact: true, ..QueryOptions::default() })?;
    print!("{}", r.table.render_text());
    print!("{}", r.diagnostics_text());
    std::fs::remove_dir_all(cache).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("uqe-recorded-{}", std::process::id()))
}
