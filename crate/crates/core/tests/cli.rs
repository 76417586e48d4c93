use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn uqe(config: &str, cache: &Path, args: &[&str]) -> Output {
    let cache = format!("cache_dir={}", cache.display());
    let conf = fixtures().join(config);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uqe"));
    cmd.arg("--config").arg(conf).args(["--set", &cache]).args(args);
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ingest_imdb(cache: &Path) {
    let f = fixtures().join("imdb");
    let data = f.join("reviews.jsonl");
    let schema = f.join("reviews.schema.json");
    let out = stdout(&uqe(
        "imdb/uqe.conf",
        cache,
        &["ingest", "--data", data.to_str().unwrap(), "--schema", schema.to_str().unwrap(), "--name", "movie_reviews"],
    ));
    assert_eq!(out.trim(), "ingested `movie_reviews`: 240 rows, 5 columns");
}

const COUNT: &str = "SELECT COUNT(*) AS count FROM movie_reviews WHERE \"the review is positive\"";

#[test]
fn exact_count_matches_the_labels() {
    let cache = tempfile::tempdir().unwrap();
    ingest_imdb(cache.path());
    let out = stdout(&uqe(
        "imdb/uqe.conf",
        cache.path(),
        &["query", "--db", "movie_reviews", "--uql", COUNT, "--exact", "--format", "json"],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["rows"][0]["count"], 97);
}

#[test]
fn sampled_count_is_reproducible_and_within_budget() {
    let cache = tempfile::tempdir().unwrap();
    ingest_imdb(cache.path());
    let run = || {
        stdout(&uqe(
            "imdb/uqe.conf",
            cache.path(),
            &["query", "--db", "movie_reviews", "--uql", COUNT, "--seed", "5", "--format", "json", "--diagnostics"],
        ))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["diagnostics"]["oracle_calls"], 64);
    let estimate = v["rows"][0]["count"].as_f64().unwrap();
    assert!((estimate - 97.0).abs() < 40.0, "{estimate}");
}

#[test]
fn explain_lists_plans_and_marks_the_choice() {
    let cache = tempfile::tempdir().unwrap();
    ingest_imdb(cache.path());
    let uql = "SELECT reason, COUNT(*) AS count FROM movie_reviews WHERE movie_year < 2020 GROUP BY \"the reason why the review is positive\" AS reason";
    let out = stdout(&uqe("imdb/uqe.conf", cache.path(), &["query", "--db", "movie_reviews", "--uql", uql, "--explain"]));
    assert!(out.lines().any(|l| l.starts_with('*')), "{out}");
    assert!(out.contains("GroupBy"), "{out}");
}

#[test]
fn query_file_and_stored_table_path() {
    let cache = tempfile::tempdir().unwrap();
    ingest_imdb(cache.path());
    let query = cache.path().join("q.uql");
    std::fs::write(&query, "SELECT movie_year\nFROM movie_reviews\nORDER BY movie_year DESC\nLIMIT 3\n").unwrap();
    let table = cache.path().join("tables").join("movie_reviews.json");
    let out = stdout(&uqe(
        "imdb/uqe.conf",
        cache.path(),
        &["query", "--db", table.to_str().unwrap(), "--uql", query.to_str().unwrap(), "--format", "csv"],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "movie_year");
    assert_eq!(lines.len(), 4);
}

#[test]
fn parse_errors_point_at_the_byte() {
    let cache = tempfile::tempdir().unwrap();
    ingest_imdb(cache.path());
    let o = uqe("imdb/uqe.conf", cache.path(), &["query", "--db", "movie_reviews", "--uql", "SELECT * movie_reviews"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[parse]"), "{err}");
    assert!(err.contains("SELECT * movie_reviews\n         ^"), "{err}");
}

#[test]
fn unknown_table_and_config_key_are_reported() {
    let cache = tempfile::tempdir().unwrap();
    let o = uqe("imdb/uqe.conf", cache.path(), &["query", "--db", "nowhere", "--uql", "SELECT * FROM nowhere"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
    let o = uqe("imdb/uqe.conf", cache.path(), &["--set", "colour=blue", "query", "--db", "x", "--uql", "SELECT * FROM x"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `colour`"));
}

#[test]
fn ingest_rejects_unknown_fields_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("t.jsonl");
    std::fs::write(&data, "{\"review\": \"fine\"}\n{\"review\": \"odd\", \"stars\": 3}\n").unwrap();
    let schema = dir.path().join("t.schema.json");
    std::fs::write(&schema, r#"[{"name": "review", "kind": "unstructured", "type": "unstructured_text"}]"#).unwrap();
    let o = uqe(
        "imdb/uqe.conf",
        dir.path(),
        &["ingest", "--data", data.to_str().unwrap(), "--schema", schema.to_str().unwrap()],
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("stars"), "{err}");
}

#[test]
fn eval_aggregation_fixture_reports_every_repetition() {
    let fixture = fixtures().join("eval/agg.json");
    let cache = tempfile::tempdir().unwrap();
    let out = stdout(&uqe(
        "imdb/uqe.conf",
        cache.path(),
        &["eval", "--task", "agg", "--fixture", fixture.to_str().unwrap(), "--format", "json"],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["task"], "relative_error");
    assert_eq!(v["runs"].as_array().unwrap().len(), 8);
    assert!(v["mean"].as_f64().unwrap() < 0.5);
}

#[test]
fn recorded_chat_backend_answers_and_retries() {
    let cache = tempfile::tempdir().unwrap();
    let f = fixtures().join("imdb");
    let data = f.join("reviews.jsonl");
    let schema = f.join("reviews.schema.json");
    stdout(&uqe(
        "llm/uqe.conf",
        cache.path(),
        &["ingest", "--data", data.to_str().unwrap(), "--schema", schema.to_str().unwrap(), "--name", "movie_reviews"],
    ));
    let out = stdout(&uqe(
        "llm/uqe.conf",
        cache.path(),
        &["query", "--db", "movie_reviews", "--uql", COUNT, "--exact", "--format", "json", "--diagnostics"],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["rows"][0]["count"], 97);
    assert_eq!(v["diagnostics"]["oracle_calls"], 240);
    assert_eq!(v["diagnostics"]["retries"], 1);
}
