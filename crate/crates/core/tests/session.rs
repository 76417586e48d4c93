mod common;

use std::path::{Path, PathBuf};

use uqe::embedding::{cluster, EmbeddingCache, EmbeddingMatrix, EmbeddingProvider, HashingProvider};
use uqe::engine::{EngineConfig, EngineError, MockBindings, QueryOptions, Session, Stage};
use uqe::model::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn abcd_session() -> Session {
    abcd_session_with(EngineConfig::default())
}

fn abcd_session_with(config: EngineConfig) -> Session {
    let dir = fixtures().join("abcd");
    let bindings = MockBindings::load(&dir.join("dialogs.mock.json")).unwrap();
    let config = EngineConfig { k: 6, ..config };
    let mut s = Session::with_oracle(config, Box::new(bindings.build()));
    let table = uqe::engine::ingest(&dir.join("dialogs.jsonl"), &dir.join("dialogs.schema.json")).unwrap();
    s.register("dialogs", table);
    s
}

const ACCOUNT: &str = "SELECT dialog_id FROM dialogs WHERE \"the customer could not access their account\"";

#[test]
fn budgeted_retrieval_returns_only_true_positives() {
    let mut s = abcd_session();
    let exact = s.run_query(ACCOUNT, &QueryOptions { exact: true, ..QueryOptions::default() }).unwrap();
    assert_eq!(exact.table.len(), 15);
    let r = s.run_query(ACCOUNT, &QueryOptions { budget: Some(60), seed: Some(2), ..QueryOptions::default() }).unwrap();
    assert!(r.diagnostics.oracle_calls <= 60);
    assert!(!r.diagnostics.trace.is_empty());
    let truth: Vec<&Vec<Value>> = exact.table.rows.iter().collect();
    assert!(r.table.rows.iter().all(|row| truth.contains(&row)));
}

#[test]
fn exhaustive_budget_equals_exact_answer() {
    let mut s = abcd_session_with(EngineConfig {
        taxonomy_budget: 300,
        ..EngineConfig::default()
    });
    let uql = "SELECT flow_reason, COUNT(*) AS n FROM dialogs GROUP BY \"the reason the customer contacted support\" AS flow_reason";
    let exact = s.run_query(uql, &QueryOptions { exact: true, ..QueryOptions::default() }).unwrap();
    let full = s.run_query(uql, &QueryOptions { budget: Some(300), ..QueryOptions::default() }).unwrap();
    assert_eq!(exact.table.canonical(), full.table.canonical());
    let total: f64 = exact.table.rows.iter().map(|r| r[1].as_f64().unwrap()).sum();
    assert_eq!(total, 300.0);
}

#[test]
fn small_taxonomy_sample_reports_unmapped_rows() {
    // 16 taxonomy rows rarely include the 15 account-access dialogs
    let mut s = abcd_session();
    let uql = "SELECT flow_reason, COUNT(*) AS n FROM dialogs GROUP BY \"the reason the customer contacted support\" AS flow_reason";
    let r = s.run_query(uql, &QueryOptions { budget: Some(300), ..QueryOptions::default() }).unwrap();
    let labels = r.table.rows.len();
    assert!(labels == 7 || r.diagnostics.unmapped > 0, "{labels} groups, {} unmapped", r.diagnostics.unmapped);
}

#[test]
fn stored_result_feeds_a_later_query() {
    let mut s = abcd_session();
    s.run_query(&format!("{ACCOUNT} TO locked_out"), &QueryOptions { exact: true, ..QueryOptions::default() })
        .unwrap();
    let r = s.run_query("SELECT COUNT(*) AS n FROM locked_out", &QueryOptions::default()).unwrap();
    assert_eq!(r.table.rows[0][0], Value::Integer(15));
    assert_eq!(r.diagnostics.oracle_calls, 0);
}

#[test]
fn errors_name_their_stage() {
    let mut s = abcd_session();
    let e = s.run_query("SELECT nope FROM dialogs", &QueryOptions::default()).unwrap_err();
    assert_eq!(e.stage(), Stage::Resolve);
    let e = s.run_query("SELECT FROM dialogs", &QueryOptions::default()).unwrap_err();
    assert!(matches!(e, EngineError::Parse(_)));
    let e = s.run_query("SELECT * FROM elsewhere", &QueryOptions::default()).unwrap_err();
    assert_eq!(e.stage(), Stage::Catalog);
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let h = HashingProvider::new(32);
    let texts: Vec<String> = (0..120)
        .map(|i| format!("{} {}", ["refund please", "cannot log in", "parcel is late"][i % 3], i))
        .collect();
    let emb = EmbeddingMatrix::from_rows(h.embed_batch(&texts).unwrap(), h.id()).unwrap();
    let a = cluster(&emb, 3, 9);
    let b = cluster(&emb, 3, 9);
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.sizes.iter().sum::<usize>(), 120);
    // rows sharing a phrase land together
    for i in 3..120 {
        assert_eq!(a.assignment[i], a.assignment[i % 3], "row {i}");
    }
}

#[test]
fn embedding_cache_persists_across_instances() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::labeled_table(&[true, false, true, true]);
    let h = HashingProvider::new(16);
    let cols = vec!["review".to_string()];
    let first = EmbeddingCache::persistent(dir.path()).unwrap().get_or_embed(&table, &cols, &h, 2).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let second = EmbeddingCache::persistent(dir.path()).unwrap().get_or_embed(&table, &cols, &h, 2).unwrap();
    assert_eq!(first.as_slice(), second.as_slice());
}
