//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use uqe::model::{validate_table, ColumnSpec, Schema, Table, Value, ValueType};
use uqe::oracle::MockOracle;

pub const POSITIVE: &str = "the review is positive";

/// A `review` text column and a hidden `label` column set to `pos` or
/// `neg`.
pub fn labeled_table(labels: &[bool]) -> Arc<Table> {
    let schema = Schema::new(vec![
        ColumnSpec::unstructured_text("review"),
        ColumnSpec::structured("label", ValueType::Text),
    ])
    .unwrap();
    let rows = labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            vec![
                Value::UnstructuredText(format!("review number {i}")),
                Value::Text(if pos { "pos" } else { "neg" }.into()),
            ]
        })
        .collect();
    Arc::new(validate_table(schema, rows).unwrap())
}

pub fn label_oracle() -> MockOracle {
    MockOracle::new("label").bind(POSITIVE, "pos")
}

/// Exactly `positives` of `n` rows set, at positions drawn by a fixed shuffle.
pub fn spread_labels(n: usize, positives: usize, seed: u64) -> Vec<bool> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    labels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    labels
}

/// A table carrying every column the query corpus names, with one
/// unstructured source column.
pub fn corpus_table(n: usize) -> Arc<Table> {
    let schema = Schema::new(vec![
        ColumnSpec::unstructured_text("review"),
        ColumnSpec::structured("label", ValueType::Text),
        ColumnSpec::structured("movie_year", ValueType::Integer),
        ColumnSpec::structured("agent_name", ValueType::Text),
        ColumnSpec::structured("dialog_ID", ValueType::Text),
    ])
    .unwrap();
    let labels = ["acting", "music", "pacing", "story"];
    let agents = ["ana", "ben", "chen"];
    let rows = (0..n)
        .map(|i| {
            vec![
                Value::UnstructuredText(format!("text {i}: {}", labels[(i * 7) % 4])),
                Value::Text(labels[(i * 7 + i / 5) % 4].into()),
                Value::Integer(1995 + ((i * 13) % 30) as i64),
                Value::Text(agents[i % 3].into()),
                Value::Text(format!("d{i:03}")),
            ]
        })
        .collect();
    Arc::new(validate_table(schema, rows).unwrap())
}

pub fn corpus_queries() -> Vec<(String, String)> {
    let v: serde_json::Value =
        serde_json::from_str(include_str!("../../fixtures/corpus/queries.json")).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|e| (e["name"].as_str().unwrap().to_string(), e["uql"].as_str().unwrap().to_string()))
        .collect()
}

pub fn malformed_queries() -> Vec<(String, usize)> {
    let v: serde_json::Value =
        serde_json::from_str(include_str!("../../fixtures/corpus/malformed.json")).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|e| (e["uql"].as_str().unwrap().to_string(), e["offset"].as_u64().unwrap() as usize))
        .collect()
}
