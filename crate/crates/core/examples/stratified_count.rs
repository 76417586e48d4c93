//! Estimate a COUNT from 128 judged rows, uniformly and stratified over
//! k-means clusters of row embeddings, and compare the spread over seeds.

use std::sync::Arc;

use uqe::embedding::{cluster, EmbeddingMatrix, EmbeddingProvider, HashingProvider};
use uqe::model::{validate_table, ColumnSpec, Schema, Table, Value, ValueType};
use uqe::oracle::{Condition, MockOracle};
use uqe::sampler::{estimate, stratified_sample, uniform_sample, Aggregate};

fn reviews(n: usize) -> Table {
    let schema = Schema::new(vec![
        ColumnSpec::unstructured_text("review"),
        ColumnSpec::structured("sentiment", ValueType::Text),
    ])
    .unwrap();
    let good = ["a wonderful film", "moving and sharp", "the cast is delightful"];
    let bad = ["tedious and flat", "a clumsy script", "the ending is dull"];
    let rows = (0..n)
        .map(|i| {
            let positive = i % 5 < 2;
            // every seventh review reads like the other side
            let pool = if positive != (i % 7 == 0) { &good } else { &bad };
            vec![
                Value::UnstructuredText(format!("{} ({i})", pool[i % 3])),
                Value::Text(if positive { "positive" } else { "negative" }.into()),
            ]
        })
        .collect();
    validate_table(schema, rows).unwrap()
}

fn spread(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

fn main() {
    let n = 5000;
    let table = Arc::new(reviews(n));
    let oracle = MockOracle::new("sentiment").bind("the review is positive", "positive");
    let cond = Condition::new("the review is positive", vec!["review".into()]).unwrap();

    let provider = HashingProvider::new(128);
    let texts: Vec<String> = (0..n).map(|i| table.row_text(i, &["review".into()])).collect();
    let emb = EmbeddingMatrix::from_rows(provider.embed_batch(&texts).unwrap(), provider.id()).unwrap();
    let clusters = cluster(&emb, 10, 0);
    println!("{} clusters, sizes {:?}", clusters.k, clusters.sizes);

    let population: Vec<usize> = (0..n).collect();
    let (mut uniform, mut stratified) = (Vec::new(), Vec::new());
    for seed in 0..200 {
        let st = uniform_sample(table.clone(), &population, 128, seed).unwrap();
        uniform.push(estimate(&st, &cond, &oracle, &Aggregate::Count, 8).unwrap().value);
        let st = stratified_sample(table.clone(), &population, &clusters, 128, seed).unwrap();
        stratified.push(estimate(&st, &cond, &oracle, &Aggregate::Count, 8).unwrap().value);
    }
    println!("true count  {}", n * 2 / 5);
    let (m, s) = spread(&uniform);
    println!("uniform     {m:.1} ± {s:.1}");
    let (m, s) = spread(&stratified);
    println!("stratified  {m:.1} ± {s:.1}");
}
