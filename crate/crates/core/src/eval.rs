//! Accuracy metrics and the fixture-driven evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value as Json};

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider};
use crate::engine::{EngineConfig, EngineError, MockBindings, QueryOptions, QueryResult, Session};
use crate::model::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("relative error is undefined for a zero true value")]
    ZeroTruth,
    #[error("the {0} histogram has no mass")]
    ZeroMass(&'static str),
    #[error("histogram counts must be finite and nonnegative, got {0}")]
    BadCount(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// `|predicted - truth| / |truth|`.
pub fn eval_relative_error(predicted: f64, truth: f64) -> Result<f64, EvalError> {
    if truth == 0.0 {
        return Err(EvalError::ZeroTruth);
    }
    Ok((predicted - truth).abs() / truth.abs())
}

/// Harmonic mean of precision and recall. Two empty sets score 1.
pub fn eval_f1(retrieved: &BTreeSet<usize>, relevant: &BTreeSet<usize>) -> f64 {
    if retrieved.is_empty() && relevant.is_empty() {
        return 1.0;
    }
    let hits = retrieved.intersection(relevant).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / retrieved.len() as f64;
    let recall = hits / relevant.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

const FLOW_EPS: f64 = 1e-14;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Minimum cost of moving `supply` onto `demand` (equal totals) when a
/// unit from `i` to `j` costs `cost[i][j]`. Exact successive shortest
/// paths on the bipartite network.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let (s, t) = (n + m, n + m + 1);
    let nodes = n + m + 2;
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<Edge>, from: usize, to: usize, cap: f64, cost: f64| {
        adj[from].push(edges.len());
        edges.push(Edge { to, cap, cost });
        adj[to].push(edges.len());
        edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    };
    for (i, &a) in supply.iter().enumerate() {
        add(&mut edges, s, i, a, 0.0);
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            add(&mut edges, i, n + j, f64::INFINITY, c);
        }
    }
    for (j, &b) in demand.iter().enumerate() {
        add(&mut edges, n + j, t, b, 0.0);
    }

    let mut total = 0.0;
    loop {
        // Bellman-Ford: residual reverse edges carry negative costs.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[s] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > FLOW_EPS && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if via[t].is_none() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while let Some(e) = via[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = t;
        while let Some(e) = via[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push * edges[e].cost;
            v = edges[e ^ 1].to;
        }
    }
    total
}

fn histogram(side: &[(String, f64)], name: &'static str) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut h: BTreeMap<String, f64> = BTreeMap::new();
    for (label, count) in side {
        if !(count.is_finite() && *count >= 0.0) {
            return Err(EvalError::BadCount(*count));
        }
        *h.entry(label.clone()).or_default() += count;
    }
    let mass: f64 = h.values().sum();
    if mass <= 0.0 {
        return Err(EvalError::ZeroMass(name));
    }
    h.retain(|_, c| *c > 0.0);
    for c in h.values_mut() {
        *c /= mass;
    }
    Ok(h)
}

/// Earth mover's distance between two label histograms, normalized to unit
/// mass, with ground distance one minus the cosine similarity of the
/// label embeddings. Equal labels are at distance 0; repeated labels on
/// one side are merged.
pub fn eval_emd(
    predicted: &[(String, f64)],
    truth: &[(String, f64)],
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, EvalError> {
    let p = histogram(predicted, "predicted")?;
    let q = histogram(truth, "true")?;
    let labels: Vec<String> = p.keys().chain(q.keys()).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let vectors = embedder.embed_batch(&labels)?;
    let vec_of = |l: &str| &vectors[labels.iter().position(|x| x == l).expect("label embedded")];
    let cost: Vec<Vec<f64>> = p
        .keys()
        .map(|a| {
            q.keys()
                .map(|b| {
                    if a == b {
                        0.0
                    } else {
                        (1.0 - cosine(vec_of(a), vec_of(b))).max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    let supply: Vec<f64> = p.values().copied().collect();
    let demand: Vec<f64> = q.values().copied().collect();
    Ok(transport_cost(&supply, &demand, &cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Aggregation,
    Retrieval,
    GroupBy,
}

impl std::str::FromStr for EvalTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agg" => Ok(EvalTask::Aggregation),
            "retrieval" => Ok(EvalTask::Retrieval),
            "groupby" => Ok(EvalTask::GroupBy),
            other => Err(format!("unknown task `{other}` (agg, retrieval, groupby)")),
        }
    }
}

impl EvalTask {
    pub fn metric(self) -> &'static str {
        match self {
            EvalTask::Aggregation => "relative_error",
            EvalTask::Retrieval => "f1",
            EvalTask::GroupBy => "emd",
        }
    }
}

/// An evaluation fixture. Paths are relative to the fixture file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub table: String,
    /// Mock oracle bindings over the hidden label columns.
    pub bindings: PathBuf,
    pub query: String,
    pub budget: Option<usize>,
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    pub k: Option<usize>,
}

fn default_repetitions() -> usize {
    8
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Fixture(format!("{}: {e}", path.display())))?;
        let mut f: Fixture = serde_json::from_str(&text)
            .map_err(|e| EvalError::Fixture(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut f.data, &mut f.schema, &mut f.bindings] {
            *p = base.join(&*p);
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub seed: u64,
    pub value: f64,
    pub oracle_calls: u64,
    /// F1 of a uniform sample of the same size (retrieval only).
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: EvalTask,
    pub query: String,
    pub runs: Vec<EvalRun>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.value).collect::<Vec<_>>())
    }

    pub fn render_text(&self) -> String {
        let metric = self.task.metric();
        let mut out = format!("query: {}\n", self.query);
        for r in &self.runs {
            out.push_str(&format!("seed {:>3}: {metric} = {:.6}  calls = {}", r.seed, r.value, r.oracle_calls));
            if let Some(b) = r.baseline {
                out.push_str(&format!("  uniform baseline = {b:.6}"));
            }
            out.push('\n');
        }
        let (m, s) = self.mean_std();
        out.push_str(&format!("{metric}: {m:.6} ± {s:.6} over {} runs\n", self.runs.len()));
        out
    }

    pub fn to_json(&self) -> Json {
        let (m, s) = self.mean_std();
        json!({
            "task": self.task.metric(),
            "query": self.query,
            "mean": m,
            "std": s,
            "runs": self.runs.iter().map(|r| json!({
                "seed": r.seed, "value": r.value, "oracle_calls": r.oracle_calls, "baseline": r.baseline,
            })).collect::<Vec<_>>(),
        })
    }
}

fn first_number(result: &QueryResult) -> Result<f64, EvalError> {
    result
        .table
        .rows
        .first()
        .and_then(|row| row.iter().find_map(Value::as_f64))
        .ok_or_else(|| EvalError::Fixture("the query returned no numeric cell".into()))
}

/// `(label, count)` pairs from a two-column grouped result.
fn label_counts(result: &QueryResult) -> Result<Vec<(String, f64)>, EvalError> {
    if result.table.columns.len() != 2 {
        return Err(EvalError::Fixture(
            "group-by evaluation needs a query selecting (label, count)".into(),
        ));
    }
    Ok(result
        .table
        .rows
        .iter()
        .map(|r| (r[0].render(), r[1].as_f64().unwrap_or(0.0)))
        .collect())
}

fn session_for(fixture: &Fixture, bindings: &MockBindings, error_rate: f64, noise_seed: u64) -> Result<Session, EvalError> {
    let mut config = EngineConfig::default();
    if let Some(k) = fixture.k {
        config.k = k;
    }
    let oracle = bindings.build().with_error_rate(error_rate, noise_seed);
    let mut session = Session::with_oracle(config, Box::new(oracle));
    let table = crate::engine::ingest(&fixture.data, &fixture.schema).map_err(EngineError::from)?;
    session.register(&fixture.table, table);
    Ok(session)
}

/// Run the fixture's query `repetitions` times against a noisy mock and
/// score each run against the noiseless exhaustive answer.
pub fn run_eval(task: EvalTask, fixture: &Fixture) -> Result<EvalReport, EvalError> {
    let bindings = MockBindings::load(&fixture.bindings).map_err(EvalError::Fixture)?;
    let mut truth_session = session_for(fixture, &bindings, 0.0, 0)?;
    let truth = match task {
        EvalTask::Retrieval => {
            let n = truth_session.table(&fixture.table)?.num_rows();
            truth_session.run_query(
                &fixture.query,
                &QueryOptions {
                    budget: Some(n.max(1)),
                    ..QueryOptions::default()
                },
            )?
        }
        _ => truth_session.run_query(
            &fixture.query,
            &QueryOptions {
                exact: true,
                ..QueryOptions::default()
            },
        )?,
    };
    let embedder = EngineConfig::default().build_embedder();
    let relevant: BTreeSet<usize> = truth.row_ids.iter().copied().collect();
    let n_rows = truth_session.table(&fixture.table)?.num_rows();

    let mut runs = Vec::with_capacity(fixture.repetitions);
    for r in 0..fixture.repetitions {
        let seed = fixture.seed + r as u64;
        let mut session = session_for(fixture, &bindings, fixture.error_rate, seed)?;
        let result = session.run_query(
            &fixture.query,
            &QueryOptions {
                budget: fixture.budget,
                seed: Some(seed),
                ..QueryOptions::default()
            },
        )?;
        let mut baseline = None;
        let value = match task {
            EvalTask::Aggregation => eval_relative_error(first_number(&result)?, first_number(&truth)?)?,
            EvalTask::Retrieval => {
                let retrieved: BTreeSet<usize> = result.row_ids.iter().copied().collect();
                let budget = fixture.budget.unwrap_or(session.config().retrieval_budget).min(n_rows);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sampled: BTreeSet<usize> = index::sample(&mut rng, n_rows, budget)
                    .into_iter()
                    .filter(|i| relevant.contains(i))
                    .collect();
                baseline = Some(eval_f1(&sampled, &relevant));
                eval_f1(&retrieved, &relevant)
            }
            EvalTask::GroupBy => eval_emd(
                &label_counts(&result)?,
                &label_counts(&truth)?,
                embedder.as_ref(),
            )?,
        };
        runs.push(EvalRun {
            seed,
            value,
            oracle_calls: result.diagnostics.oracle_calls,
            baseline,
        });
    }
    Ok(EvalReport {
        task,
        query: fixture.query.clone(),
        runs,
    })
}
