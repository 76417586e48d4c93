//! The query engine: configuration, ingestion, a table catalog and the
//! session that runs queries end to end.

mod config;
mod ingest;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value as Json};

pub use config::{
    ConfigError, EmbeddingSpec, EngineConfig, LlmSpec, MockBindings, MockSpec, OracleSpec,
};
pub use ingest::{ingest, ingest_csv, ingest_jsonl, parse_schema, read_schema, IngestError};

use crate::compiler::{
    bind, enumerate_plans, explain, resolve, select_plan, BindOptions, CompileError, KernelKind,
    Plan, TableStats,
};
use crate::embedding::{cluster, Clustering, EmbeddingCache, EmbeddingError, EmbeddingMatrix, EmbeddingProvider};
use crate::exec::{
    execute, reference_evaluate, CellError, ExecContext, ExecError, KernelUsage, ResultTable,
};
use crate::learner::TraceStep;
use crate::model::Table;
use crate::oracle::Oracle;
use crate::uql::{parse_query, QueryClass, UqlError};

/// Where in the pipeline a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Catalog,
    Parse,
    Resolve,
    Plan,
    Bind,
    Embed,
    Execute,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Catalog => "catalog",
            Stage::Parse => "parse",
            Stage::Resolve => "resolve",
            Stage::Plan => "plan",
            Stage::Bind => "bind",
            Stage::Embed => "embed",
            Stage::Execute => "execute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[ingest] {0}")]
    Ingest(#[from] IngestError),
    #[error("[catalog] {0}")]
    Catalog(String),
    #[error("[parse] {0}")]
    Parse(#[from] UqlError),
    #[error("[{stage}] {error}")]
    Compile { stage: Stage, error: CompileError },
    #[error("[embed] {0}")]
    Embed(#[from] EmbeddingError),
    #[error("[execute] {0}")]
    Execute(#[from] ExecError),
}

impl EngineError {
    pub fn stage(&self) -> Stage {
        match self {
            EngineError::Config(_) => Stage::Config,
            EngineError::Ingest(_) => Stage::Ingest,
            EngineError::Catalog(_) => Stage::Catalog,
            EngineError::Parse(_) => Stage::Parse,
            EngineError::Compile { stage, .. } => *stage,
            EngineError::Embed(_) => Stage::Embed,
            EngineError::Execute(_) => Stage::Execute,
        }
    }
}

impl From<ConfigError> for EngineError {
    fn from(e: ConfigError) -> Self {
        EngineError::Config(e.to_string())
    }
}

fn at(stage: Stage) -> impl FnOnce(CompileError) -> EngineError {
    move |error| match error {
        CompileError::Uql(e) => EngineError::Parse(e),
        error => EngineError::Compile { stage, error },
    }
}

/// Ingested tables stored as JSON files under `<dir>/tables/`.
#[derive(Debug, Clone)]
pub struct Catalog {
    dir: PathBuf,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Catalog {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: cache_dir.into().join("tables"),
        }
    }

    fn path(&self, name: &str) -> Result<PathBuf, EngineError> {
        if !valid_name(name) {
            return Err(EngineError::Catalog(format!(
                "invalid table name `{name}`: use letters, digits, `_` and `-`"
            )));
        }
        Ok(self.dir.join(format!("{}.json", name.to_ascii_lowercase())))
    }

    pub fn save(&self, name: &str, table: &Table) -> Result<PathBuf, EngineError> {
        let path = self.path(name)?;
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| EngineError::Catalog(format!("{}: {e}", self.dir.display())))?;
        let file = std::fs::File::create(&path)
            .map_err(|e| EngineError::Catalog(format!("{}: {e}", path.display())))?;
        serde_json::to_writer(std::io::BufWriter::new(file), table)
            .map_err(|e| EngineError::Catalog(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(&self, name: &str) -> Result<Table, EngineError> {
        let path = self.path(name)?;
        load_table_file(&path)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.path(name).is_ok_and(|p| p.exists())
    }

    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = std::fs::read_dir(&self.dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_string))?
            })
            .collect();
        out.sort();
        out
    }
}

pub fn load_table_file(path: &Path) -> Result<Table, EngineError> {
    let file = std::fs::File::open(path)
        .map_err(|e| EngineError::Catalog(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| EngineError::Catalog(format!("{}: {e}", path.display())))
}

/// Per-query overrides of the session configuration.
#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    /// Oracle budget for this query's class.
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub explain: bool,
    /// Run the brute-force reference evaluator instead of the plan.
    pub exact: bool,
}

/// What a query cost and how far to trust it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Metered oracle calls.
    pub oracle_calls: u64,
    /// Metered rows shown to the oracle; the unit of the cost model.
    pub oracle_rows: u64,
    pub prompt_chars: u64,
    pub retries: u64,
    pub estimated_cost: f64,
    pub kernels: Vec<KernelUsage>,
    pub std_errors: Vec<CellError>,
    pub sample_size: Option<usize>,
    pub trace: Vec<TraceStep>,
    pub unmapped: usize,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub table: ResultTable,
    pub class: QueryClass,
    /// Table rows behind each output row of a retrieval.
    pub row_ids: Vec<usize>,
    pub plan: Plan,
    pub explain: Option<String>,
    pub diagnostics: Diagnostics,
    /// Session name the result was stored under.
    pub stored_as: Option<String>,
}

impl QueryResult {
    pub fn diagnostics_json(&self) -> Json {
        let d = &self.diagnostics;
        json!({
            "class": self.class.to_string(),
            "plan": self.plan.signature(),
            "exact": d.exact,
            "oracle_calls": d.oracle_calls,
            "oracle_rows": d.oracle_rows,
            "prompt_chars": d.prompt_chars,
            "retries": d.retries,
            "estimated_cost": d.estimated_cost,
            "kernels": d.kernels.iter().map(|k| json!({
                "kernel": k.kind.name(),
                "estimated_cost": k.estimated_cost,
                "calls": k.actual.calls,
                "rows": k.actual.rows,
            })).collect::<Vec<_>>(),
            "std_errors": d.std_errors.iter().map(|e| json!({
                "row": e.row, "column": e.column, "std_error": e.std_error,
            })).collect::<Vec<_>>(),
            "sample_size": d.sample_size,
            "trace_steps": d.trace.len(),
            "unmapped": d.unmapped,
        })
    }

    /// Human-readable diagnostics block.
    pub fn diagnostics_text(&self) -> String {
        let d = &self.diagnostics;
        let mut out = format!(
            "plan: {}{}\noracle calls: {} (rows {}, estimated cost {:.1})\n",
            self.plan.signature(),
            if d.exact { " [exact reference]" } else { "" },
            d.oracle_calls,
            d.oracle_rows,
            d.estimated_cost
        );
        for k in &d.kernels {
            out.push_str(&format!(
                "  {}: estimated {:.1}, actual {} rows in {} calls\n",
                k.kind, k.estimated_cost, k.actual.rows, k.actual.calls
            ));
        }
        if let Some(n) = d.sample_size {
            out.push_str(&format!("sample size: {n}\n"));
        }
        for e in &d.std_errors {
            out.push_str(&format!(
                "std error of {} in row {}: {:.4}\n",
                e.column, e.row, e.std_error
            ));
        }
        if !d.trace.is_empty() {
            let last = d.trace[d.trace.len() - 1];
            out.push_str(&format!(
                "search: {} steps, {} positives in {} calls\n",
                d.trace.len(),
                last.cumulative_positives,
                last.cumulative_calls
            ));
        }
        if d.unmapped > 0 {
            out.push_str(&format!("unmapped classifications: {}\n", d.unmapped));
        }
        if d.retries > 0 {
            out.push_str(&format!("retried requests: {}\n", d.retries));
        }
        out
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "cumulative_positives", "cumulative_calls"])?;
        for t in &self.diagnostics.trace {
            w.write_record([
                t.step.to_string(),
                t.cumulative_positives.to_string(),
                t.cumulative_calls.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Holds tables, stored results, the oracle and embedding caches for one
/// user. Queries run one at a time.
pub struct Session {
    config: EngineConfig,
    catalog: Catalog,
    tables: HashMap<String, Arc<Table>>,
    default_table: Option<String>,
    oracle: Box<dyn Oracle>,
    embedder: Box<dyn EmbeddingProvider>,
    embeddings: EmbeddingCache,
    clusterings: Vec<(Arc<EmbeddingMatrix>, usize, u64, Arc<Clustering>)>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("tables", &self.tables.keys().collect::<Vec<_>>())
            .field("default_table", &self.default_table)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// A session with the configured oracle and an embedding cache
    /// persisted under the cache directory.
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let oracle = config.build_oracle().map_err(EngineError::Config)?;
        let embeddings = EmbeddingCache::persistent(config.cache_dir.join("embeddings"))?;
        Ok(Self::assemble(config, oracle, embeddings))
    }

    /// A session around a caller-supplied oracle with an in-memory
    /// embedding cache.
    pub fn with_oracle(config: EngineConfig, oracle: Box<dyn Oracle>) -> Self {
        Self::assemble(config, oracle, EmbeddingCache::in_memory())
    }

    fn assemble(config: EngineConfig, oracle: Box<dyn Oracle>, embeddings: EmbeddingCache) -> Self {
        Self {
            catalog: Catalog::new(&config.cache_dir),
            embedder: config.build_embedder(),
            config,
            tables: HashMap::new(),
            default_table: None,
            oracle,
            embeddings,
            clusterings: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn oracle(&self) -> &dyn Oracle {
        self.oracle.as_ref()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn register(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_ascii_lowercase(), Arc::new(table));
    }

    /// Make `name` the table queries fall back to when their FROM names a
    /// table the session does not know. Loads it from the catalog if
    /// needed.
    pub fn use_table(&mut self, name: &str) -> Result<(), EngineError> {
        self.table(name)?;
        self.default_table = Some(name.to_ascii_lowercase());
        Ok(())
    }

    pub fn table(&mut self, name: &str) -> Result<Arc<Table>, EngineError> {
        let key = name.to_ascii_lowercase();
        if let Some(t) = self.tables.get(&key) {
            return Ok(t.clone());
        }
        if self.catalog.contains(&key) {
            let t = Arc::new(self.catalog.load(&key)?);
            self.tables.insert(key, t.clone());
            return Ok(t);
        }
        if let Some(d) = self.default_table.clone() {
            log::info!("table `{name}` is not known; using `{d}`");
            return self
                .tables
                .get(&d)
                .cloned()
                .ok_or_else(|| EngineError::Catalog(format!("unknown table `{name}`")));
        }
        Err(EngineError::Catalog(format!("unknown table `{name}`")))
    }

    /// Read a data file and its schema, store it in the catalog and the
    /// session.
    pub fn ingest(&mut self, name: &str, data: &Path, schema: &Path) -> Result<Arc<Table>, EngineError> {
        let table = ingest(data, schema)?;
        self.catalog.save(name, &table)?;
        self.register(name, table);
        self.table(name)
    }

    fn clustering_for(&mut self, emb: &Arc<EmbeddingMatrix>, seed: u64) -> Arc<Clustering> {
        let k = self.config.k;
        if let Some(c) = self
            .clusterings
            .iter()
            .find(|(m, ck, cs, _)| Arc::ptr_eq(m, emb) && *ck == k && *cs == seed)
        {
            return c.3.clone();
        }
        let c = Arc::new(cluster(emb, k, seed));
        self.clusterings.push((emb.clone(), k, seed, c.clone()));
        c
    }

    /// Parse, plan and run one query.
    pub fn run_query(&mut self, uql: &str, options: &QueryOptions) -> Result<QueryResult, EngineError> {
        let query = parse_query(uql)?;
        let table = self.table(&query.from)?;
        let resolved = resolve(&query, table.schema()).map_err(at(Stage::Resolve))?;

        let mut settings = self.config.exec_settings();
        let mut params = self.config.cost_params();
        if let Some(seed) = options.seed {
            settings.seed = seed;
        }
        if let Some(b) = options.budget {
            if b == 0 {
                return Err(EngineError::Config("budget must be positive".into()));
            }
            match resolved.class {
                QueryClass::Aggregation => settings.aggregation_budget = b,
                QueryClass::NonAggregation => settings.retrieval_budget = b,
            }
        }
        params.aggregation_budget = settings.aggregation_budget;
        params.retrieval_budget = settings.retrieval_budget;

        let stats = TableStats::compute(&resolved, &table).map_err(at(Stage::Plan))?;
        let plans = enumerate_plans(&resolved, &stats, &params);
        let selected = select_plan(&plans)
            .cloned()
            .ok_or_else(|| EngineError::Compile {
                stage: Stage::Plan,
                error: CompileError::Invalid("no plan applies to this query".into()),
            })?;
        let explain_text = options.explain.then(|| explain(&plans, &selected, &stats));
        let bind_opts = BindOptions {
            sources: self.config.sources.clone(),
            templates: self.config.templates(),
        };
        let plan = bind(selected.clone(), resolved, table.schema(), &bind_opts).map_err(at(Stage::Bind))?;
        let class = plan.query.class;
        let stored_as = plan.query.query.to.clone();

        let before = self.oracle.meter().snapshot();
        let mut diagnostics = Diagnostics {
            estimated_cost: selected.total_cost,
            exact: options.exact,
            ..Diagnostics::default()
        };
        let (result, row_ids) = if options.exact {
            let t = reference_evaluate(
                &plan.query,
                &table,
                self.oracle.as_ref(),
                &plan.sources,
                settings.max_groups,
            )?;
            (t, Vec::new())
        } else {
            let needs_clusters = class == QueryClass::Aggregation
                && plan.query.is_semantic()
                && settings.aggregation_budget < stats.candidates;
            let searches = class == QueryClass::NonAggregation
                && plan.query.where_semantic()
                && settings.retrieval_budget < stats.residual
                && plan
                    .plan
                    .kinds()
                    .iter()
                    .any(|k| matches!(k, KernelKind::Where | KernelKind::FusedWhereLimit));
            let emb = if needs_clusters || searches {
                Some(self.embeddings.get_or_embed(
                    &table,
                    &plan.sources,
                    self.embedder.as_ref(),
                    settings.parallelism,
                )?)
            } else {
                None
            };
            let clustering = match (&emb, needs_clusters) {
                (Some(m), true) => Some(self.clustering_for(m, self.config.seed)),
                _ => None,
            };
            let ctx = ExecContext {
                table: table.clone(),
                oracle: self.oracle.as_ref(),
                embeddings: emb.as_deref(),
                clustering: clustering.as_deref(),
                settings: settings.clone(),
            };
            let run = execute(&plan, &ctx)?;
            diagnostics.kernels = run.usage;
            diagnostics.std_errors = run.std_errors;
            diagnostics.sample_size = run.sample_size;
            diagnostics.trace = run.trace;
            diagnostics.unmapped = run.unmapped;
            (run.result, run.row_ids)
        };
        let used = self.oracle.meter().snapshot() - before;
        diagnostics.oracle_calls = used.calls;
        diagnostics.oracle_rows = used.rows;
        diagnostics.prompt_chars = used.prompt_chars;
        diagnostics.retries = used.retries;

        if let Some(name) = &stored_as {
            let t = result
                .to_table()
                .map_err(|e| EngineError::Catalog(format!("cannot store result as `{name}`: {e}")))?;
            self.register(name, t);
        }
        Ok(QueryResult {
            table: result,
            class,
            row_ids,
            plan: selected,
            explain: explain_text,
            diagnostics,
            stored_as,
        })
    }
}
