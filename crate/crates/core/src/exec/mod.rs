//! Running bound plans against a table and an oracle, plus the brute-force
//! reference evaluator the plans are checked against.

mod reference;
mod result;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compiler::{
    simplify_dnf, CompileError, ExecutablePlan, GroupKeySpec, KernelKind, OutputColumn,
    ResolvedQuery, Simplified, SortTarget,
};
use crate::embedding::{Clustering, EmbeddingMatrix};
use crate::learner::{search_with, SearchConfig, TraceStep, DEFAULT_LAMBDA};
use crate::model::{weighted_estimate, AggOp, AggregateError, StochasticTable, Table, Value};
use crate::oracle::{
    judge, parallel_map, Condition, MeterSnapshot, Oracle, OracleError, RowRequest, Taxonomy,
};
use crate::sampler::{stratified_sample, uniform_sample, SamplerError};
use crate::uql::QueryClass;

pub use reference::reference_evaluate;
pub use result::{value_order, ResultTable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("retrieval below the exhaustive budget needs row embeddings")]
    MissingEmbeddings,
}

/// Budgets and knobs for one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecSettings {
    pub aggregation_budget: usize,
    pub retrieval_budget: usize,
    pub taxonomy_budget: usize,
    pub max_groups: usize,
    pub batch_size: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub exploration: f64,
    pub lambda: f64,
}

impl Default for ExecSettings {
    fn default() -> Self {
        Self {
            aggregation_budget: 128,
            retrieval_budget: 256,
            taxonomy_budget: 16,
            max_groups: 32,
            batch_size: 16,
            parallelism: 8,
            seed: 0,
            exploration: 0.0,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl ExecSettings {
    /// Budgets large enough that nothing is sampled.
    pub fn exhaustive(rows: usize) -> Self {
        Self {
            aggregation_budget: rows.max(1),
            retrieval_budget: rows.max(1),
            taxonomy_budget: rows.max(1),
            ..Self::default()
        }
    }
}

pub struct ExecContext<'a> {
    pub table: Arc<Table>,
    pub oracle: &'a dyn Oracle,
    /// Row embeddings of the whole table.
    pub embeddings: Option<&'a EmbeddingMatrix>,
    /// Clustering of the whole table, used for stratified sampling.
    pub clustering: Option<&'a Clustering>,
    pub settings: ExecSettings,
}

/// Oracle usage attributed to one kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelUsage {
    pub kind: KernelKind,
    pub estimated_cost: f64,
    pub actual: MeterSnapshot,
}

/// Standard error of one estimated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub row: usize,
    pub column: String,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub result: ResultTable,
    /// Table rows behind each result row (non-aggregation).
    pub row_ids: Vec<usize>,
    pub usage: Vec<KernelUsage>,
    pub std_errors: Vec<CellError>,
    /// Rows drawn for an aggregation, when it sampled.
    pub sample_size: Option<usize>,
    pub trace: Vec<TraceStep>,
    pub unmapped: usize,
}

impl Execution {
    pub fn total(&self) -> MeterSnapshot {
        self.usage
            .iter()
            .fold(MeterSnapshot::default(), |acc, u| MeterSnapshot {
                calls: acc.calls + u.actual.calls,
                rows: acc.rows + u.actual.rows,
                prompt_chars: acc.prompt_chars + u.actual.prompt_chars,
                retries: acc.retries + u.actual.retries,
            })
    }
}

/// The structured part of WHERE decided for each row.
pub(crate) fn split_rows(
    query: &ResolvedQuery,
    table: &Table,
    rows: &[usize],
    sources: &[String],
) -> Result<(Vec<usize>, Vec<(usize, Condition)>), ExecError> {
    let mut decided = Vec::new();
    let mut residual = Vec::new();
    let Some(filter) = &query.filter else {
        return Ok((rows.to_vec(), residual));
    };
    for &i in rows {
        match simplify_dnf(filter, table.row(i))? {
            Simplified::AlwaysTrue => decided.push(i),
            Simplified::AlwaysFalse => {}
            Simplified::Residual(dnf) => residual.push((i, Condition::from_dnf(dnf, sources.to_vec())?)),
        }
    }
    Ok((decided, residual))
}

/// Sort key comparison shared by the kernels and the reference evaluator.
pub(crate) fn compare_keys(a: &[Value], b: &[Value], descending: bool) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = value_order(x, y);
        if o.is_ne() {
            return if descending { o.reverse() } else { o };
        }
    }
    Ordering::Equal
}

fn metered<T>(
    oracle: &dyn Oracle,
    plan: &ExecutablePlan,
    index: usize,
    usage: &mut Vec<KernelUsage>,
    f: impl FnOnce() -> Result<T, ExecError>,
) -> Result<T, ExecError> {
    let before = oracle.meter().snapshot();
    let out = f()?;
    let k = &plan.plan.kernels[index];
    usage.push(KernelUsage {
        kind: k.kind,
        estimated_cost: k.estimated_cost,
        actual: oracle.meter().snapshot() - before,
    });
    Ok(out)
}

struct Runner<'a, 'c> {
    ctx: &'a ExecContext<'c>,
    plan: &'a ExecutablePlan,
    trace: Vec<TraceStep>,
    unmapped: usize,
}

pub fn execute(plan: &ExecutablePlan, ctx: &ExecContext<'_>) -> Result<Execution, ExecError> {
    let mut runner = Runner {
        ctx,
        plan,
        trace: Vec::new(),
        unmapped: 0,
    };
    match plan.query.class {
        QueryClass::NonAggregation => runner.retrieval(),
        QueryClass::Aggregation => runner.aggregation(),
    }
}

impl Runner<'_, '_> {
    fn q(&self) -> &ResolvedQuery {
        &self.plan.query
    }

    fn table(&self) -> &Table {
        &self.ctx.table
    }

    fn settings(&self) -> &ExecSettings {
        &self.ctx.settings
    }

    // ---- non-aggregation ----

    fn retrieval(&mut self) -> Result<Execution, ExecError> {
        let n = self.table().num_rows();
        let mut rows: Vec<usize> = (0..n).collect();
        let mut extracted: HashMap<usize, Vec<String>> = HashMap::new();
        let mut usage = Vec::new();
        let (oracle, plan) = (self.ctx.oracle, self.plan);
        let kernels: Vec<KernelKind> = self.plan.plan.kinds();
        for (ki, kind) in kernels.iter().enumerate() {
            match kind {
                KernelKind::Where => {
                    rows = metered(oracle, plan, ki, &mut usage, || self.filter_rows(&rows, None))?;
                }
                KernelKind::FusedWhereLimit => {
                    let limit = self.q().limit;
                    rows = metered(oracle, plan, ki, &mut usage, || self.filter_rows(&rows, limit))?;
                }
                KernelKind::Select => {
                    let got = metered(oracle, plan, ki, &mut usage, || self.extract_rows(&rows))?;
                    extracted.extend(got);
                }
                KernelKind::OrderBy => {
                    metered(oracle, plan, ki, &mut usage, || Ok(()))?;
                    let q = self.q();
                    let mut keyed: Vec<(Vec<Value>, usize)> = rows
                        .iter()
                        .map(|&i| {
                            let key = q
                                .sort
                                .iter()
                                .map(|t| self.sort_value(*t, i, &extracted))
                                .collect();
                            (key, i)
                        })
                        .collect();
                    keyed.sort_by(|a, b| compare_keys(&a.0, &b.0, q.descending).then(a.1.cmp(&b.1)));
                    rows = keyed.into_iter().map(|k| k.1).collect();
                }
                KernelKind::Limit => {
                    metered(oracle, plan, ki, &mut usage, || Ok(()))?;
                    rows.truncate(self.q().limit.unwrap_or(usize::MAX));
                }
                other => unreachable!("{other} in a non-aggregation plan"),
            }
        }
        let q = self.q();
        let mut result = ResultTable::new(q.outputs.iter().map(|o| o.name().to_string()).collect());
        let attrs = q.extract_attributes();
        for &i in &rows {
            let row = self.table().row(i);
            result.rows.push(
                q.outputs
                    .iter()
                    .map(|o| match o {
                        OutputColumn::Column { position, .. } => row[*position].clone(),
                        OutputColumn::Extract { attribute, .. } => {
                            let j = attrs.iter().position(|a| a == attribute).expect("collected");
                            extracted
                                .get(&i)
                                .map_or(Value::Null, |v| Value::Text(v[j].clone()))
                        }
                        _ => unreachable!("aggregation output in a retrieval"),
                    })
                    .collect(),
            );
        }
        Ok(Execution {
            result,
            row_ids: rows,
            usage,
            std_errors: Vec::new(),
            sample_size: None,
            trace: std::mem::take(&mut self.trace),
            unmapped: 0,
        })
    }

    fn sort_value(&self, target: SortTarget, row: usize, extracted: &HashMap<usize, Vec<String>>) -> Value {
        match target {
            SortTarget::Table(p) => self.table().row(row)[p].clone(),
            SortTarget::Output(o) => match &self.q().outputs[o] {
                OutputColumn::Column { position, .. } => self.table().row(row)[*position].clone(),
                OutputColumn::Extract { attribute, .. } => {
                    let attrs = self.q().extract_attributes();
                    let j = attrs.iter().position(|a| a == attribute).expect("collected");
                    extracted.get(&row).map_or(Value::Null, |v| Value::Text(v[j].clone()))
                }
                _ => Value::Null,
            },
            SortTarget::Key(_) => Value::Null,
        }
    }

    /// Rows of `rows` satisfying WHERE, ascending. With a limit, the first
    /// `limit` satisfying rows by index when the budget is exhaustive.
    fn filter_rows(&mut self, rows: &[usize], limit: Option<usize>) -> Result<Vec<usize>, ExecError> {
        let table = self.ctx.table.clone();
        let (decided, residual) = split_rows(self.q(), &table, rows, &self.plan.sources)?;
        let s = self.settings().clone();
        let oracle = self.ctx.oracle;
        if residual.is_empty() {
            let mut out = decided;
            out.truncate(limit.unwrap_or(usize::MAX));
            return Ok(out);
        }
        let conds: HashMap<usize, &Condition> = residual.iter().map(|(i, c)| (*i, c)).collect();
        let label = |i: usize| judge(oracle, table.view(i), conds[&i]);

        if s.retrieval_budget >= residual.len() {
            // scan in index order; decided rows count toward the limit
            let mut order: Vec<(usize, bool)> = decided.iter().map(|&i| (i, true)).collect();
            order.extend(residual.iter().map(|(i, _)| (*i, false)));
            order.sort_unstable();
            let want = limit.unwrap_or(usize::MAX);
            let mut out = Vec::new();
            let mut cursor = 0;
            let mut found = 0;
            let mut step = 0;
            let mut calls = 0;
            while cursor < order.len() && found < want {
                let size = s.batch_size.max(1).min(want - found);
                let mut chunk = Vec::new();
                let mut pending = 0;
                while cursor < order.len() && pending < size {
                    if !order[cursor].1 {
                        pending += 1;
                    }
                    chunk.push(order[cursor]);
                    cursor += 1;
                }
                let ask: Vec<usize> = chunk.iter().filter(|c| !c.1).map(|c| c.0).collect();
                let verdicts = parallel_map(&ask, s.parallelism, |&i| label(i))?;
                calls += ask.len();
                let hits: HashMap<usize, bool> = ask.into_iter().zip(verdicts).collect();
                for (i, free) in chunk {
                    if found == want {
                        break;
                    }
                    if free || hits[&i] {
                        out.push(i);
                        found += 1;
                    }
                }
                step += 1;
                self.trace.push(TraceStep {
                    step,
                    cumulative_positives: found,
                    cumulative_calls: calls,
                });
            }
            return Ok(out);
        }

        let emb = self.ctx.embeddings.ok_or(ExecError::MissingEmbeddings)?;
        let need = limit.map(|l| l.saturating_sub(decided.len()));
        let mut out = decided;
        if need != Some(0) {
            let config = SearchConfig {
                budget: s.retrieval_budget,
                batch_size: s.batch_size,
                seed: s.seed,
                limit: need,
                exploration: s.exploration,
                lambda: s.lambda,
                parallelism: s.parallelism,
            };
            let candidates: Vec<usize> = residual.iter().map(|(i, _)| *i).collect();
            let outcome = search_with(&candidates, emb, &config, &label).map_err(|e| e.error)?;
            self.trace = outcome.state.trace.clone();
            out.extend(outcome.positives);
        }
        out.sort_unstable();
        out.truncate(limit.unwrap_or(usize::MAX));
        Ok(out)
    }

    fn extract_rows(&self, rows: &[usize]) -> Result<HashMap<usize, Vec<String>>, ExecError> {
        let attrs = self.q().extract_attributes();
        if attrs.is_empty() {
            return Ok(HashMap::new());
        }
        let sources = &self.plan.sources;
        let table = self.table();
        let values = parallel_map(rows, self.settings().parallelism, |&i| {
            crate::oracle::extract(self.ctx.oracle, table.view(i), &attrs, sources)
        })?;
        Ok(rows.iter().copied().zip(values).collect())
    }

    // ---- aggregation ----

    fn aggregation(&mut self) -> Result<Execution, ExecError> {
        let mut state = AggState::default();
        let mut usage = Vec::new();
        let (oracle, plan) = (self.ctx.oracle, self.plan);
        let kernels = self.plan.plan.kinds();
        for (ki, kind) in kernels.iter().enumerate() {
            match kind {
                KernelKind::Where => {
                    metered(oracle, plan, ki, &mut usage, || self.agg_where(&mut state, false))?;
                }
                KernelKind::FusedGroupByWhere => {
                    metered(oracle, plan, ki, &mut usage, || self.agg_where(&mut state, true))?;
                }
                KernelKind::GroupBy => {
                    metered(oracle, plan, ki, &mut usage, || self.agg_group(&mut state))?;
                }
                KernelKind::FusedSelectGroupBy => {
                    metered(oracle, plan, ki, &mut usage, || {
                        self.agg_group(&mut state)?;
                        self.agg_select(&mut state, false)
                    })?;
                }
                KernelKind::Select => {
                    metered(oracle, plan, ki, &mut usage, || self.agg_select(&mut state, true))?;
                }
                KernelKind::OrderBy => {
                    metered(oracle, plan, ki, &mut usage, || Ok(()))?;
                    let q = self.q();
                    let groups = state.groups.as_mut().expect("select precedes ORDER BY");
                    groups.sort_by(|a, b| {
                        let ka: Vec<Value> = q.sort.iter().map(|t| a.sort_value(*t)).collect();
                        let kb: Vec<Value> = q.sort.iter().map(|t| b.sort_value(*t)).collect();
                        compare_keys(&ka, &kb, q.descending).then_with(|| compare_keys(&a.key, &b.key, false))
                    });
                }
                KernelKind::Limit => {
                    metered(oracle, plan, ki, &mut usage, || Ok(()))?;
                    let limit = self.q().limit.unwrap_or(usize::MAX);
                    state.groups.as_mut().expect("select precedes LIMIT").truncate(limit);
                }
                other => unreachable!("{other} in an aggregation plan"),
            }
        }
        let q = self.q();
        let groups = state.groups.take().expect("every aggregation plan selects");
        let mut result = ResultTable::new(q.outputs.iter().map(|o| o.name().to_string()).collect());
        let mut std_errors = Vec::new();
        for (r, g) in groups.into_iter().enumerate() {
            for (o, se) in q.outputs.iter().zip(&g.std_errors) {
                if let Some(se) = se {
                    std_errors.push(CellError {
                        row: r,
                        column: o.name().to_string(),
                        std_error: *se,
                    });
                }
            }
            result.rows.push(g.values);
        }
        Ok(Execution {
            result,
            row_ids: Vec::new(),
            usage,
            std_errors,
            sample_size: state.sample.as_ref().filter(|_| !state.exact).map(|s| s.len()),
            trace: Vec::new(),
            unmapped: self.unmapped,
        })
    }

    /// Draw the sample over rows that survive the structured predicates.
    fn ensure_sample(&self, state: &mut AggState) -> Result<(), ExecError> {
        if state.sample.is_some() {
            return Ok(());
        }
        let table = self.ctx.table.clone();
        let all: Vec<usize> = (0..table.num_rows()).collect();
        let (decided, residual) = split_rows(self.q(), &table, &all, &self.plan.sources)?;
        let mut candidates: Vec<usize> = decided.clone();
        candidates.extend(residual.iter().map(|(i, _)| *i));
        candidates.sort_unstable();
        let c = candidates.len();
        let budget = self.settings().aggregation_budget;
        let st = if !self.q().is_semantic() || budget >= c {
            state.exact = true;
            StochasticTable::new(table.clone(), candidates.clone(), vec![1.0; c], c)
                .map_err(SamplerError::from)?
        } else if let Some(full) = self.ctx.clustering {
            let labels: Vec<usize> = candidates.iter().map(|&i| full.assignment[i]).collect();
            let restricted = Clustering::from_assignment(&labels);
            stratified_sample(table.clone(), &candidates, &restricted, budget, self.settings().seed)?
        } else {
            uniform_sample(table.clone(), &candidates, budget, self.settings().seed)?
        };
        let mut conds: HashMap<usize, Condition> = residual.into_iter().collect();
        state.condition = st.indices().iter().map(|i| conds.remove(i)).collect();
        state.pass = vec![true; st.len()];
        state.keys = vec![Vec::new(); st.len()];
        state.sample = Some(st);
        Ok(())
    }

    fn taxonomy_for(&self, attribute: &str, rows: &[usize]) -> Result<Option<Taxonomy>, ExecError> {
        if rows.is_empty() {
            return Ok(None);
        }
        let tb = self.settings().taxonomy_budget.max(1).min(rows.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings().seed ^ 0x7a78_6f6e_6f6d_7900);
        let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), tb)
            .into_iter()
            .map(|p| rows[p])
            .collect();
        picked.sort_unstable();
        let views: Vec<_> = picked.iter().map(|&i| self.table().view(i)).collect();
        Ok(Some(self.ctx.oracle.build_taxonomy(
            &views,
            attribute,
            &self.plan.sources,
            self.settings().max_groups,
        )?))
    }

    /// Semantic taxonomies built over the given sample positions.
    fn build_taxonomies(&self, state: &AggState, positions: &[usize]) -> Result<Vec<Option<Taxonomy>>, ExecError> {
        let st = state.sample.as_ref().expect("sampled");
        let rows: Vec<usize> = positions.iter().map(|&p| st.indices()[p]).collect();
        self.q()
            .keys
            .iter()
            .map(|k| match &k.spec {
                GroupKeySpec::Semantic { attribute } => self.taxonomy_for(attribute, &rows),
                GroupKeySpec::Column { .. } => Ok(None),
            })
            .collect()
    }

    /// Judge WHERE on the sample; with `fused`, classify in the same call.
    fn agg_where(&mut self, state: &mut AggState, fused: bool) -> Result<(), ExecError> {
        self.ensure_sample(state)?;
        let st = state.sample.clone().expect("sampled");
        let positions: Vec<usize> = (0..st.len()).collect();
        let taxonomies = if fused {
            self.build_taxonomies(state, &positions)?
        } else {
            Vec::new()
        };
        let semantic: Vec<&Taxonomy> = taxonomies.iter().flatten().collect();
        let table = self.table();
        let sources = &self.plan.sources;
        let answers = parallel_map(&positions, self.settings().parallelism, |&p| {
            let cond = state.condition[p].as_ref();
            if cond.is_none() && semantic.is_empty() {
                return Ok::<_, OracleError>((true, Vec::new()));
            }
            let request = RowRequest {
                judge: cond,
                classify: semantic.clone(),
                sources: sources.clone(),
                ..Default::default()
            };
            let response = self.ctx.oracle.call(table.view(st.indices()[p]), &request)?;
            let verdict = match cond {
                None => true,
                Some(_) => response
                    .verdict
                    .ok_or_else(|| OracleError::Protocol("missing verdict".into()))?,
            };
            if response.classes.len() != semantic.len() {
                return Err(OracleError::Protocol("missing classification".into()));
            }
            Ok((verdict, response.classes))
        })?;
        for (p, (verdict, classes)) in answers.into_iter().enumerate() {
            state.pass[p] = verdict;
            if fused && verdict {
                self.unmapped += classes.iter().filter(|c| c.unmapped).count();
                state.keys[p] = self.key_values(st.indices()[p], &taxonomies, &classes);
            }
        }
        state.filtered = true;
        if fused {
            state.taxonomies = taxonomies;
            state.grouped = true;
        }
        Ok(())
    }

    fn key_values(
        &self,
        row: usize,
        taxonomies: &[Option<Taxonomy>],
        classes: &[crate::oracle::Classification],
    ) -> Vec<Value> {
        let mut semantic = classes.iter();
        self.q()
            .keys
            .iter()
            .zip(taxonomies.iter().chain(std::iter::repeat(&None)))
            .map(|(k, t)| match &k.spec {
                GroupKeySpec::Column { position, .. } => self.table().row(row)[*position].clone(),
                GroupKeySpec::Semantic { .. } => {
                    let c = semantic.next().expect("one class per taxonomy");
                    let t = t.as_ref().expect("semantic key has a taxonomy");
                    Value::Text(t.label(c.primary()).to_string())
                }
            })
            .collect()
    }

    /// Classify the surviving sampled rows into groups.
    fn agg_group(&mut self, state: &mut AggState) -> Result<(), ExecError> {
        self.ensure_sample(state)?;
        if state.grouped {
            return Ok(());
        }
        let positions = state.passing();
        let taxonomies = self.build_taxonomies(state, &positions)?;
        self.classify_into(state, &positions, &taxonomies)?;
        state.taxonomies = taxonomies;
        state.grouped = true;
        Ok(())
    }

    fn classify_into(
        &mut self,
        state: &mut AggState,
        positions: &[usize],
        taxonomies: &[Option<Taxonomy>],
    ) -> Result<(), ExecError> {
        let st = state.sample.clone().expect("sampled");
        let semantic: Vec<&Taxonomy> = taxonomies.iter().flatten().collect();
        let table = self.table();
        let sources = &self.plan.sources;
        let classes = parallel_map(positions, self.settings().parallelism, |&p| {
            if semantic.is_empty() {
                return Ok(Vec::new());
            }
            let request = RowRequest {
                classify: semantic.clone(),
                sources: sources.clone(),
                ..Default::default()
            };
            let response = self.ctx.oracle.call(table.view(st.indices()[p]), &request)?;
            if response.classes.len() != semantic.len() {
                return Err(OracleError::Protocol("missing classification".into()));
            }
            Ok(response.classes)
        })?;
        for (&p, c) in positions.iter().zip(classes) {
            self.unmapped += c.iter().filter(|c| c.unmapped).count();
            state.keys[p] = self.key_values(st.indices()[p], taxonomies, &c);
        }
        Ok(())
    }

    /// Aggregate per group. Unfused, a semantic select list is derived
    /// again row by row and takes precedence over the grouping pass.
    fn agg_select(&mut self, state: &mut AggState, rederive: bool) -> Result<(), ExecError> {
        self.ensure_sample(state)?;
        if !state.grouped && !self.q().keys.is_empty() {
            self.agg_group(state)?;
        }
        if rederive && self.q().select_semantic() {
            let positions = state.passing();
            let taxonomies = state.taxonomies.clone();
            if taxonomies.iter().any(Option::is_some) {
                self.unmapped = 0;
                self.classify_into(state, &positions, &taxonomies)?;
            }
        }
        let st = state.sample.clone().expect("sampled");
        let q = self.q();

        let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        for p in state.passing() {
            let key = &state.keys[p];
            let tag = format!("{key:?}");
            let g = *lookup.entry(tag).or_insert_with(|| {
                groups.push((key.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(st.indices()[p]);
        }
        if q.keys.is_empty() && groups.is_empty() {
            groups.push((Vec::new(), Vec::new()));
        }
        groups.sort_by(|a, b| compare_keys(&a.0, &b.0, false));

        let table = self.table();
        let mut out = Vec::with_capacity(groups.len());
        for (key, members) in groups {
            let member: std::collections::HashSet<usize> = members.into_iter().collect();
            let mut values = Vec::with_capacity(q.outputs.len());
            let mut errors = Vec::with_capacity(q.outputs.len());
            for o in &q.outputs {
                match o {
                    OutputColumn::Key { key: k, .. } => {
                        values.push(key[*k].clone());
                        errors.push(None);
                    }
                    OutputColumn::Aggregate { op, column, .. } => {
                        let value_of = |i: usize| -> Option<f64> {
                            if !member.contains(&i) {
                                return None;
                            }
                            match column {
                                None => Some(1.0),
                                Some(j) => {
                                    let cell = &table.row(i)[*j];
                                    match op {
                                        AggOp::Count => (!cell.is_null()).then_some(1.0),
                                        _ => cell.as_f64(),
                                    }
                                }
                            }
                        };
                        match weighted_estimate(&st, *op, value_of) {
                            Ok(e) => {
                                values.push(aggregate_value(*op, e.value, state.exact));
                                errors.push((!state.exact).then_some(e.std_error));
                            }
                            Err(AggregateError::EmptySample) => {
                                values.push(Value::Null);
                                errors.push(None);
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                    _ => unreachable!("retrieval output in an aggregation"),
                }
            }
            out.push(GroupRow {
                key,
                values,
                std_errors: errors,
                query_keys: q.keys.len(),
            });
        }
        state.groups = Some(out);
        Ok(())
    }
}

fn aggregate_value(op: AggOp, value: f64, exact: bool) -> Value {
    match op {
        AggOp::Count if exact => Value::Integer(value.round() as i64),
        _ => Value::Float(value),
    }
}

#[derive(Debug, Clone)]
struct GroupRow {
    key: Vec<Value>,
    values: Vec<Value>,
    std_errors: Vec<Option<f64>>,
    query_keys: usize,
}

impl GroupRow {
    fn sort_value(&self, target: SortTarget) -> Value {
        match target {
            SortTarget::Output(o) => self.values[o].clone(),
            SortTarget::Key(k) if k < self.query_keys => self.key[k].clone(),
            _ => Value::Null,
        }
    }
}

#[derive(Debug, Default)]
struct AggState {
    sample: Option<StochasticTable>,
    /// Every candidate is in the sample with weight 1.
    exact: bool,
    /// Per sample position: the semantic residual of WHERE, if any.
    condition: Vec<Option<Condition>>,
    pass: Vec<bool>,
    keys: Vec<Vec<Value>>,
    taxonomies: Vec<Option<Taxonomy>>,
    filtered: bool,
    grouped: bool,
    groups: Option<Vec<GroupRow>>,
}

impl AggState {
    fn passing(&self) -> Vec<usize> {
        (0..self.pass.len()).filter(|&p| self.pass[p]).collect()
    }
}
