use std::fmt::{self, Write};

use crate::model::{Schema, Table};
use crate::oracle::{Condition, Prompt, PromptTemplates};
use crate::uql::QueryClass;

use super::{simplify_dnf, CompileError, ResolvedQuery, Simplified};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Select,
    Where,
    GroupBy,
    OrderBy,
    Limit,
    FusedWhereLimit,
    FusedSelectGroupBy,
    FusedGroupByWhere,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Select => "Select",
            KernelKind::Where => "Where",
            KernelKind::GroupBy => "GroupBy",
            KernelKind::OrderBy => "OrderBy",
            KernelKind::Limit => "Limit",
            KernelKind::FusedWhereLimit => "FusedWhereLimit",
            KernelKind::FusedSelectGroupBy => "FusedSelectGroupBy",
            KernelKind::FusedGroupByWhere => "FusedGroupByWhere",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A source clause of the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clause {
    Select,
    Where,
    GroupBy,
    OrderBy,
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    /// The query clauses this kernel executes.
    pub clauses: Vec<Clause>,
    /// Expected rows shown to the oracle.
    pub estimated_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub kernels: Vec<Kernel>,
    pub input: String,
    pub class: QueryClass,
    pub total_cost: f64,
}

impl Plan {
    pub fn kinds(&self) -> Vec<KernelKind> {
        self.kernels.iter().map(|k| k.kind).collect()
    }

    pub fn signature(&self) -> String {
        let names: Vec<&str> = self.kernels.iter().map(|k| k.kind.name()).collect();
        names.join(" -> ")
    }
}

/// What planning knows about the input: sizes after the structured part
/// of WHERE is evaluated on every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableStats {
    pub rows: usize,
    /// Rows not excluded by structured predicates.
    pub candidates: usize,
    /// Rows admitted by structured predicates alone.
    pub decided: usize,
    /// Rows whose admission depends on semantic atoms.
    pub residual: usize,
}

impl TableStats {
    pub fn compute(query: &ResolvedQuery, table: &Table) -> Result<TableStats, CompileError> {
        let rows = table.num_rows();
        let Some(filter) = &query.filter else {
            return Ok(TableStats {
                rows,
                candidates: rows,
                decided: rows,
                residual: 0,
            });
        };
        let (mut decided, mut residual) = (0, 0);
        for row in table.rows() {
            match simplify_dnf(filter, row)? {
                Simplified::AlwaysTrue => decided += 1,
                Simplified::Residual(_) => residual += 1,
                Simplified::AlwaysFalse => {}
            }
        }
        Ok(TableStats {
            rows,
            candidates: decided + residual,
            decided,
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub aggregation_budget: usize,
    pub retrieval_budget: usize,
    pub taxonomy_budget: usize,
    /// Assumed fraction of judged rows that satisfy WHERE, used to cost an
    /// early-stopping search.
    pub prior_selectivity: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            aggregation_budget: 128,
            retrieval_budget: 256,
            taxonomy_budget: 16,
            prior_selectivity: 0.5,
        }
    }
}

/// Walks a kernel sequence tracking an upper bound on the rows flowing
/// between kernels.
struct CostWalk<'a> {
    query: &'a ResolvedQuery,
    stats: &'a TableStats,
    params: &'a CostParams,
    rows: f64,
}

impl CostWalk<'_> {
    fn sample_size(&self) -> f64 {
        self.params.aggregation_budget.min(self.stats.candidates) as f64
    }

    fn taxonomy_rows(&self, rows: f64) -> f64 {
        (self.params.taxonomy_budget as f64).min(rows)
    }

    fn step(&mut self, kind: KernelKind) -> f64 {
        let q = self.query;
        let s = self.stats;
        let limit = q.limit.map(|l| l as f64);
        match (q.class, kind) {
            (QueryClass::NonAggregation, KernelKind::Where) => {
                let judged = if q.where_semantic() {
                    self.params.retrieval_budget.min(s.residual) as f64
                } else {
                    0.0
                };
                self.rows = s.decided as f64 + judged;
                judged
            }
            (QueryClass::NonAggregation, KernelKind::FusedWhereLimit) => {
                let limit = limit.expect("fused with a LIMIT");
                let most = self.params.retrieval_budget.min(s.residual) as f64;
                let needed = (limit - s.decided as f64).max(0.0);
                let cost = if q.where_semantic() && needed > 0.0 {
                    (needed / self.params.prior_selectivity).min(most)
                } else {
                    0.0
                };
                self.rows = limit.min(s.decided as f64 + most);
                cost
            }
            (QueryClass::NonAggregation, KernelKind::Select) => {
                if q.select_semantic() {
                    self.rows
                } else {
                    0.0
                }
            }
            (QueryClass::Aggregation, KernelKind::Where) => {
                let sampled = self.sample_size();
                self.rows = if q.is_semantic() { sampled } else { s.candidates as f64 };
                if q.where_semantic() {
                    sampled.min(s.residual as f64)
                } else {
                    0.0
                }
            }
            (QueryClass::Aggregation, KernelKind::GroupBy)
            | (QueryClass::Aggregation, KernelKind::FusedSelectGroupBy) => {
                if self.query.filter.is_none() {
                    self.rows = if q.is_semantic() {
                        self.sample_size()
                    } else {
                        s.candidates as f64
                    };
                }
                if q.group_semantic() {
                    self.taxonomy_rows(self.rows) + self.rows
                } else {
                    0.0
                }
            }
            (QueryClass::Aggregation, KernelKind::FusedGroupByWhere) => {
                let sampled = self.sample_size();
                self.rows = if q.is_semantic() { sampled } else { s.candidates as f64 };
                if q.group_semantic() {
                    self.taxonomy_rows(sampled) + sampled
                } else if q.where_semantic() {
                    sampled.min(s.residual as f64)
                } else {
                    0.0
                }
            }
            (QueryClass::Aggregation, KernelKind::Select) => {
                if q.keys.is_empty() && self.query.filter.is_none() && !q.is_semantic() {
                    self.rows = s.candidates as f64;
                }
                if q.select_semantic() {
                    self.rows
                } else {
                    0.0
                }
            }
            (_, KernelKind::Limit) => {
                if q.class == QueryClass::NonAggregation {
                    self.rows = self.rows.min(limit.expect("LIMIT kernel without a limit"));
                }
                0.0
            }
            (_, KernelKind::OrderBy) => 0.0,
            (class, kind) => unreachable!("{kind} is never planned for {class} queries"),
        }
    }
}

/// Expected oracle rows for `kernel` at position `index` of `kinds`.
pub fn estimate_cost(
    kinds: &[KernelKind],
    index: usize,
    query: &ResolvedQuery,
    stats: &TableStats,
    params: &CostParams,
) -> f64 {
    let mut walk = CostWalk {
        query,
        stats,
        params,
        rows: stats.rows as f64,
    };
    for &k in &kinds[..index] {
        walk.step(k);
    }
    walk.step(kinds[index])
}

fn clauses_of(kind: KernelKind, query: &ResolvedQuery) -> Vec<Clause> {
    let group = query.query.group_by.is_some();
    match kind {
        KernelKind::Select => vec![Clause::Select],
        KernelKind::Where => vec![Clause::Where],
        KernelKind::GroupBy if group => vec![Clause::GroupBy],
        KernelKind::GroupBy => vec![],
        KernelKind::OrderBy => vec![Clause::OrderBy],
        KernelKind::Limit => vec![Clause::Limit],
        KernelKind::FusedWhereLimit => vec![Clause::Where, Clause::Limit],
        KernelKind::FusedSelectGroupBy if group => vec![Clause::Select, Clause::GroupBy],
        KernelKind::FusedSelectGroupBy => vec![Clause::Select],
        KernelKind::FusedGroupByWhere if group => vec![Clause::Where, Clause::GroupBy],
        KernelKind::FusedGroupByWhere => vec![Clause::Where],
    }
}

fn candidate_sequences(query: &ResolvedQuery) -> Vec<Vec<KernelKind>> {
    use KernelKind::*;
    let has_where = query.filter.is_some();
    let has_order = !query.sort.is_empty();
    let has_limit = query.limit.is_some();
    let mut tail = Vec::new();
    if has_order {
        tail.push(OrderBy);
    }
    if has_limit {
        tail.push(Limit);
    }
    let with_tail = |head: Vec<KernelKind>, tail: &[KernelKind]| {
        let mut v = head;
        v.extend_from_slice(tail);
        v
    };

    let mut out = Vec::new();
    match query.class {
        QueryClass::NonAggregation => {
            if !has_where {
                out.push(with_tail(vec![Select], &tail));
            } else {
                out.push(with_tail(vec![Where, Select], &tail));
                out.push(with_tail(vec![Select, Where], &tail));
                if has_limit && !has_order {
                    out.push(vec![FusedWhereLimit, Select]);
                    out.push(vec![Select, FusedWhereLimit]);
                }
            }
        }
        QueryClass::Aggregation => {
            let grouped = !query.keys.is_empty();
            let mut head = Vec::new();
            if has_where {
                head.push(Where);
            }
            if grouped {
                head.push(GroupBy);
            }
            head.push(Select);
            out.push(with_tail(head, &tail));
            if grouped && query.select_semantic() {
                let mut head = Vec::new();
                if has_where {
                    head.push(Where);
                }
                head.push(FusedSelectGroupBy);
                out.push(with_tail(head, &tail));
            }
            if grouped && has_where {
                out.push(with_tail(vec![FusedGroupByWhere, Select], &tail));
            }
        }
    }
    out
}

/// Every plan consistent with the ordering constraints, including the
/// applicable fusions, with estimated costs.
pub fn enumerate_plans(
    query: &ResolvedQuery,
    stats: &TableStats,
    params: &CostParams,
) -> Vec<Plan> {
    candidate_sequences(query)
        .into_iter()
        .map(|kinds| {
            let mut walk = CostWalk {
                query,
                stats,
                params,
                rows: stats.rows as f64,
            };
            let kernels: Vec<Kernel> = kinds
                .iter()
                .map(|&kind| Kernel {
                    kind,
                    clauses: clauses_of(kind, query),
                    estimated_cost: walk.step(kind),
                })
                .collect();
            Plan {
                total_cost: kernels.iter().map(|k| k.estimated_cost).sum(),
                kernels,
                input: query.query.from.clone(),
                class: query.class,
            }
        })
        .collect()
}

/// Cheapest plan; ties go to fewer kernels, then to the lexicographically
/// smaller sequence of kernel names.
pub fn select_plan(plans: &[Plan]) -> Option<&Plan> {
    plans.iter().min_by(|a, b| {
        a.total_cost
            .total_cmp(&b.total_cost)
            .then(a.kernels.len().cmp(&b.kernels.len()))
            .then_with(|| {
                let na: Vec<&str> = a.kernels.iter().map(|k| k.kind.name()).collect();
                let nb: Vec<&str> = b.kernels.iter().map(|k| k.kind.name()).collect();
                na.cmp(&nb)
            })
    })
}

/// Candidate plans with costs, the selected one starred.
pub fn explain(plans: &[Plan], selected: &Plan, stats: &TableStats) -> String {
    let mut out = String::new();
    let class = plans.first().map_or(QueryClass::NonAggregation, |p| p.class);
    let _ = writeln!(
        out,
        "{class} query; rows={} candidates={} decided={} residual={}",
        stats.rows, stats.candidates, stats.decided, stats.residual
    );
    for (i, p) in plans.iter().enumerate() {
        let mark = if p == selected { '*' } else { ' ' };
        let steps: Vec<String> = p
            .kernels
            .iter()
            .map(|k| format!("{}({:.1})", k.kind, k.estimated_cost))
            .collect();
        let _ = writeln!(
            out,
            "{mark} [{}] cost={:.1} {}",
            i + 1,
            p.total_cost,
            steps.join(" -> ")
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct BindOptions {
    /// Unstructured columns shown to the oracle. Inferred when there is
    /// exactly one.
    pub sources: Option<Vec<String>>,
    /// Prompt templates for a chat backend, used for previews.
    pub templates: Option<PromptTemplates>,
}

/// A plan ready to run: source columns fixed and prompts renderable.
#[derive(Debug, Clone)]
pub struct ExecutablePlan {
    pub plan: Plan,
    pub query: ResolvedQuery,
    pub sources: Vec<String>,
    pub templates: Option<PromptTemplates>,
}

pub fn bind(
    plan: Plan,
    query: ResolvedQuery,
    schema: &Schema,
    options: &BindOptions,
) -> Result<ExecutablePlan, CompileError> {
    let sources = if !query.is_semantic() {
        Vec::new()
    } else if let Some(explicit) = &options.sources {
        for c in explicit {
            match schema.column(c) {
                None => return Err(CompileError::UnknownColumn(c.clone())),
                Some(spec) if !spec.is_unstructured() => {
                    return Err(CompileError::Invalid(format!(
                        "source column `{c}` is not unstructured"
                    )))
                }
                Some(_) => {}
            }
        }
        if explicit.is_empty() {
            return Err(CompileError::NoSourceColumn);
        }
        explicit.clone()
    } else {
        let found: Vec<String> = schema.unstructured_columns().map(|c| c.name.clone()).collect();
        match found.len() {
            0 => return Err(CompileError::NoSourceColumn),
            1 => found,
            _ => return Err(CompileError::AmbiguousSource(found)),
        }
    };
    Ok(ExecutablePlan {
        plan,
        query,
        sources,
        templates: options.templates.clone(),
    })
}

impl ExecutablePlan {
    /// Prompts the plan's oracle kernels would send for `row`, for
    /// inspection. Classification prompts are omitted because they depend
    /// on the taxonomy built at run time.
    pub fn prompt_preview(
        &self,
        table: &Table,
        row: usize,
    ) -> Result<Vec<(KernelKind, Prompt)>, CompileError> {
        let Some(templates) = &self.templates else {
            return Ok(Vec::new());
        };
        let text = table.view(row).text_of(&self.sources);
        let mut out = Vec::new();
        for k in &self.plan.kernels {
            let judges = matches!(
                k.kind,
                KernelKind::Where | KernelKind::FusedWhereLimit | KernelKind::FusedGroupByWhere
            );
            if judges {
                if let Some(filter) = &self.query.filter {
                    if let Simplified::Residual(dnf) = simplify_dnf(filter, table.row(row))? {
                        let cond = Condition::from_dnf(dnf, self.sources.clone())
                            .map_err(|e| CompileError::Invalid(e.to_string()))?;
                        out.push((k.kind, templates.judge(&cond.text(), &text)));
                    }
                }
            }
            if k.kind == KernelKind::Select && self.query.class == QueryClass::NonAggregation {
                let attrs = self.query.extract_attributes();
                if !attrs.is_empty() {
                    out.push((k.kind, templates.extract(&attrs, &text)));
                }
            }
            if matches!(
                k.kind,
                KernelKind::GroupBy | KernelKind::FusedSelectGroupBy | KernelKind::FusedGroupByWhere
            ) {
                for key in &self.query.keys {
                    if let super::GroupKeySpec::Semantic { attribute } = &key.spec {
                        out.push((k.kind, templates.taxonomy(attribute, std::slice::from_ref(&text))));
                    }
                }
            }
        }
        Ok(out)
    }
}
