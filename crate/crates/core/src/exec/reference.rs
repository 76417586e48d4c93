use crate::compiler::{GroupKeySpec, OutputColumn, ResolvedQuery, SortTarget};
use crate::model::{AggOp, Table, Value};
use crate::oracle::{classify, extract, judge, Oracle};
use crate::uql::QueryClass;

use super::{compare_keys, split_rows, ExecError, ResultTable};

/// Evaluate a query by brute force: judge every row, then group, aggregate
/// exactly, order and limit, in that order. Taxonomies are built from all
/// surviving rows. Costs one oracle call per row and clause.
pub fn reference_evaluate(
    query: &ResolvedQuery,
    table: &Table,
    oracle: &dyn Oracle,
    sources: &[String],
    max_groups: usize,
) -> Result<ResultTable, ExecError> {
    let all: Vec<usize> = (0..table.num_rows()).collect();
    let (decided, residual) = split_rows(query, table, &all, sources)?;
    let mut passing = decided;
    for (i, cond) in &residual {
        if judge(oracle, table.view(*i), cond)? {
            passing.push(*i);
        }
    }
    passing.sort_unstable();

    let columns = query.outputs.iter().map(|o| o.name().to_string()).collect();
    let mut result = ResultTable::new(columns);
    match query.class {
        QueryClass::NonAggregation => {
            let attrs = query.extract_attributes();
            let mut rows: Vec<(Vec<Value>, usize)> = Vec::new();
            for &i in &passing {
                let got = if attrs.is_empty() {
                    Vec::new()
                } else {
                    extract(oracle, table.view(i), &attrs, sources)?
                };
                let cells = table.row(i);
                let out: Vec<Value> = query
                    .outputs
                    .iter()
                    .map(|o| match o {
                        OutputColumn::Column { position, .. } => cells[*position].clone(),
                        OutputColumn::Extract { attribute, .. } => {
                            let j = attrs.iter().position(|a| a == attribute).expect("listed");
                            Value::Text(got[j].clone())
                        }
                        _ => unreachable!(),
                    })
                    .collect();
                rows.push((out, i));
            }
            let sort_key = |out: &[Value], i: usize| -> Vec<Value> {
                query
                    .sort
                    .iter()
                    .map(|t| match t {
                        SortTarget::Table(p) => table.row(i)[*p].clone(),
                        SortTarget::Output(o) => out[*o].clone(),
                        SortTarget::Key(_) => Value::Null,
                    })
                    .collect()
            };
            rows.sort_by(|a, b| {
                compare_keys(&sort_key(&a.0, a.1), &sort_key(&b.0, b.1), query.descending)
                    .then(a.1.cmp(&b.1))
            });
            rows.truncate(query.limit.unwrap_or(usize::MAX));
            result.rows = rows.into_iter().map(|r| r.0).collect();
        }
        QueryClass::Aggregation => {
            let mut keys: Vec<Vec<Value>> = vec![Vec::new(); passing.len()];
            for k in &query.keys {
                match &k.spec {
                    GroupKeySpec::Column { position, .. } => {
                        for (slot, &i) in keys.iter_mut().zip(&passing) {
                            slot.push(table.row(i)[*position].clone());
                        }
                    }
                    GroupKeySpec::Semantic { attribute } => {
                        if passing.is_empty() {
                            continue;
                        }
                        let views: Vec<_> = passing.iter().map(|&i| table.view(i)).collect();
                        let taxonomy = oracle.build_taxonomy(&views, attribute, sources, max_groups)?;
                        for (slot, &i) in keys.iter_mut().zip(&passing) {
                            let c = classify(oracle, table.view(i), &taxonomy, sources)?;
                            slot.push(Value::Text(taxonomy.label(c.primary()).to_string()));
                        }
                    }
                }
            }
            let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
            for (key, &i) in keys.into_iter().zip(&passing) {
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1.push(i),
                    None => groups.push((key, vec![i])),
                }
            }
            if query.keys.is_empty() && groups.is_empty() {
                groups.push((Vec::new(), Vec::new()));
            }
            let mut rows: Vec<(Vec<Value>, Vec<Value>)> = groups
                .into_iter()
                .map(|(key, members)| {
                    let values = query
                        .outputs
                        .iter()
                        .map(|o| match o {
                            OutputColumn::Key { key: k, .. } => key[*k].clone(),
                            OutputColumn::Aggregate { op, column, .. } => {
                                exact_aggregate(table, &members, *op, *column)
                            }
                            _ => unreachable!(),
                        })
                        .collect();
                    (key, values)
                })
                .collect();
            let sort_key = |key: &[Value], values: &[Value]| -> Vec<Value> {
                query
                    .sort
                    .iter()
                    .map(|t| match t {
                        SortTarget::Output(o) => values[*o].clone(),
                        SortTarget::Key(k) => key[*k].clone(),
                        SortTarget::Table(_) => Value::Null,
                    })
                    .collect()
            };
            rows.sort_by(|a, b| {
                compare_keys(&sort_key(&a.0, &a.1), &sort_key(&b.0, &b.1), query.descending)
                    .then_with(|| compare_keys(&a.0, &b.0, false))
            });
            rows.truncate(query.limit.unwrap_or(usize::MAX));
            result.rows = rows.into_iter().map(|r| r.1).collect();
        }
    }
    Ok(result)
}

fn exact_aggregate(table: &Table, members: &[usize], op: AggOp, column: Option<usize>) -> Value {
    let cell = |i: usize| column.map(|j| &table.row(i)[j]);
    match op {
        AggOp::Count => Value::Integer(
            members
                .iter()
                .filter(|&&i| cell(i).is_none_or(|v| !v.is_null()))
                .count() as i64,
        ),
        AggOp::Sum => Value::Float(members.iter().filter_map(|&i| cell(i)?.as_f64()).sum()),
        AggOp::Avg => {
            let vals: Vec<f64> = members.iter().filter_map(|&i| cell(i)?.as_f64()).collect();
            if vals.is_empty() {
                Value::Null
            } else {
                Value::Float(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        }
    }
}
