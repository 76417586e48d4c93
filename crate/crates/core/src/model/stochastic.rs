use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::table::Table;

/// Aggregations that admit an importance-weighted estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggOp {
    Count,
    Sum,
    Avg,
}

impl AggOp {
    pub fn keyword(self) -> &'static str {
        match self {
            AggOp::Count => "COUNT",
            AggOp::Sum => "SUM",
            AggOp::Avg => "AVG",
        }
    }
}

impl std::fmt::Display for AggOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("sample index {index} is outside the table of {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("sample index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("weight {weight} at sample position {position} is not strictly positive")]
    NonPositiveWeight { position: usize, weight: f64 },
    #[error("{indices} sample indices but {weights} weights")]
    LengthMismatch { indices: usize, weights: usize },
    #[error("stratum labels do not match the sample")]
    BadStrata,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no sampled row satisfies the aggregate; the average is undefined")]
    EmptySample,
    #[error("{0} needs a numeric value for every satisfying row")]
    MissingValue(AggOp),
}

/// Stratum bookkeeping attached to a sample, used for the standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Strata {
    /// Stratum of each sampled row, parallel to the sample indices.
    pub labels: Vec<usize>,
    /// Population size of every stratum.
    pub sizes: Vec<usize>,
}

/// Rows drawn from a table, each carrying an importance weight.
#[derive(Debug, Clone)]
pub struct StochasticTable {
    base: Arc<Table>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    population: usize,
    strata: Strata,
}

impl StochasticTable {
    /// Build a sample over `base`. `population` is the size of the population
    /// the sample was drawn from (a subset of the table when structured
    /// filters ran first).
    pub fn new(
        base: Arc<Table>,
        indices: Vec<usize>,
        weights: Vec<f64>,
        population: usize,
    ) -> Result<Self, SampleError> {
        let n = indices.len();
        let strata = Strata {
            labels: vec![0; n],
            sizes: vec![population],
        };
        Self::with_strata(base, indices, weights, population, strata)
    }

    pub fn with_strata(
        base: Arc<Table>,
        indices: Vec<usize>,
        weights: Vec<f64>,
        population: usize,
        strata: Strata,
    ) -> Result<Self, SampleError> {
        if indices.len() != weights.len() {
            return Err(SampleError::LengthMismatch {
                indices: indices.len(),
                weights: weights.len(),
            });
        }
        let rows = base.num_rows();
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= rows {
                return Err(SampleError::IndexOutOfRange { index: i, rows });
            }
            if !seen.insert(i) {
                return Err(SampleError::DuplicateIndex(i));
            }
        }
        for (position, &weight) in weights.iter().enumerate() {
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(SampleError::NonPositiveWeight { position, weight });
            }
        }
        if strata.labels.len() != indices.len()
            || strata.labels.iter().any(|&s| s >= strata.sizes.len())
        {
            return Err(SampleError::BadStrata);
        }
        Ok(Self {
            base,
            indices,
            weights,
            population,
            strata,
        })
    }

    /// Every row of the table with weight 1.
    pub fn full(base: Arc<Table>) -> Self {
        let n = base.num_rows();
        Self::new(base, (0..n).collect(), vec![1.0; n], n).expect("full sample is valid")
    }

    pub fn base(&self) -> &Arc<Table> {
        &self.base
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn strata(&self) -> &Strata {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Whether every stratum with members contributed at least one sample.
    pub fn covers_all_strata(&self) -> bool {
        let mut hit = vec![false; self.strata.sizes.len()];
        for &s in &self.strata.labels {
            hit[s] = true;
        }
        hit.iter()
            .zip(&self.strata.sizes)
            .all(|(&h, &size)| h || size == 0)
    }

    /// The weights sum to the population size (within `1e-9 * N`) whenever
    /// every stratum was sampled.
    pub fn weight_sum_holds(&self) -> bool {
        if !self.covers_all_strata() {
            return true;
        }
        let n = self.population as f64;
        (self.weight_sum() - n).abs() <= 1e-9 * n.max(1.0)
    }
}

/// A point estimate with its plug-in standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Importance-weighted aggregate over a sample.
///
/// `value_of(row)` returns `None` when the row does not satisfy the
/// aggregate's condition and `Some(v)` when it does (`v` is ignored for
/// COUNT). COUNT and SUM are self-normalized and scaled to the population:
/// `N * sum(w f v) / sum(w)`; AVG is `sum(w f v) / sum(w f)`.
pub fn weighted_aggregate(
    st: &StochasticTable,
    op: AggOp,
    value_of: impl Fn(usize) -> Option<f64>,
) -> Result<f64, AggregateError> {
    weighted_estimate(st, op, value_of).map(|e| e.value)
}

/// As [`weighted_aggregate`], also returning the within-stratum plug-in
/// standard error (with finite-population correction).
pub fn weighted_estimate(
    st: &StochasticTable,
    op: AggOp,
    value_of: impl Fn(usize) -> Option<f64>,
) -> Result<Estimate, AggregateError> {
    let values: Vec<Option<f64>> = st
        .indices
        .iter()
        .map(|&i| match op {
            AggOp::Count => value_of(i).map(|_| 1.0),
            _ => value_of(i),
        })
        .collect();
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AggregateError::MissingValue(op));
    }

    let total_weight = st.weight_sum();
    let mut hit_weight = 0.0;
    let mut weighted_sum = 0.0;
    for (v, &w) in values.iter().zip(&st.weights) {
        if let Some(v) = v {
            hit_weight += w;
            weighted_sum += w * v;
        }
    }

    match op {
        AggOp::Count | AggOp::Sum => {
            if st.is_empty() {
                return Ok(Estimate {
                    value: 0.0,
                    std_error: 0.0,
                });
            }
            let scale = st.population as f64 / total_weight;
            let value = if scale == 1.0 {
                weighted_sum
            } else {
                weighted_sum * scale
            };
            let y: Vec<f64> = values.iter().map(|v| v.unwrap_or(0.0)).collect();
            Ok(Estimate {
                value,
                std_error: stratified_total_se(st, &y),
            })
        }
        AggOp::Avg => {
            if hit_weight <= 0.0 {
                return Err(AggregateError::EmptySample);
            }
            let ratio = weighted_sum / hit_weight;
            let z: Vec<f64> = values
                .iter()
                .map(|v| v.map_or(0.0, |v| v - ratio))
                .collect();
            let hits_estimate = hit_weight * st.population as f64 / total_weight;
            Ok(Estimate {
                value: ratio,
                std_error: stratified_total_se(st, &z) / hits_estimate,
            })
        }
    }
}

/// Standard error of the stratified total `sum_k |C_k| * mean_k(y)`.
fn stratified_total_se(st: &StochasticTable, y: &[f64]) -> f64 {
    let k = st.strata.sizes.len();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for (&s, &v) in st.strata.labels.iter().zip(y) {
        count[s] += 1;
        sum[s] += v;
        sum_sq[s] += v * v;
    }
    let mut var = 0.0;
    for s in 0..k {
        let n = count[s] as f64;
        let size = st.strata.sizes[s] as f64;
        if count[s] < 2 || size <= n {
            continue;
        }
        let mean = sum[s] / n;
        let s2 = ((sum_sq[s] - n * mean * mean) / (n - 1.0)).max(0.0);
        var += size * size * (1.0 - n / size) * s2 / n;
    }
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_table, ColumnSpec, Schema, Value, ValueType};

    fn table(n: usize) -> Arc<Table> {
        let schema = Schema::new(vec![ColumnSpec::structured("x", ValueType::Integer)]).unwrap();
        let rows = (0..n).map(|i| vec![Value::Integer(i as i64)]).collect();
        Arc::new(validate_table(schema, rows).unwrap())
    }

    #[test]
    fn full_sample_count_is_exact() {
        let st = StochasticTable::full(table(10));
        let est = weighted_aggregate(&st, AggOp::Count, |i| (i < 3).then_some(1.0)).unwrap();
        assert_eq!(est, 3.0);
        let e = weighted_estimate(&st, AggOp::Count, |i| (i < 3).then_some(1.0)).unwrap();
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn avg_over_empty_sample_errors() {
        let st = StochasticTable::new(table(4), vec![], vec![], 4).unwrap();
        assert_eq!(
            weighted_aggregate(&st, AggOp::Avg, |_| Some(1.0)),
            Err(AggregateError::EmptySample)
        );
        let st = StochasticTable::full(table(4));
        assert_eq!(
            weighted_aggregate(&st, AggOp::Avg, |_| None),
            Err(AggregateError::EmptySample)
        );
    }

    #[test]
    fn self_normalized_scaling() {
        // two rows sampled from a population of 10 with uneven weights
        let st = StochasticTable::new(table(10), vec![1, 7], vec![2.0, 3.0], 10).unwrap();
        let count = weighted_aggregate(&st, AggOp::Count, |i| (i == 7).then_some(1.0)).unwrap();
        assert!((count - 10.0 * 3.0 / 5.0).abs() < 1e-12);
        let sum = weighted_aggregate(&st, AggOp::Sum, |i| Some(i as f64)).unwrap();
        assert!((sum - 10.0 * (2.0 + 21.0) / 5.0).abs() < 1e-12);
        let avg = weighted_aggregate(&st, AggOp::Avg, |i| Some(i as f64)).unwrap();
        assert!((avg - 23.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn constructor_checks() {
        let t = table(3);
        assert!(matches!(
            StochasticTable::new(t.clone(), vec![0, 0], vec![1.0, 1.0], 3),
            Err(SampleError::DuplicateIndex(0))
        ));
        assert!(matches!(
            StochasticTable::new(t.clone(), vec![5], vec![1.0], 3),
            Err(SampleError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            StochasticTable::new(t, vec![1], vec![0.0], 3),
            Err(SampleError::NonPositiveWeight { .. })
        ));
    }
}
