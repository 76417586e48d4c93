//! Budgeted estimation for aggregation queries: uniform and stratified
//! sampling with importance weights, plus the zero-variance reference
//! proposal.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::Clustering;
use crate::model::{
    weighted_estimate, AggOp, AggregateError, Estimate, SampleError, StochasticTable, Strata, Table,
};
use crate::oracle::{judge, parallel_map, Condition, Oracle, OracleError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("budget {budget} outside 1..={population}")]
    BudgetOutOfRange { budget: usize, population: usize },
    #[error("clustering covers {clustered} rows but the population has {population}")]
    ClusteringMismatch { clustered: usize, population: usize },
    #[error("no row satisfies the condition; the proposal is undefined")]
    NoSatisfyingRows,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("column `{0}` is not in the table")]
    UnknownColumn(String),
}

/// Per-stratum sample sizes for a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub budget: usize,
    pub sizes: Vec<usize>,
    /// `n_k` for each stratum; sums to the budget.
    pub allocation: Vec<usize>,
    pub seed: u64,
}

impl SamplePlan {
    /// Proportional allocation `max(1, round(B |C_k| / N))`, capped at
    /// `|C_k|` and brought to sum `B` by largest remainder. `None` when
    /// the budget cannot give every stratum a row.
    pub fn proportional(sizes: &[usize], budget: usize, seed: u64) -> Option<SamplePlan> {
        let n: usize = sizes.iter().sum();
        let strata = sizes.iter().filter(|&&s| s > 0).count();
        if budget < strata || budget > n {
            return None;
        }
        let quota: Vec<f64> = sizes
            .iter()
            .map(|&s| budget as f64 * s as f64 / n as f64)
            .collect();
        let mut alloc: Vec<usize> = sizes
            .iter()
            .zip(&quota)
            .map(|(&s, &q)| if s == 0 { 0 } else { (q.round() as usize).clamp(1, s) })
            .collect();
        let mut total: usize = alloc.iter().sum();
        while total > budget {
            // take from the stratum furthest above its quota
            let k = (0..sizes.len())
                .filter(|&k| alloc[k] > 1)
                .max_by(|&a, &b| {
                    let ea = alloc[a] as f64 - quota[a];
                    let eb = alloc[b] as f64 - quota[b];
                    ea.total_cmp(&eb).then(b.cmp(&a))
                })
                .expect("budget covers one row per stratum");
            alloc[k] -= 1;
            total -= 1;
        }
        while total < budget {
            let k = (0..sizes.len())
                .filter(|&k| alloc[k] < sizes[k])
                .max_by(|&a, &b| {
                    let ea = quota[a] - alloc[a] as f64;
                    let eb = quota[b] - alloc[b] as f64;
                    ea.total_cmp(&eb).then(b.cmp(&a))
                })
                .expect("budget does not exceed the population");
            alloc[k] += 1;
            total += 1;
        }
        Some(SamplePlan {
            budget,
            sizes: sizes.to_vec(),
            allocation: alloc,
            seed,
        })
    }
}

fn check_budget(budget: usize, population: usize) -> Result<(), SamplerError> {
    if budget == 0 || budget > population {
        return Err(SamplerError::BudgetOutOfRange { budget, population });
    }
    Ok(())
}

/// `budget` distinct rows drawn uniformly from `population` (table row
/// indices), each weighted `N / B`.
pub fn uniform_sample(
    base: Arc<Table>,
    population: &[usize],
    budget: usize,
    seed: u64,
) -> Result<StochasticTable, SamplerError> {
    let n = population.len();
    check_budget(budget, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = index::sample(&mut rng, n, budget)
        .into_iter()
        .map(|p| population[p])
        .collect();
    indices.sort_unstable();
    let w = n as f64 / budget as f64;
    Ok(StochasticTable::new(base, indices, vec![w; budget], n)?)
}

/// Stratified sample over `clustering`, whose assignment is indexed by
/// position in `population`. Falls back to [`uniform_sample`] when the
/// budget is smaller than the number of strata.
pub fn stratified_sample(
    base: Arc<Table>,
    population: &[usize],
    clustering: &Clustering,
    budget: usize,
    seed: u64,
) -> Result<StochasticTable, SamplerError> {
    let n = population.len();
    check_budget(budget, n)?;
    if clustering.assignment.len() != n {
        return Err(SamplerError::ClusteringMismatch {
            clustered: clustering.assignment.len(),
            population: n,
        });
    }
    let Some(plan) = SamplePlan::proportional(&clustering.sizes, budget, seed) else {
        log::warn!(
            "budget {budget} is below the {} strata; sampling uniformly",
            clustering.k
        );
        return uniform_sample(base, population, budget, seed);
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for (pos, &c) in clustering.assignment.iter().enumerate() {
        members[c].push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: Vec<(usize, f64, usize)> = Vec::with_capacity(budget);
    for (k, group) in members.iter().enumerate() {
        let take = plan.allocation[k];
        if take == 0 {
            continue;
        }
        let w = group.len() as f64 / take as f64;
        for p in index::sample(&mut rng, group.len(), take) {
            drawn.push((population[group[p]], w, k));
        }
    }
    drawn.sort_unstable_by_key(|d| d.0);
    let strata = Strata {
        labels: drawn.iter().map(|d| d.2).collect(),
        sizes: clustering.sizes.clone(),
    };
    let (indices, weights) = drawn.iter().map(|d| (d.0, d.1)).unzip();
    Ok(StochasticTable::with_strata(base, indices, weights, n, strata)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Aggregate {
    Count,
    Sum(String),
    Avg(String),
}

impl Aggregate {
    pub fn op(&self) -> AggOp {
        match self {
            Aggregate::Count => AggOp::Count,
            Aggregate::Sum(_) => AggOp::Sum,
            Aggregate::Avg(_) => AggOp::Avg,
        }
    }
}

/// Judge every sampled row once and return the weighted estimate.
///
/// AVG with no satisfying sampled row yields
/// [`AggregateError::EmptySample`].
pub fn estimate(
    st: &StochasticTable,
    cond: &Condition,
    oracle: &dyn Oracle,
    agg: &Aggregate,
    parallelism: usize,
) -> Result<Estimate, SamplerError> {
    let table = st.base();
    let column = match agg {
        Aggregate::Count => None,
        Aggregate::Sum(c) | Aggregate::Avg(c) => Some(
            table
                .schema()
                .position(c)
                .ok_or_else(|| SamplerError::UnknownColumn(c.clone()))?,
        ),
    };
    let verdicts = parallel_map(st.indices(), parallelism, |&i| {
        judge(oracle, table.view(i), cond)
    })?;
    let hits: std::collections::HashMap<usize, bool> =
        st.indices().iter().copied().zip(verdicts).collect();
    let value_of = |i: usize| -> Option<f64> {
        if !hits[&i] {
            return None;
        }
        match column {
            None => Some(1.0),
            Some(j) => Some(table.row(i)[j].as_f64().unwrap_or(f64::NAN)),
        }
    };
    Ok(weighted_estimate(st, agg.op(), value_of)?)
}

/// A distribution over row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    probabilities: Vec<f64>,
}

impl Proposal {
    /// `p_i = f_i / sum(f)`.
    pub fn proportional(f: &[f64]) -> Result<Proposal, SamplerError> {
        let total: f64 = f.iter().sum();
        if total <= 0.0 || f.iter().any(|&x| x < 0.0) {
            return Err(SamplerError::NoSatisfyingRows);
        }
        Ok(Proposal {
            probabilities: f.iter().map(|&x| x / total).collect(),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// `draws` indices with replacement.
    pub fn sample(&self, draws: usize, seed: u64) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.probabilities).expect("valid proposal");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws).map(|_| dist.sample(&mut rng)).collect()
    }

    /// Importance estimate of `sum_i f_i` from draws of this proposal.
    pub fn estimate_total(&self, draws: &[usize], f: &[f64]) -> f64 {
        let s: f64 = draws.iter().map(|&i| f[i] / self.probabilities[i]).sum();
        s / draws.len() as f64
    }
}

/// The zero-variance proposal `p_i ∝ f(T_i, cond)`. Needs an exact oracle
/// and judges every row, so it only serves as a reference in tests.
pub fn optimal_proposal(
    table: &Table,
    cond: &Condition,
    oracle: &dyn Oracle,
    parallelism: usize,
) -> Result<Proposal, SamplerError> {
    let rows: Vec<usize> = (0..table.num_rows()).collect();
    let f = parallel_map(&rows, parallelism, |&i| {
        judge(oracle, table.view(i), cond).map(|b| b as u8 as f64)
    })?;
    Proposal::proportional(&f)
}
