//! Budgeted retrieval by online active learning: a logistic surrogate over
//! row embeddings picks which rows the oracle judges next.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::EmbeddingMatrix;
use crate::model::Table;
use crate::oracle::{judge, parallel_map, Condition, Oracle, OracleError};

pub const DEFAULT_LAMBDA: f64 = 1.0;
const GRAD_TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 500;

/// Linear scorer `w . x + b` over embeddings. Until trained it scores each
/// row with a fixed uniform draw from the run seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained: bool,
    pub lambda: f64,
    seed: u64,
}

impl Surrogate {
    pub fn untrained(dim: usize, lambda: f64, seed: u64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            trained: false,
            lambda,
            seed,
        }
    }

    /// Scores for the given table rows. Untrained scores are `U(0,1)` and
    /// depend only on the seed and the row index.
    pub fn scores(&self, emb: &EmbeddingMatrix, rows: &[usize]) -> Vec<f64> {
        if !self.trained {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let draws: Vec<f64> = (0..emb.rows()).map(|_| rng.random::<f64>()).collect();
            return rows.iter().map(|&i| draws[i]).collect();
        }
        rows.iter()
            .map(|&i| {
                let x = emb.row(i);
                self.bias
                    + self
                        .weights
                        .iter()
                        .zip(x)
                        .map(|(w, &v)| w * v as f64)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// L2-regularized logistic loss: `sum_i log(1 + exp(-y_i z_i)) +
/// lambda/2 |w|^2`, `y` in {-1, +1}, bias unregularized. Returns the loss
/// and its gradient (weights first, bias last).
pub fn logistic_loss_grad(
    params: &[f64],
    xs: &[&[f32]],
    ys: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let mut loss = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    grad.push(0.0);
    for (x, &y) in xs.iter().zip(ys) {
        let z = b + w.iter().zip(x.iter()).map(|(w, &v)| w * v as f64).sum::<f64>();
        let m = y * z;
        // log(1 + e^{-m}) without overflow
        loss += if m > 0.0 {
            (-m).exp().ln_1p()
        } else {
            -m + m.exp().ln_1p()
        };
        // d/dz = -y * sigmoid(-m)
        let s = if m > 0.0 {
            let e = (-m).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + m.exp())
        };
        let g = -y * s;
        for (gj, &v) in grad[..d].iter_mut().zip(x.iter()) {
            *gj += g * v as f64;
        }
        grad[d] += g;
    }
    (loss, grad)
}

/// Fit by gradient descent with Armijo backtracking from zero. Returns the
/// parameters and the loss after every iteration.
pub fn fit_logistic(xs: &[&[f32]], ys: &[f64], dim: usize, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut params = vec![0.0; dim + 1];
    let (mut loss, mut grad) = logistic_loss_grad(&params, xs, ys, lambda);
    let mut history = vec![loss];
    let mut step = 1.0;
    for _ in 0..MAX_ITERATIONS {
        let norm2: f64 = grad.iter().map(|g| g * g).sum();
        if norm2.sqrt() < GRAD_TOLERANCE {
            break;
        }
        let mut t = step;
        loop {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - t * g).collect();
            let (trial_loss, trial_grad) = logistic_loss_grad(&trial, xs, ys, lambda);
            if trial_loss <= loss - 0.5 * t * norm2 {
                params = trial;
                loss = trial_loss;
                grad = trial_grad;
                // let the step grow back after a successful move
                step = t * 2.0;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return (params, history);
            }
        }
        history.push(loss);
    }
    (params, history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStep {
    pub step: usize,
    pub cumulative_positives: usize,
    pub cumulative_calls: usize,
}

/// Labeled rows and bookkeeping for one search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    /// `(table row, oracle verdict)` in acquisition order.
    pub labeled: Vec<(usize, bool)>,
    pub budget: usize,
    pub batch_size: usize,
    pub step: usize,
    pub trace: Vec<TraceStep>,
    in_s: Vec<bool>,
}

impl SearchState {
    pub fn new(rows: usize, budget: usize, batch_size: usize) -> Self {
        Self {
            labeled: Vec::new(),
            budget,
            batch_size: batch_size.max(1),
            step: 0,
            trace: Vec::new(),
            in_s: vec![false; rows],
        }
    }

    pub fn is_labeled(&self, row: usize) -> bool {
        self.in_s[row]
    }

    pub fn positives(&self) -> Vec<usize> {
        self.labeled.iter().filter(|l| l.1).map(|l| l.0).collect()
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget.saturating_sub(self.labeled.len())
    }

    /// Add one labeled batch and extend the trace.
    pub fn record(&mut self, batch: &[usize], verdicts: &[bool]) {
        for (&i, &v) in batch.iter().zip(verdicts) {
            debug_assert!(!self.in_s[i], "row {i} labeled twice");
            self.in_s[i] = true;
            self.labeled.push((i, v));
        }
        self.step += 1;
        let found = self.labeled.iter().filter(|l| l.1).count();
        self.trace.push(TraceStep {
            step: self.step,
            cumulative_positives: found,
            cumulative_calls: self.labeled.len(),
        });
    }

    /// `step,cumulative_positives,cumulative_calls` rows with a header.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "cumulative_positives", "cumulative_calls"])?;
        for t in &self.trace {
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

/// The `batch_size` unlabeled candidates with the highest score plus
/// noise, ties broken by row index.
pub fn acquire_batch(
    state: &SearchState,
    surrogate: &Surrogate,
    emb: &EmbeddingMatrix,
    candidates: &[usize],
    batch_size: usize,
    noise: Option<(f64, &mut ChaCha8Rng)>,
) -> Vec<usize> {
    let open: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| !state.is_labeled(i))
        .collect();
    let mut scores = surrogate.scores(emb, &open);
    if let Some((sigma, rng)) = noise {
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for s in scores.iter_mut() {
                *s += normal.sample(rng);
            }
        }
    }
    let mut ranked: Vec<(f64, usize)> = scores.into_iter().zip(open).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(batch_size);
    ranked.into_iter().map(|r| r.1).collect()
}

/// Fit the surrogate on the labeled set; stays untrained until there is
/// at least one positive and one negative.
pub fn refit(state: &SearchState, emb: &EmbeddingMatrix, previous: &Surrogate) -> Surrogate {
    let pos = state.labeled.iter().any(|l| l.1);
    let neg = state.labeled.iter().any(|l| !l.1);
    if !(pos && neg) {
        return previous.clone();
    }
    let xs: Vec<&[f32]> = state.labeled.iter().map(|l| emb.row(l.0)).collect();
    let ys: Vec<f64> = state
        .labeled
        .iter()
        .map(|l| if l.1 { 1.0 } else { -1.0 })
        .collect();
    let (params, _) = fit_logistic(&xs, &ys, emb.dim(), previous.lambda);
    let d = emb.dim();
    Surrogate {
        weights: params[..d].to_vec(),
        bias: params[d],
        trained: true,
        lambda: previous.lambda,
        seed: previous.seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub budget: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once this many positives are found.
    pub limit: Option<usize>,
    /// Scale of the Gaussian exploration noise, decayed by 0.9 per step.
    /// Zero disables it.
    pub exploration: f64,
    pub lambda: f64,
    pub parallelism: usize,
}

impl SearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            batch_size: 16,
            seed,
            limit: None,
            exploration: 0.0,
            lambda: DEFAULT_LAMBDA,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Rows judged positive, ascending.
    pub positives: Vec<usize>,
    pub state: SearchState,
    pub surrogate: Surrogate,
}

/// A search that hit an oracle error; the state so far is kept.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("retrieval aborted after {} oracle calls: {error}", state.labeled.len())]
pub struct SearchError {
    pub error: OracleError,
    pub state: SearchState,
}

/// Find rows among `candidates` satisfying `cond` with at most
/// `config.budget` oracle calls.
pub fn search(
    table: &Table,
    candidates: &[usize],
    cond: &Condition,
    oracle: &dyn Oracle,
    emb: &EmbeddingMatrix,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    search_with(candidates, emb, config, &|i| judge(oracle, table.view(i), cond))
}

/// [`search`] with the labeling function supplied by the caller, for
/// conditions that vary from row to row. Rows are table indices into `emb`.
///
/// When the budget covers every candidate the rows are simply scanned in
/// index order, so an early stop at `limit` keeps the first positives.
pub fn search_with(
    candidates: &[usize],
    emb: &EmbeddingMatrix,
    config: &SearchConfig,
    label: &(dyn Fn(usize) -> Result<bool, OracleError> + Sync),
) -> Result<SearchOutcome, SearchError> {
    let budget = config.budget.min(candidates.len());
    let mut state = SearchState::new(emb.rows(), budget, config.batch_size);
    let mut surrogate = Surrogate::untrained(emb.dim(), config.lambda, config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let exhaustive = config.budget >= candidates.len();
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    let mut cursor = 0;

    loop {
        let found = state.labeled.iter().filter(|l| l.1).count();
        let mut size = state.batch_size.min(state.remaining_budget());
        if let Some(limit) = config.limit {
            size = size.min(limit.saturating_sub(found));
        }
        if size == 0 {
            break;
        }
        let batch = if exhaustive {
            let b = sorted[cursor..(cursor + size).min(sorted.len())].to_vec();
            cursor += b.len();
            b
        } else {
            let sigma = config.exploration * 0.9f64.powi(state.step as i32);
            acquire_batch(
                &state,
                &surrogate,
                emb,
                candidates,
                size,
                Some((sigma, &mut noise_rng)),
            )
        };
        if batch.is_empty() {
            break;
        }
        let verdicts = match parallel_map(&batch, config.parallelism, |&i| label(i)) {
            Ok(v) => v,
            Err(error) => return Err(SearchError { error, state }),
        };
        state.record(&batch, &verdicts);
        if !exhaustive {
            surrogate = refit(&state, emb, &surrogate);
        }
    }
    let mut positives = state.positives();
    positives.sort_unstable();
    Ok(SearchOutcome {
        positives,
        state,
        surrogate,
    })
}
