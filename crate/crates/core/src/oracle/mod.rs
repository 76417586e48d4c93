//! Semantic oracle: per-row judgment, attribute extraction, taxonomy
//! construction and classification, behind one metered interface.

mod llm;
mod mock;
mod prompts;
mod transport;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::model::RowView;
use crate::uql::Dnf;

pub use llm::{LlmConfig, LlmOracle};
pub use mock::MockOracle;
pub use prompts::{Prompt, PromptTemplates, TemplatePreset};
pub use transport::{HttpTransport, RecordedReply, RecordedTransport, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("oracle transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("condition `{0}` has no binding in the mock oracle")]
    Unbound(String),
    #[error("taxonomy needs at least one sampled row")]
    EmptySample,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("condition text is empty")]
    EmptyCondition,
}

/// A natural-language condition over a row, possibly a formula of several
/// semantic atoms left over after structured simplification.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    clause: Dnf<String>,
    sources: Vec<String>,
}

impl Condition {
    pub fn new(text: impl Into<String>, sources: Vec<String>) -> Result<Self, OracleError> {
        Self::from_dnf(Dnf::single(text.into()), sources)
    }

    pub fn from_dnf(clause: Dnf<String>, sources: Vec<String>) -> Result<Self, OracleError> {
        if clause.disjuncts.is_empty()
            || clause.disjuncts.iter().any(|c| c.is_empty())
            || clause.predicates().any(|a| a.trim().is_empty())
        {
            return Err(OracleError::EmptyCondition);
        }
        Ok(Self { clause, sources })
    }

    pub fn clause(&self) -> &Dnf<String> {
        &self.clause
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// The formula as one sentence, the form substituted into prompts.
    pub fn text(&self) -> String {
        let several = self.clause.disjuncts.len() > 1;
        self.clause
            .disjuncts
            .iter()
            .map(|conj| {
                let joined = conj.join(" and ");
                if several && conj.len() > 1 {
                    format!("({joined})")
                } else {
                    joined
                }
            })
            .collect::<Vec<_>>()
            .join(" or ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub index: usize,
    pub label: String,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    attribute: String,
    categories: Vec<Category>,
}

impl Taxonomy {
    pub fn new(attribute: impl Into<String>, labels: Vec<String>) -> Result<Self, OracleError> {
        if labels.is_empty() {
            return Err(OracleError::InvalidTaxonomy("no categories".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(OracleError::InvalidTaxonomy("empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(OracleError::InvalidTaxonomy(format!("duplicate label `{l}`")));
            }
        }
        let categories = labels
            .into_iter()
            .enumerate()
            .map(|(index, label)| Category {
                index,
                label,
                description: None,
            })
            .collect();
        Ok(Self {
            attribute: attribute.into(),
            categories,
        })
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.categories[index].label
    }
}

/// Result of classifying one row against a taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    /// Nonempty, ascending, in range.
    pub indices: Vec<usize>,
    /// Set when the row's answer matched no category and was assigned to a
    /// fallback.
    pub unmapped: bool,
}

impl Classification {
    pub fn primary(&self) -> usize {
        self.indices[0]
    }
}

/// Everything the engine wants to know about one row, answered in a single
/// oracle call. Fused kernels fill several parts at once.
#[derive(Debug, Clone, Default)]
pub struct RowRequest<'a> {
    pub judge: Option<&'a Condition>,
    pub classify: Vec<&'a Taxonomy>,
    pub extract: Vec<String>,
    /// Unstructured columns shown to the oracle.
    pub sources: Vec<String>,
}

impl RowRequest<'_> {
    pub fn is_empty(&self) -> bool {
        self.judge.is_none() && self.classify.is_empty() && self.extract.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowResponse {
    pub verdict: Option<bool>,
    pub classes: Vec<Classification>,
    pub extracted: Vec<String>,
}

/// Atomic usage counters shared by every backend.
#[derive(Debug, Default)]
pub struct Meter {
    calls: AtomicU64,
    rows: AtomicU64,
    prompt_chars: AtomicU64,
    retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeterSnapshot {
    /// Oracle invocations.
    pub calls: u64,
    /// Rows shown to the oracle; a taxonomy call counts every sampled row.
    pub rows: u64,
    pub prompt_chars: u64,
    pub retries: u64,
}

impl std::ops::Sub for MeterSnapshot {
    type Output = MeterSnapshot;

    fn sub(self, rhs: MeterSnapshot) -> MeterSnapshot {
        MeterSnapshot {
            calls: self.calls - rhs.calls,
            rows: self.rows - rhs.rows,
            prompt_chars: self.prompt_chars - rhs.prompt_chars,
            retries: self.retries - rhs.retries,
        }
    }
}

impl Meter {
    pub fn record(&self, rows: u64, prompt_chars: u64) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rows.fetch_add(rows, Ordering::Relaxed);
        self.prompt_chars.fetch_add(prompt_chars, Ordering::Relaxed);
    }

    pub fn record_retry(&self) {
        self.retries.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MeterSnapshot {
        MeterSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            rows: self.rows.load(Ordering::Relaxed),
            prompt_chars: self.prompt_chars.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }
}

/// A semantic oracle. Implementations must tolerate concurrent calls.
pub trait Oracle: Send + Sync {
    /// Answer every part of `request` for one row. Metered as one call.
    fn call(&self, row: RowView<'_>, request: &RowRequest<'_>) -> Result<RowResponse, OracleError>;

    /// Summarize `attribute` over a handful of rows into at most
    /// `max_groups` categories. Metered as one call over `rows.len()` rows.
    fn build_taxonomy(
        &self,
        rows: &[RowView<'_>],
        attribute: &str,
        sources: &[String],
        max_groups: usize,
    ) -> Result<Taxonomy, OracleError>;

    fn meter(&self) -> &Meter;
}

pub fn judge(oracle: &dyn Oracle, row: RowView<'_>, cond: &Condition) -> Result<bool, OracleError> {
    let request = RowRequest {
        judge: Some(cond),
        sources: cond.sources().to_vec(),
        ..Default::default()
    };
    let response = oracle.call(row, &request)?;
    response
        .verdict
        .ok_or_else(|| OracleError::Protocol("missing verdict".into()))
}

/// Extract several attributes from the same source columns in one call.
pub fn extract(
    oracle: &dyn Oracle,
    row: RowView<'_>,
    attributes: &[String],
    sources: &[String],
) -> Result<Vec<String>, OracleError> {
    let request = RowRequest {
        extract: attributes.to_vec(),
        sources: sources.to_vec(),
        ..Default::default()
    };
    Ok(oracle.call(row, &request)?.extracted)
}

pub fn classify(
    oracle: &dyn Oracle,
    row: RowView<'_>,
    taxonomy: &Taxonomy,
    sources: &[String],
) -> Result<Classification, OracleError> {
    let request = RowRequest {
        classify: vec![taxonomy],
        sources: sources.to_vec(),
        ..Default::default()
    };
    oracle
        .call(row, &request)?
        .classes
        .pop()
        .ok_or_else(|| OracleError::Protocol("missing classification".into()))
}

/// Map `f` over `items` on up to `parallelism` scoped threads, preserving
/// order. Returns the first error in item order.
pub fn parallel_map<I, O, E, F>(items: &[I], parallelism: usize, f: F) -> Result<Vec<O>, E>
where
    I: Sync,
    O: Send,
    E: Send,
    F: Fn(&I) -> Result<O, E> + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 || items.len() < 4 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let results: Vec<Result<Vec<O>, E>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<O>, E>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("oracle worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// FNV-1a, used where a stable hash across runs and platforms matters.
pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
