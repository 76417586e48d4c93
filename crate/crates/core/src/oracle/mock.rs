use std::collections::{BTreeMap, HashMap};

use super::{
    stable_hash, Classification, Condition, Meter, Oracle, OracleError, RowRequest, RowResponse,
    Taxonomy,
};
use crate::model::RowView;

#[derive(Debug, Clone)]
struct Binding {
    column: String,
    value: String,
}

#[derive(Debug, Clone, Copy)]
struct Noise {
    rate: f64,
    seed: u64,
}

/// Ground-truth oracle that answers from hidden label columns.
///
/// Semantic atoms are bound to `(column, value)` pairs and hold when the
/// row's cell renders to that value. Unbound atoms fall back to a stable
/// hash of the atom and the row text, unless the oracle is strict.
///
/// With an error rate `r`, judgments are flipped along the Sturmian word
/// `floor((i+1)r + phi) - floor(i r + phi)` over row index `i`, with the
/// phase `phi` drawn from the seed and condition. Any sweep over rows
/// `0..N` therefore flips `floor(rN)` or `floor(rN) + 1` judgments.
#[derive(Debug)]
pub struct MockOracle {
    label_column: String,
    bindings: HashMap<String, Binding>,
    attributes: HashMap<String, String>,
    strict: bool,
    noise: Option<Noise>,
    meter: Meter,
}

impl MockOracle {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            bindings: HashMap::new(),
            attributes: HashMap::new(),
            strict: false,
            noise: None,
            meter: Meter::default(),
        }
    }

    /// The atom holds when the label column equals `value`.
    pub fn bind(self, atom: impl Into<String>, value: impl Into<String>) -> Self {
        let column = self.label_column.clone();
        self.bind_column(atom, column, value)
    }

    pub fn bind_column(
        mut self,
        atom: impl Into<String>,
        column: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        self.bindings.insert(
            atom.into(),
            Binding {
                column: column.into(),
                value: value.into(),
            },
        );
        self
    }

    /// Answer extraction, taxonomy and classification for `attribute` from
    /// `column` instead of the label column.
    pub fn attribute(mut self, attribute: impl Into<String>, column: impl Into<String>) -> Self {
        self.attributes.insert(attribute.into(), column.into());
        self
    }

    /// Reject unbound atoms instead of hashing them.
    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn with_error_rate(mut self, rate: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&rate), "error rate must lie in [0, 1]");
        self.noise = (rate > 0.0).then_some(Noise { rate, seed });
        self
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    fn cell_text(&self, row: RowView<'_>, column: &str) -> Result<String, OracleError> {
        row.get(column)
            .map(|v| v.render())
            .ok_or_else(|| OracleError::Unbound(format!("column `{column}` is not in the table")))
    }

    fn atom_holds(&self, row: RowView<'_>, atom: &str, sources: &[String]) -> Result<bool, OracleError> {
        match self.bindings.get(atom) {
            Some(b) => Ok(self.cell_text(row, &b.column)? == b.value),
            None if self.strict => Err(OracleError::Unbound(atom.to_string())),
            None => {
                let text = row.text_of(sources);
                let h = stable_hash(&[atom.as_bytes(), text.as_bytes()]);
                Ok(h & 1 == 1)
            }
        }
    }

    fn flipped(&self, index: usize, cond: &Condition) -> bool {
        let Some(noise) = self.noise else {
            return false;
        };
        let h = stable_hash(&[&noise.seed.to_le_bytes(), cond.text().as_bytes()]);
        let phase = (h >> 11) as f64 / (1u64 << 53) as f64;
        let i = index as f64;
        ((i + 1.0) * noise.rate + phase).floor() - (i * noise.rate + phase).floor() > 0.0
    }

    pub fn judge_row(&self, row: RowView<'_>, cond: &Condition) -> Result<bool, OracleError> {
        let mut any = false;
        for conj in &cond.clause().disjuncts {
            let mut all = true;
            for atom in conj {
                if !self.atom_holds(row, atom, cond.sources())? {
                    all = false;
                    break;
                }
            }
            if all {
                any = true;
                break;
            }
        }
        Ok(any ^ self.flipped(row.index, cond))
    }

    fn attribute_column(&self, attribute: &str) -> &str {
        self.attributes
            .get(attribute)
            .map(String::as_str)
            .unwrap_or(&self.label_column)
    }

    fn classify_row(&self, row: RowView<'_>, taxonomy: &Taxonomy) -> Result<Classification, OracleError> {
        let value = self.cell_text(row, self.attribute_column(taxonomy.attribute()))?;
        let cats = taxonomy.categories();
        let hit = cats
            .iter()
            .position(|c| c.label == value)
            .or_else(|| cats.iter().position(|c| c.label.eq_ignore_ascii_case(&value)));
        Ok(match hit {
            Some(i) => Classification {
                indices: vec![i],
                unmapped: false,
            },
            None => Classification {
                indices: vec![0],
                unmapped: true,
            },
        })
    }
}

impl Oracle for MockOracle {
    fn call(&self, row: RowView<'_>, request: &RowRequest<'_>) -> Result<RowResponse, OracleError> {
        let mut chars = row.text_of(&request.sources).len();
        chars += request.judge.map_or(0, |c| c.text().len());
        chars += request.extract.iter().map(String::len).sum::<usize>();
        chars += request
            .classify
            .iter()
            .flat_map(|t| t.categories())
            .map(|c| c.label.len())
            .sum::<usize>();
        self.meter.record(1, chars as u64);

        let verdict = request.judge.map(|c| self.judge_row(row, c)).transpose()?;
        let classes = request
            .classify
            .iter()
            .map(|t| self.classify_row(row, t))
            .collect::<Result<_, _>>()?;
        let extracted = request
            .extract
            .iter()
            .map(|a| self.cell_text(row, self.attribute_column(a)))
            .collect::<Result<_, _>>()?;
        Ok(RowResponse {
            verdict,
            classes,
            extracted,
        })
    }

    fn build_taxonomy(
        &self,
        rows: &[RowView<'_>],
        attribute: &str,
        sources: &[String],
        max_groups: usize,
    ) -> Result<Taxonomy, OracleError> {
        if rows.is_empty() {
            return Err(OracleError::EmptySample);
        }
        let chars: usize = rows.iter().map(|r| r.text_of(sources).len()).sum();
        self.meter.record(rows.len() as u64, (chars + attribute.len()) as u64);

        let column = self.attribute_column(attribute);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for row in rows {
            match row.get(column) {
                Some(v) if !v.is_null() => *counts.entry(v.render()).or_default() += 1,
                Some(_) => {}
                None => {
                    return Err(OracleError::Unbound(format!(
                        "column `{column}` is not in the table"
                    )))
                }
            }
        }
        let mut groups: Vec<(String, usize)> = counts.into_iter().collect();
        if groups.len() > max_groups.max(1) {
            groups.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            groups.truncate(max_groups.max(1));
            groups.sort_by(|a, b| a.0.cmp(&b.0));
        }
        if groups.is_empty() {
            return Err(OracleError::EmptySample);
        }
        Taxonomy::new(attribute, groups.into_iter().map(|g| g.0).collect())
    }

    fn meter(&self) -> &Meter {
        &self.meter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_table, ColumnSpec, Schema, Table, Value, ValueType};
    use crate::oracle::{classify, judge};

    fn reviews(labels: &[&str]) -> Table {
        let schema = Schema::new(vec![
            ColumnSpec::unstructured_text("review"),
            ColumnSpec::structured("sentiment", ValueType::Text),
        ])
        .unwrap();
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                vec![
                    Value::UnstructuredText(format!("review number {i}")),
                    Value::Text(l.to_string()),
                ]
            })
            .collect();
        validate_table(schema, rows).unwrap()
    }

    #[test]
    fn bound_condition_reads_label() {
        let t = reviews(&["positive", "negative"]);
        let oracle = MockOracle::new("sentiment").bind("the review is positive", "positive");
        let cond = Condition::new("the review is positive", vec!["review".into()]).unwrap();
        assert!(judge(&oracle, t.view(0), &cond).unwrap());
        assert!(!judge(&oracle, t.view(1), &cond).unwrap());
        assert_eq!(oracle.meter().snapshot().calls, 2);
    }

    #[test]
    fn strict_mock_rejects_unbound() {
        let t = reviews(&["positive"]);
        let oracle = MockOracle::new("sentiment").strict();
        let cond = Condition::new("something else", vec![]).unwrap();
        assert!(matches!(judge(&oracle, t.view(0), &cond), Err(OracleError::Unbound(_))));
    }

    #[test]
    fn taxonomy_is_distinct_labels() {
        let t = reviews(&["book", "cancel", "book"]);
        let oracle = MockOracle::new("sentiment");
        let rows: Vec<_> = (0..3).map(|i| t.view(i)).collect();
        let tax = oracle.build_taxonomy(&rows, "outcome", &[], 16).unwrap();
        let labels: Vec<_> = tax.categories().iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["book", "cancel"]);
        let c = classify(&oracle, t.view(1), &tax, &[]).unwrap();
        assert_eq!((c.indices, c.unmapped), (vec![1], false));
    }

    #[test]
    fn unknown_label_is_unmapped() {
        let t = reviews(&["book", "no_flight"]);
        let oracle = MockOracle::new("sentiment");
        let tax = Taxonomy::new("outcome", vec!["book".into(), "cancel".into()]).unwrap();
        let c = classify(&oracle, t.view(1), &tax, &[]).unwrap();
        assert_eq!((c.indices, c.unmapped), (vec![0], true));
    }

    #[test]
    fn taxonomy_keeps_most_frequent_groups() {
        let t = reviews(&["a", "b", "b", "c", "c", "c"]);
        let oracle = MockOracle::new("sentiment");
        let rows: Vec<_> = (0..6).map(|i| t.view(i)).collect();
        let tax = oracle.build_taxonomy(&rows, "x", &[], 2).unwrap();
        let labels: Vec<_> = tax.categories().iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["b", "c"]);
    }
}
