use crate::model::Value;
use crate::uql::Dnf;

use super::{BoundFormula, BoundPredicate, CompileError};

/// A WHERE formula after its structured predicates are evaluated on one
/// row.
#[derive(Debug, Clone, PartialEq)]
pub enum Simplified {
    AlwaysTrue,
    AlwaysFalse,
    /// Only semantic atoms remain.
    Residual(Dnf<String>),
}

impl Simplified {
    pub fn needs_oracle(&self) -> bool {
        matches!(self, Simplified::Residual(_))
    }
}

fn compare_holds(cell: &Value, pred: &BoundPredicate) -> Result<bool, CompileError> {
    let BoundPredicate::Compare {
        column, op, value, ..
    } = pred
    else {
        unreachable!("semantic atoms are not compared");
    };
    if cell.is_null() {
        return Ok(false);
    }
    let ord = cell.compare(value).map_err(|_| CompileError::TypeMismatch {
        column: column.clone(),
        column_type: cell.value_type().expect("non-null"),
        literal: value.render(),
    })?;
    Ok(op.holds(ord))
}

/// Evaluate the structured predicates of `formula` on `cells`: a false
/// one drops its conjunction, a true one drops out of it. NULL cells make
/// a comparison false.
pub fn simplify_dnf(formula: &BoundFormula, cells: &[Value]) -> Result<Simplified, CompileError> {
    let mut residual: Vec<Vec<String>> = Vec::new();
    for conj in &formula.disjuncts {
        let mut atoms = Vec::new();
        let mut alive = true;
        for pred in conj {
            match pred {
                BoundPredicate::Semantic(t) => atoms.push(t.clone()),
                BoundPredicate::Compare { position, .. } => {
                    if !compare_holds(&cells[*position], pred)? {
                        alive = false;
                        break;
                    }
                }
            }
        }
        if !alive {
            continue;
        }
        if atoms.is_empty() {
            return Ok(Simplified::AlwaysTrue);
        }
        if !residual.contains(&atoms) {
            residual.push(atoms);
        }
    }
    if residual.is_empty() {
        Ok(Simplified::AlwaysFalse)
    } else {
        Ok(Simplified::Residual(Dnf {
            disjuncts: residual,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uql::CompareOp;

    fn year_lt(v: i64) -> BoundPredicate {
        BoundPredicate::Compare {
            column: "year".into(),
            position: 0,
            op: CompareOp::Lt,
            value: Value::Integer(v),
        }
    }

    fn sem(t: &str) -> BoundPredicate {
        BoundPredicate::Semantic(t.into())
    }

    #[test]
    fn false_structured_atom_drops_conjunction() {
        let f = Dnf {
            disjuncts: vec![vec![year_lt(2020), sem("P")]],
        };
        assert_eq!(simplify_dnf(&f, &[Value::Integer(2021)]).unwrap(), Simplified::AlwaysFalse);
    }

    #[test]
    fn true_structured_atom_is_removed() {
        let f = Dnf {
            disjuncts: vec![vec![year_lt(2020), sem("P")], vec![sem("Q")]],
        };
        let expected = Dnf {
            disjuncts: vec![vec!["P".to_string()], vec!["Q".to_string()]],
        };
        assert_eq!(
            simplify_dnf(&f, &[Value::Integer(2019)]).unwrap(),
            Simplified::Residual(expected)
        );
    }

    #[test]
    fn structured_only_is_decided() {
        let f = Dnf {
            disjuncts: vec![vec![year_lt(2020)]],
        };
        assert_eq!(simplify_dnf(&f, &[Value::Integer(1999)]).unwrap(), Simplified::AlwaysTrue);
        assert_eq!(simplify_dnf(&f, &[Value::Null]).unwrap(), Simplified::AlwaysFalse);
    }
}
