//! Boolean trees of predicates and their disjunctive normal form.

use super::UqlError;

/// Upper bound on the number of disjuncts `to_dnf` will produce.
pub const MAX_DISJUNCTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum BoolExpr<P> {
    Pred(P),
    And(Box<BoolExpr<P>>, Box<BoolExpr<P>>),
    Or(Box<BoolExpr<P>>, Box<BoolExpr<P>>),
}

impl<P> BoolExpr<P> {
    pub fn and(a: BoolExpr<P>, b: BoolExpr<P>) -> Self {
        BoolExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: BoolExpr<P>, b: BoolExpr<P>) -> Self {
        BoolExpr::Or(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, truth: &impl Fn(&P) -> bool) -> bool {
        match self {
            BoolExpr::Pred(p) => truth(p),
            BoolExpr::And(a, b) => a.eval(truth) && b.eval(truth),
            BoolExpr::Or(a, b) => a.eval(truth) || b.eval(truth),
        }
    }
}

/// An OR of ANDs. Both levels are nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct Dnf<P> {
    pub disjuncts: Vec<Vec<P>>,
}

impl<P> Dnf<P> {
    pub fn single(p: P) -> Self {
        Dnf {
            disjuncts: vec![vec![p]],
        }
    }

    pub fn eval(&self, truth: impl Fn(&P) -> bool) -> bool {
        self.disjuncts.iter().any(|c| c.iter().all(&truth))
    }

    pub fn predicates(&self) -> impl Iterator<Item = &P> {
        self.disjuncts.iter().flatten()
    }
}

/// Distribute AND over OR. Predicate order within each conjunction follows
/// source order.
pub fn to_dnf<P: Clone>(expr: &BoolExpr<P>) -> Result<Dnf<P>, UqlError> {
    let disjuncts = distribute(expr)?;
    Ok(Dnf { disjuncts })
}

fn distribute<P: Clone>(expr: &BoolExpr<P>) -> Result<Vec<Vec<P>>, UqlError> {
    let out = match expr {
        BoolExpr::Pred(p) => vec![vec![p.clone()]],
        BoolExpr::Or(a, b) => {
            let mut left = distribute(a)?;
            left.extend(distribute(b)?);
            left
        }
        BoolExpr::And(a, b) => {
            let left = distribute(a)?;
            let right = distribute(b)?;
            let n = left.len() * right.len();
            if n > MAX_DISJUNCTS {
                return Err(UqlError::TooComplex { disjuncts: n });
            }
            let mut out = Vec::with_capacity(n);
            for l in &left {
                for r in &right {
                    let mut conj = l.clone();
                    conj.extend(r.iter().cloned());
                    out.push(conj);
                }
            }
            out
        }
    };
    if out.len() > MAX_DISJUNCTS {
        return Err(UqlError::TooComplex {
            disjuncts: out.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: char) -> BoolExpr<char> {
        BoolExpr::Pred(c)
    }

    #[test]
    fn distribution_law() {
        let e = BoolExpr::and(BoolExpr::or(p('A'), p('B')), p('C'));
        assert_eq!(to_dnf(&e).unwrap().disjuncts, vec![vec!['A', 'C'], vec!['B', 'C']]);
    }

    #[test]
    fn identity() {
        assert_eq!(to_dnf(&p('P')).unwrap(), Dnf::single('P'));
    }

    #[test]
    fn blow_up_guard() {
        // (a|b) & (c|d) & ... over 7 factors yields 128 disjuncts
        let mut e = BoolExpr::or(p('a'), p('b'));
        for _ in 0..6 {
            e = BoolExpr::and(e, BoolExpr::or(p('a'), p('b')));
        }
        assert!(matches!(to_dnf(&e), Err(UqlError::TooComplex { disjuncts: 128 })));
    }
}
