mod common;

use proptest::prelude::*;
use uqe::uql::{parse_query, to_dnf, BoolExpr, UqlError, MAX_DISJUNCTS};

#[test]
fn corpus_round_trips_through_display() {
    for (name, uql) in common::corpus_queries() {
        let q = parse_query(&uql).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_query(&q.to_string()).unwrap_or_else(|e| panic!("{name} reprinted: {e}"));
        assert_eq!(q, again, "{name}");
    }
}

#[test]
fn malformed_corpus_points_at_the_offending_byte() {
    for (uql, offset) in common::malformed_queries() {
        let e = parse_query(&uql).unwrap_err();
        assert_eq!(e.offset(), Some(offset), "{uql}: {e}");
    }
}

fn tree() -> impl Strategy<Value = BoolExpr<u8>> {
    let leaf = (0u8..6).prop_map(BoolExpr::Pred);
    leaf.prop_recursive(4, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| BoolExpr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| BoolExpr::or(a, b)),
        ]
    })
}

fn literal() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,4}".prop_map(|s| format!("\"{s}\""))
}

fn atom() -> impl Strategy<Value = String> {
    prop_oneof![
        literal(),
        (prop_oneof![Just("<"), Just("<="), Just(">"), Just(">="), Just("="), Just("!=")], 0i64..3000)
            .prop_map(|(op, v)| format!("year {op} {v}")),
    ]
}

fn condition() -> impl Strategy<Value = String> {
    proptest::collection::vec(atom(), 1..5).prop_flat_map(|atoms| {
        let n = atoms.len();
        proptest::collection::vec(prop_oneof![Just(" AND "), Just(" OR ")], n - 1).prop_map(move |ops| {
            let mut s = atoms[0].clone();
            for (op, a) in ops.iter().zip(&atoms[1..]) {
                s.push_str(op);
                s.push_str(a);
            }
            s
        })
    })
}

proptest! {
    #[test]
    fn dnf_matches_the_tree(t in tree(), bits in 0u8..64) {
        match to_dnf(&t) {
            Ok(dnf) => {
                let truth = |p: &u8| bits >> p & 1 == 1;
                prop_assert_eq!(t.eval(&truth), dnf.eval(truth));
                prop_assert!(dnf.disjuncts.iter().all(|c| !c.is_empty()));
            }
            Err(UqlError::TooComplex { disjuncts }) => prop_assert!(disjuncts > MAX_DISJUNCTS),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn generated_queries_round_trip(
        cond in condition(),
        limit in proptest::option::of(1usize..500),
        semantic_select in any::<bool>(),
    ) {
        let select = if semantic_select { "\"the tone of the review\" AS tone" } else { "review, year" };
        let mut uql = format!("SELECT {select} FROM reviews WHERE {cond}");
        if let Some(l) = limit {
            uql.push_str(&format!(" LIMIT {l}"));
        }
        let q = parse_query(&uql).map_err(|e| TestCaseError::fail(format!("{uql}: {e}")))?;
        prop_assert_eq!(&q, &parse_query(&q.to_string()).unwrap());
    }

    #[test]
    fn truncated_queries_never_panic(cut in 0usize..60) {
        let uql = "SELECT COUNT(*) AS n FROM reviews WHERE \"the review is positive\" LIMIT 5";
        let end = cut.min(uql.len());
        let _ = parse_query(&uql[..end]);
    }
}
