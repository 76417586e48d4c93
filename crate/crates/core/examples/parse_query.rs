//! Parse a query, print it back, classify it and normalize its WHERE clause.
//!
//! cargo run --example parse_query -- 'SELECT * FROM t WHERE "x" AND y > 1 OR "z"'

use uqe::uql::{classify, parse_query, WhereClause};

fn main() {
    let uql = std::env::args().nth(1).unwrap_or_else(|| {
        "SELECT review FROM movie_reviews\nWHERE movie_year >= 2010 AND \"the review is positive\" OR \"the review mentions the director\"\nLIMIT 20".into()
    });
    let query = match parse_query(&uql) {
        Ok(q) => q,
        Err(e) => {
            eprintln!("{e}");
            if let Some(at) = e.offset() {
                eprintln!("{}\n{}^", uql.replace('\n', " "), " ".repeat(uql[..at.min(uql.len())].chars().count()));
            }
            std::process::exit(1);
        }
    };
    println!("canonical: {query}");
    println!("class:     {}", classify(&query));
    if let Some(WhereClause { dnf, .. }) = &query.where_clause {
        for (i, conj) in dnf.disjuncts.iter().enumerate() {
            let atoms: Vec<String> = conj.iter().map(ToString::to_string).collect();
            println!("disjunct {}: {}", i + 1, atoms.join(" AND "));
        }
    }
}
