//! Enumerate the kernel plans for a few queries and show the cost model's
//! choice.

use uqe::compiler::{enumerate_plans, explain, resolve, select_plan, CostParams, TableStats};
use uqe::model::{validate_table, ColumnSpec, Schema, Value, ValueType};
use uqe::uql::parse_query;

fn main() {
    let schema = Schema::new(vec![
        ColumnSpec::unstructured_text("review"),
        ColumnSpec::structured("movie_year", ValueType::Integer),
    ])
    .unwrap();
    let rows = (0..1000)
        .map(|i| vec![Value::UnstructuredText(format!("review {i}")), Value::Integer(1990 + i % 35)])
        .collect();
    let table = validate_table(schema, rows).unwrap();
    let queries = [
        "SELECT review FROM movie_reviews WHERE \"the review is positive\" LIMIT 10",
        "SELECT \"the tone of the review\" FROM movie_reviews WHERE movie_year < 2000",
        "SELECT tone, COUNT(*) FROM movie_reviews WHERE movie_year > 2010 GROUP BY \"the tone of the review\" AS tone",
        "SELECT \"the main complaint\" AS c, COUNT(*) FROM movie_reviews GROUP BY \"the genre\" AS g",
    ];
    let params = CostParams::default();
    for uql in queries {
        let q = resolve(&parse_query(uql).unwrap(), table.schema()).unwrap();
        let stats = TableStats::compute(&q, &table).unwrap();
        let plans = enumerate_plans(&q, &stats, &params);
        let chosen = select_plan(&plans).unwrap();
        println!("{uql}\n{}", explain(&plans, chosen, &stats));
    }
}
