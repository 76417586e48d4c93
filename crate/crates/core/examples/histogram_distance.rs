//! Earth mover's distance between an estimated and a true label histogram,
//! next to the relative error and F1 metrics.

use std::collections::BTreeSet;

use uqe::embedding::HashingProvider;
use uqe::eval::{eval_emd, eval_f1, eval_relative_error};

fn main() {
    let h = |xs: &[(&str, f64)]| xs.iter().map(|(l, c)| (l.to_string(), *c)).collect::<Vec<_>>();
    let truth = h(&[("acting", 60.0), ("music", 19.0), ("pacing", 34.0), ("story", 46.0), ("visuals", 51.0)]);
    let close = h(&[("acting", 64.0), ("music", 15.0), ("pacing", 30.0), ("story", 50.0), ("visuals", 51.0)]);
    let renamed = h(&[("the acting", 60.0), ("soundtrack", 19.0), ("pacing", 34.0), ("plot", 46.0), ("visuals", 51.0)]);
    let embedder = HashingProvider::new(256);
    println!("identical:    {:.4}", eval_emd(&truth, &truth, &embedder).unwrap());
    println!("close counts: {:.4}", eval_emd(&close, &truth, &embedder).unwrap());
    println!("renamed:      {:.4}", eval_emd(&renamed, &truth, &embedder).unwrap());

    println!("relative error of 212 vs 200: {:.3}", eval_relative_error(212.0, 200.0).unwrap());
    let retrieved: BTreeSet<usize> = [1, 2, 3, 8].into();
    let relevant: BTreeSet<usize> = [1, 2, 5, 8, 9].into();
    println!("F1: {:.3}", eval_f1(&retrieved, &relevant));
}
