use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EmbeddingMatrix;

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOLERANCE: f64 = 1e-6;

/// A partition of the rows into nonempty clusters `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Clustering {
    /// Every row in one cluster.
    pub fn single(n: usize, dim: usize) -> Self {
        Self {
            k: 1,
            assignment: vec![0; n],
            sizes: vec![n],
            centroids: vec![vec![0.0; dim]],
        }
    }

    /// Build from an explicit assignment, renumbering labels densely in
    /// order of first appearance. Centroids are left empty.
    pub fn from_assignment(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        let mut sizes = Vec::new();
        for &l in labels {
            let next = map.len();
            let c = *map.entry(l).or_insert(next);
            if c == sizes.len() {
                sizes.push(0);
            }
            sizes[c] += 1;
            assignment.push(c);
        }
        Self {
            k: sizes.len(),
            assignment,
            sizes,
            centroids: Vec::new(),
        }
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Stops after 100 iterations or once no centroid moves more than 1e-6.
/// Clusters left empty are dropped and the rest renumbered, so the result
/// may have fewer than `k` clusters (always when there are fewer than `k`
/// distinct points).
pub fn cluster(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Clustering {
    let n = emb.rows();
    let d = emb.dim();
    assert!(k >= 1, "k must be positive");
    if n == 0 {
        return Clustering {
            k: 0,
            assignment: Vec::new(),
            sizes: Vec::new(),
            centroids: Vec::new(),
        };
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| emb.row(i).iter().map(|&x| x as f64).collect())
        .collect();
    if k == 1 {
        return finish(&points, vec![0; n], 1, d);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&points, k.min(n), &mut rng);
    let mut assignment = vec![0usize; n];
    let mut previous = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, dist) = nearest(p, &centroids);
            assignment[i] = best;
            objective += dist;
        }
        debug_assert!(
            objective <= previous * (1.0 + 1e-9) + 1e-12,
            "k-means objective increased: {previous} -> {objective}"
        );

        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(centroid, &updated).sqrt());
            *centroid = updated;
        }
        let after: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        debug_assert!(
            after <= objective * (1.0 + 1e-9) + 1e-12,
            "centroid update increased the objective: {objective} -> {after}"
        );
        previous = after;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }
    let k = centroids.len();
    finish(&points, assignment, k, d)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let dist = sq_dist(p, centroid);
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            // every point coincides with a chosen centroid
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in dist.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if dist[pick] <= 0.0 {
            pick = dist.iter().rposition(|&w| w > 0.0).expect("positive mass remains");
        }
        let chosen = points[pick].clone();
        for (dv, p) in dist.iter_mut().zip(points) {
            *dv = dv.min(sq_dist(p, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

/// Drop empty clusters, renumber, and recompute sizes and centroids.
fn finish(points: &[Vec<f64>], assignment: Vec<usize>, k: usize, d: usize) -> Clustering {
    let mut counts = vec![0usize; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for c in 0..k {
        if counts[c] > 0 {
            remap[c] = next;
            next += 1;
        }
    }
    let assignment: Vec<usize> = assignment.iter().map(|&c| remap[c]).collect();
    let mut sizes = vec![0usize; next];
    let mut centroids = vec![vec![0.0; d]; next];
    for (p, &c) in points.iter().zip(&assignment) {
        sizes[c] += 1;
        for (s, x) in centroids[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (centroid, &size) in centroids.iter_mut().zip(&sizes) {
        for s in centroid.iter_mut() {
            *s /= size as f64;
        }
    }
    Clustering {
        k: next,
        assignment,
        sizes,
        centroids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(points: &[[f32; 2]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(points.iter().map(|p| p.to_vec()).collect(), "test").unwrap()
    }

    #[test]
    fn k_one_is_single_cluster() {
        let c = cluster(&matrix(&[[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]]), 1, 7);
        assert_eq!((c.k, c.assignment, c.sizes), (1, vec![0, 0, 0], vec![3]));
    }

    #[test]
    fn k_reduced_to_distinct_points() {
        let c = cluster(&matrix(&[[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]), 3, 1);
        assert_eq!(c.k, 2);
        assert_eq!(c.sizes.iter().sum::<usize>(), 3);
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_ne!(c.assignment[0], c.assignment[2]);
    }

    #[test]
    fn from_assignment_renumbers() {
        let c = Clustering::from_assignment(&[7, 3, 7, 9]);
        assert_eq!((c.k, c.assignment, c.sizes), (3, vec![0, 1, 0, 2], vec![2, 1, 1]));
    }
}
