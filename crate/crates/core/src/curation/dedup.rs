use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CurationError;
use crate::math;

pub const KMEANS_MAX_ITER: usize = 50;
/// Largest centroid movement, in Euclidean distance, that counts as converged.
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d: f64 = p.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd's algorithm, seeded by sampling `k` distinct points. A cluster that
/// empties keeps its previous centroid.
pub fn kmeans<V: AsRef<[f64]>>(points: &[V], k: usize, seed: u64) -> Result<KMeans, CurationError> {
    let n = points.len();
    if k > n {
        return Err(CurationError::KTooLarge { k, count: n });
    }
    if k == 0 {
        return Err(CurationError::InvalidConfig("k must be at least 1".into()));
    }
    let dim = points[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(math::mix64(seed ^ 0x4b4d_4541));
    let mut init: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].as_ref().to_vec()).collect();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centroids)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(math::l2_distance(&next, &centroids[c]));
            centroids[c] = next;
        }
        assignment = points.iter().map(|p| nearest(p.as_ref(), &centroids)).collect();
        if moved <= KMEANS_TOLERANCE {
            break;
        }
    }
    Ok(KMeans { centroids, assignment, iterations })
}

fn near_duplicate(a: &[f64], b: &[f64], epsilon: f64) -> bool {
    a == b || 1.0 - math::dot(a, b) <= epsilon
}

/// Near-duplicate removal on unit embeddings; returns kept ids ascending.
///
/// Items are clustered with k-means, then each cluster is scanned in
/// ascending id order and an item is dropped when its cosine distance to an
/// already-kept member of the cluster is at most `epsilon`. A last pass over
/// the survivors applies the same rule across cluster boundaries, so the
/// kept set is pairwise further apart than `epsilon` and a second run
/// removes nothing.
pub fn semantic_dedup<S: AsRef<str>, V: AsRef<[f64]>>(
    ids: &[S],
    embeddings: &[V],
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<String>, CurationError> {
    if ids.len() != embeddings.len() {
        return Err(CurationError::LengthMismatch(ids.len(), embeddings.len()));
    }
    if !(epsilon >= 0.0) {
        return Err(CurationError::InvalidConfig("epsilon must be non-negative".into()));
    }
    if ids.is_empty() && k == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|a, b| ids[*a].as_ref().cmp(ids[*b].as_ref()));
    for w in order.windows(2) {
        if ids[w[0]].as_ref() == ids[w[1]].as_ref() {
            return Err(CurationError::DuplicateId(ids[w[0]].as_ref().into()));
        }
    }
    let sorted: Vec<&[f64]> = order.iter().map(|&i| embeddings[i].as_ref()).collect();
    let km = kmeans(&sorted, k, seed)?;

    let mut kept_in: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut keep = vec![false; sorted.len()];
    for (j, p) in sorted.iter().enumerate() {
        let c = km.assignment[j];
        if kept_in[c].iter().all(|&o| !near_duplicate(p, sorted[o], epsilon)) {
            kept_in[c].push(j);
            keep[j] = true;
        }
    }
    let mut survivors: Vec<usize> = Vec::new();
    for j in (0..sorted.len()).filter(|&j| keep[j]) {
        let c = km.assignment[j];
        if survivors.iter().all(|&o| km.assignment[o] == c || !near_duplicate(sorted[j], sorted[o], epsilon)) {
            survivors.push(j);
        }
    }
    Ok(survivors.into_iter().map(|j| ids[order[j]].as_ref().into()).collect())
}
