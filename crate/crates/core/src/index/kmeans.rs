use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::dot;

/// Index of the centroid with the highest inner product; lowest index on ties.
pub(super) fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(centroid, &v[..dim]);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// The `n` centroids with the highest inner product, best first.
pub(super) fn nearest_n(centroids: &[f32], dim: usize, q: &[f32], n: usize) -> Vec<usize> {
    let mut scored: Vec<(f32, usize)> =
        centroids.chunks_exact(dim).map(|c| dot(c, q)).zip(0..).collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, c)| c).collect()
}

/// Spherical k-means seeded from `k` distinct records. Stops early once
/// assignments stop changing. Empty clusters keep their previous centroid.
pub(super) fn spherical_kmeans(
    vectors: &[f32],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> (Vec<f32>, Vec<usize>) {
    let n = vectors.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k * dim);
    for i in sample(&mut rng, n, k) {
        centroids.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
    }
    let assign = |centroids: &[f32]| -> Vec<usize> {
        vectors.chunks_exact(dim).map(|v| nearest(centroids, dim, v)).collect()
    };
    let mut assignment = assign(&centroids);
    for _ in 0..iters {
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (v, &c) in vectors.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(v) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            let sum = &sums[c * dim..(c + 1) * dim];
            let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            if counts[c] == 0 || norm == 0.0 {
                continue;
            }
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(sum) {
                *dst = (s / norm) as f32;
            }
        }
        let next = assign(&centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    (centroids, assignment)
}
