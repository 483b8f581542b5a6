//! Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded from
//! the point farthest from its centroid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::l2_sq;

#[derive(Debug, Clone)]
pub(crate) struct KMeans {
    /// `k * dim` centroid coordinates.
    pub centroids: Vec<f32>,
    pub assignment: Vec<u32>,
    pub k: usize,
}

/// Clusters `points` (`n * dim`, row-major). `k` is capped at `n`.
pub(crate) fn kmeans(points: &[f32], dim: usize, k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let n = points.len() / dim;
    assert!(n > 0, "kmeans on empty input");
    let k = k.min(n).max(1);
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = seed_plus_plus(points, dim, k, rng);
    let mut assignment = vec![u32::MAX; n];
    let mut dists = vec![0f32; n];
    for _ in 0..iterations.max(1) {
        let assigned = crate::par::map_range(n, |i| nearest(&centroids, dim, row(i)));
        let mut changed = false;
        for (i, (c, d)) in assigned.into_iter().enumerate() {
            if assignment[i] != c {
                changed = true;
                assignment[i] = c;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i] as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i] as usize] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[assignment[i] as usize] -= 1;
                    let old = assignment[i] as usize;
                    for (s, &x) in sums[old * dim..(old + 1) * dim].iter_mut().zip(row(i)) {
                        *s -= x as f64;
                    }
                    assignment[i] = c as u32;
                    dists[i] = 0.0;
                    counts[c] = 1;
                    for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                        *s = x as f64;
                    }
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = (s / counts[c] as f64) as f32;
                }
            }
        }
    }
    // Final assignment against the final centroids.
    let assigned = crate::par::map_range(n, |i| nearest(&centroids, dim, row(i)).0);
    KMeans {
        centroids,
        assignment: assigned,
        k,
    }
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
#[inline]
pub(crate) fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (u32, f32) {
    let mut best = (0u32, f32::INFINITY);
    for (c, cen) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(cen, x);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| l2_sq(row(i), row(first)) as f64).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        let c = centroids[start..].to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = l2_sq(row(i), &c) as f64;
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}
