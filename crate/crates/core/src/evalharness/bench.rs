//! Indexing backend benchmark: build time, per-query latency, memory and
//! recall@1 against the brute-force oracle.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::annindex::{self, Backend, DescriptorRecord, IndexParams, Neighbor, DIM};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub backend: Backend,
    pub label: String,
    pub n: usize,
    pub build_s: f64,
    pub query_s_per_query: f64,
    pub memory_bytes: usize,
    pub recall_at_1: f64,
}

/// Builds each backend once and times `knn(q, 1)` over all queries,
/// single-threaded, taking the median of `reps` (at least 5) passes.
pub fn bench_backends(
    records: &[DescriptorRecord],
    queries: &[[f32; DIM]],
    backends: &[(Backend, IndexParams)],
    seed: u64,
    reps: usize,
) -> Result<Vec<BenchRow>> {
    let reps = reps.max(5);
    let oracle = annindex::build(records, Backend::Brute, &IndexParams::default(), seed)?;
    let truth: Vec<Vec<Neighbor>> = oracle.knn_batch(queries, 1);
    let mut rows = Vec::with_capacity(backends.len());
    for (backend, params) in backends {
        let index = annindex::build(records, *backend, params, seed)?;
        let stats = index.stats();
        let mut times = Vec::with_capacity(reps);
        let mut found: Vec<Vec<Neighbor>> = Vec::new();
        for _ in 0..reps {
            let start = Instant::now();
            found = queries.iter().map(|q| index.knn(q, 1)).collect::<Vec<_>>();
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        let hits = truth.iter().zip(&found).filter(|(t, f)| is_hit(t, f)).count();
        rows.push(BenchRow {
            backend: *backend,
            label: label(*backend, params),
            n: records.len(),
            build_s: stats.build_seconds,
            query_s_per_query: times[reps / 2] / queries.len().max(1) as f64,
            memory_bytes: stats.memory_bytes,
            recall_at_1: if queries.is_empty() { 1.0 } else { hits as f64 / queries.len() as f64 },
        });
    }
    Ok(rows)
}

/// Ties at the nearest distance count as hits.
fn is_hit(truth: &[Neighbor], found: &[Neighbor]) -> bool {
    match (truth.first(), found.first()) {
        (Some(t), Some(f)) => t.global_id == f.global_id || t.distance == f.distance,
        (None, None) => true,
        _ => false,
    }
}

pub fn label(backend: Backend, params: &IndexParams) -> String {
    match backend {
        Backend::KdForest => format!("kdforest({})", params.num_trees),
        Backend::Pq => match params.pq_rerank {
            Some(r) => format!("pq(rerank={r})"),
            None => "pq(rerank=all)".to_string(),
        },
        b => b.tag().to_string(),
    }
}

pub fn rows_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from("backend\tn\tbuild_s\tquery_s_per_query\tmemory_bytes\trecall_at_1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.9}\t{}\t{:.4}",
            r.label, r.n, r.build_s, r.query_s_per_query, r.memory_bytes, r.recall_at_1
        );
    }
    out
}

/// Mixture of anisotropic Gaussians in descriptor space. Each cluster has a
/// random orientation and a power-law spectrum `sigma_d = scale * (d+1)^-alpha`.
#[derive(Debug, Clone)]
pub struct MixedGaussian {
    centers: Vec<[f32; DIM]>,
    rotations: Vec<DMatrix<f64>>,
    sigmas: [f64; DIM],
}

impl MixedGaussian {
    pub const ALPHA: f64 = 0.5;
    pub const SCALE: f64 = 0.12;
    pub const CENTER_SPREAD: f64 = 0.25;

    pub fn new(clusters: usize, seed: u64) -> Self {
        Self::with_shape(clusters, Self::ALPHA, Self::SCALE, Self::CENTER_SPREAD, seed)
    }

    pub fn with_shape(clusters: usize, alpha: f64, scale: f64, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clusters = clusters.max(1);
        let centers = (0..clusters)
            .map(|_| {
                let mut c = [0f32; DIM];
                c.iter_mut().for_each(|x| *x = (gauss(&mut rng) * spread) as f32);
                c
            })
            .collect();
        let rotations = (0..clusters)
            .map(|_| DMatrix::from_fn(DIM, DIM, |_, _| gauss(&mut rng)).qr().q())
            .collect();
        let mut sigmas = [0f64; DIM];
        for (d, s) in sigmas.iter_mut().enumerate() {
            *s = scale * ((d + 1) as f64).powf(-alpha);
        }
        Self {
            centers,
            rotations,
            sigmas,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<[f32; DIM]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = nalgebra::DVector::<f64>::zeros(DIM);
        (0..n)
            .map(|_| {
                let c = rng.gen_range(0..self.centers.len());
                for (d, zd) in z.iter_mut().enumerate() {
                    *zd = gauss(&mut rng) * self.sigmas[d];
                }
                let y = &self.rotations[c] * &z;
                let mut v = self.centers[c];
                v.iter_mut().zip(y.iter()).for_each(|(a, b)| *a += *b as f32);
                v
            })
            .collect()
    }
}

/// `n` records drawn from a fresh mixture, grouped 100 per synthetic image.
pub fn mixed_gaussian_descriptors(n: usize, clusters: usize, seed: u64) -> Vec<DescriptorRecord> {
    to_records(&MixedGaussian::new(clusters, seed).sample(n, seed ^ 1))
}

pub fn to_records(vectors: &[[f32; DIM]]) -> Vec<DescriptorRecord> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| DescriptorRecord {
            global_id: i as u32,
            image_id: format!("g{:06}", i / 100),
            keypoint_ordinal: (i % 100) as u32,
            vector: *v,
        })
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_is_its_own_oracle() {
        let mix = MixedGaussian::new(8, 3);
        let recs = to_records(&mix.sample(2000, 1));
        let qs = mix.sample(50, 2);
        let rows = bench_backends(&recs, &qs, &[(Backend::Brute, IndexParams::default())], 0, 5).unwrap();
        assert_eq!(rows[0].recall_at_1, 1.0);
        assert!(rows[0].memory_bytes >= 2000 * DIM * 4);
    }

    #[test]
    fn memory_ordering_small() {
        let mix = MixedGaussian::new(16, 4);
        let recs = to_records(&mix.sample(5000, 1));
        let qs = mix.sample(20, 2);
        let forest = IndexParams {
            num_trees: 2,
            ..IndexParams::default()
        };
        let rows = bench_backends(
            &recs,
            &qs,
            &[
                (Backend::KdTree, IndexParams::default()),
                (Backend::KdForest, forest),
                (Backend::Pq, IndexParams::default()),
            ],
            0,
            5,
        )
        .unwrap();
        assert!(rows[2].memory_bytes < rows[0].memory_bytes);
        assert!(rows[0].memory_bytes < rows[1].memory_bytes);
        let tsv = rows_tsv(&rows);
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.contains("kdforest(2)"));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = mixed_gaussian_descriptors(300, 5, 9);
        let b = mixed_gaussian_descriptors(300, 5, 9);
        assert_eq!(a, b);
        assert_ne!(a, mixed_gaussian_descriptors(300, 5, 10));
    }
}
