//! Nearest-neighbor indexes over 64-d descriptors.
//!
//! Five backends share one handle: exact brute force (the oracle),
//! randomized KD-trees (one tree, or a forest searched with a shared
//! best-bin-first queue), product quantization with exact re-ranking, and a
//! hierarchical k-means tree. Distances are squared L2 internally and
//! reported as L2. Neighbor lists are sorted by `(distance, global_id)`.

mod brute;
mod hkmeans;
mod io;
mod kdtree;
pub(crate) mod kmeans;
mod pq;
mod topk;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::{Error, Result};
use crate::features::{FeatureSet, DESCRIPTOR_LEN};

pub use io::{load_index, read_index, save_index, write_index};

pub const DIM: usize = DESCRIPTOR_LEN;

/// Squared Euclidean distance with a fixed accumulation order, so every
/// backend computes bit-identical values for the same pair.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub global_id: u32,
    pub image_id: String,
    pub keypoint_ordinal: u32,
    pub vector: [f32; DIM],
}

/// Flattens feature sets into records with dense global ids, in input order.
pub fn records_from_feature_sets<'a>(sets: impl IntoIterator<Item = &'a FeatureSet>) -> Vec<DescriptorRecord> {
    let mut out = Vec::new();
    for fs in sets {
        for (ordinal, d) in fs.descriptors.iter().enumerate() {
            out.push(DescriptorRecord {
                global_id: out.len() as u32,
                image_id: fs.image_id.clone(),
                keypoint_ordinal: ordinal as u32,
                vector: d.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub global_id: u32,
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Brute,
    KdTree,
    KdForest,
    Pq,
    HKMeans,
}

impl Backend {
    pub const ALL: [Backend; 5] = [
        Backend::Brute,
        Backend::KdTree,
        Backend::KdForest,
        Backend::Pq,
        Backend::HKMeans,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Backend::Brute => "brute",
            Backend::KdTree => "kdtree",
            Backend::KdForest => "kdforest",
            Backend::Pq => "pq",
            Backend::HKMeans => "hkmeans",
        }
    }

    fn code(self) -> u8 {
        match self {
            Backend::Brute => 0,
            Backend::KdTree => 1,
            Backend::KdForest => 2,
            Backend::Pq => 3,
            Backend::HKMeans => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.code() == code)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.tag() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParams(format!("unknown backend {s:?}")))
    }
}

/// Build and search parameters. Fields that do not apply to the chosen
/// backend are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    /// Leaf visits per query for tree backends; `None` searches exhaustively.
    #[serde(with = "unbounded")]
    pub max_leaf_checks: Option<usize>,
    /// Approximation slack: branches are pruned when their lower bound
    /// exceeds the current k-th distance divided by `1 + epsilon`.
    pub epsilon: f32,
    pub num_trees: usize,
    pub kd_leaf_size: usize,
    pub pq_subvectors: usize,
    pub pq_centroids: usize,
    pub pq_iterations: usize,
    /// ADC candidates re-ranked exactly, as a multiple of k; `None` re-ranks all N.
    #[serde(with = "unbounded")]
    pub pq_rerank: Option<usize>,
    /// Training sample size for the PQ codebooks.
    pub pq_train_size: usize,
    pub branching: usize,
    pub hk_leaf_size: usize,
    pub hk_iterations: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            max_leaf_checks: Some(256),
            epsilon: 0.0,
            num_trees: 2,
            kd_leaf_size: 8,
            pq_subvectors: 8,
            pq_centroids: 256,
            pq_iterations: 25,
            pq_rerank: Some(4),
            pq_train_size: 65_536,
            branching: 32,
            hk_leaf_size: 100,
            hk_iterations: 11,
        }
    }
}

impl IndexParams {
    /// Unbounded search: every backend becomes exact.
    pub fn exhaustive() -> Self {
        Self {
            max_leaf_checks: None,
            pq_rerank: None,
            ..Self::default()
        }
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidParams(format!("bad value {value:?} for {key}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let unbounded = matches!(value.trim(), "inf" | "all" | "none" | "unbounded");
        match key.trim() {
            "max_leaf_checks" | "checks" => {
                self.max_leaf_checks = if unbounded { None } else { Some(int()?) }
            }
            "epsilon" | "eps" => self.epsilon = value.trim().parse().map_err(|_| bad())?,
            "num_trees" | "trees" => self.num_trees = int()?,
            "kd_leaf_size" => self.kd_leaf_size = int()?,
            "m" | "pq_subvectors" => self.pq_subvectors = int()?,
            "ksub" | "pq_centroids" => self.pq_centroids = int()?,
            "pq_iterations" => self.pq_iterations = int()?,
            "rerank" | "pq_rerank" => self.pq_rerank = if unbounded { None } else { Some(int()?) },
            "pq_train_size" => self.pq_train_size = int()?,
            "branching" => self.branching = int()?,
            "leaf_size" | "hk_leaf_size" => self.hk_leaf_size = int()?,
            "hk_iterations" => self.hk_iterations = int()?,
            other => return Err(Error::InvalidParams(format!("unknown index parameter {other:?}"))),
        }
        Ok(())
    }

    fn validate(&self, backend: Backend) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return fail(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.max_leaf_checks == Some(0) {
            return fail("max_leaf_checks must be >= 1".into());
        }
        match backend {
            Backend::Brute => {}
            Backend::KdTree | Backend::KdForest => {
                if self.kd_leaf_size == 0 {
                    return fail("kd_leaf_size must be >= 1".into());
                }
                if backend == Backend::KdForest && self.num_trees == 0 {
                    return fail("num_trees must be >= 1".into());
                }
            }
            Backend::Pq => {
                let m = self.pq_subvectors;
                if m == 0 || DIM % m != 0 {
                    return fail(format!("pq subvector count {m} must divide {DIM}"));
                }
                if self.pq_centroids < 1 || self.pq_centroids > 65_536 {
                    return fail(format!("pq centroids must be in 1..=65536, got {}", self.pq_centroids));
                }
                if self.pq_rerank == Some(0) {
                    return fail("pq_rerank must be >= 1".into());
                }
                if self.pq_train_size == 0 {
                    return fail("pq_train_size must be >= 1".into());
                }
            }
            Backend::HKMeans => {
                if self.branching < 2 {
                    return fail(format!("branching must be >= 2, got {}", self.branching));
                }
                if self.hk_leaf_size == 0 {
                    return fail("hk_leaf_size must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// `None` is written as the string `"inf"`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_u64(*n as u64),
            None => s.serialize_str("inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(u64),
        S(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Some(n as usize)),
            Raw::S(s) if matches!(s.as_str(), "inf" | "all" | "none" | "unbounded") => Ok(None),
            Raw::S(s) => Err(serde::de::Error::custom(format!("expected a count or \"inf\", got {s:?}"))),
        }
    }
}

/// Maps global ids back to `(image, keypoint ordinal)`; image names are
/// interned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordTable {
    image_names: Vec<String>,
    image_of: Vec<u32>,
    ordinals: Vec<u32>,
}

impl RecordTable {
    pub fn len(&self) -> usize {
        self.image_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_of.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.image_names.len()
    }

    pub fn image_names(&self) -> &[String] {
        &self.image_names
    }

    /// Interned index of the image owning descriptor `global_id`.
    #[inline]
    pub fn image_index(&self, global_id: u32) -> u32 {
        self.image_of[global_id as usize]
    }

    pub fn image_id(&self, global_id: u32) -> &str {
        &self.image_names[self.image_index(global_id) as usize]
    }

    pub fn image_name(&self, image_index: u32) -> &str {
        &self.image_names[image_index as usize]
    }

    pub fn keypoint_ordinal(&self, global_id: u32) -> u32 {
        self.ordinals[global_id as usize]
    }

    fn push(&mut self, image_id: &str, ordinal: u32, lookup: &mut std::collections::HashMap<String, u32>) {
        let idx = *lookup.entry(image_id.to_string()).or_insert_with(|| {
            self.image_names.push(image_id.to_string());
            (self.image_names.len() - 1) as u32
        });
        self.image_of.push(idx);
        self.ordinals.push(ordinal);
    }

    fn memory_bytes(&self) -> usize {
        self.image_of.len() * 4
            + self.ordinals.len() * 4
            + self.image_names.iter().map(|s| s.len() + std::mem::size_of::<String>()).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Structure {
    Brute,
    Kd(kdtree::KdForest),
    Pq(pq::PqIndex),
    HKMeans(hkmeans::HkTree),
}

/// A built, immutable index. Safe to query from many threads at once.
#[derive(Debug, Clone)]
pub struct IndexHandle {
    backend: Backend,
    params: IndexParams,
    seed: u64,
    records: RecordTable,
    vectors: Vec<f32>,
    structure: Structure,
    build_seconds: f64,
}

/// Accounting estimate of owned buffers, not OS-level RSS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    /// Raw vectors held resident for searching.
    pub vectors: usize,
    pub records: usize,
    /// Tree nodes, permutations, centers or codebooks.
    pub structure: usize,
    /// PQ codes.
    pub codes: usize,
    /// Raw vectors kept only for PQ re-ranking; excluded from the total
    /// since they model an out-of-core store.
    pub rerank_store: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub backend: Backend,
    pub n: usize,
    pub memory_bytes: usize,
    pub breakdown: MemoryBreakdown,
    pub build_seconds: f64,
    pub params: IndexParams,
}

/// Builds an index. Records may come in any order but their global ids
/// must be exactly `0..N`.
pub fn build(records: &[DescriptorRecord], backend: Backend, params: &IndexParams, seed: u64) -> Result<IndexHandle> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no descriptor records"));
    }
    params.validate(backend)?;
    let start = Instant::now();
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| records[i].global_id);
    let mut table = RecordTable::default();
    let mut lookup = std::collections::HashMap::new();
    let mut vectors = Vec::with_capacity(n * DIM);
    for (expected, &i) in order.iter().enumerate() {
        let r = &records[i];
        if r.global_id as usize != expected {
            return Err(Error::InvalidParams(format!(
                "global ids must be dense in [0, {n}); missing or duplicate id near {}",
                r.global_id
            )));
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("record {} has non-finite components", r.global_id)));
        }
        table.push(&r.image_id, r.keypoint_ordinal, &mut lookup);
        vectors.extend_from_slice(&r.vector);
    }
    let structure = match backend {
        Backend::Brute => Structure::Brute,
        Backend::KdTree => Structure::Kd(kdtree::KdForest::build(&vectors, 1, params.kd_leaf_size, seed)),
        Backend::KdForest => Structure::Kd(kdtree::KdForest::build(
            &vectors,
            params.num_trees,
            params.kd_leaf_size,
            seed,
        )),
        Backend::Pq => Structure::Pq(pq::PqIndex::build(&vectors, params, seed)),
        Backend::HKMeans => Structure::HKMeans(hkmeans::HkTree::build(&vectors, params, seed)),
    };
    Ok(IndexHandle {
        backend,
        params: *params,
        seed,
        records: table,
        vectors,
        structure,
        build_seconds: start.elapsed().as_secs_f64(),
    })
}

impl IndexHandle {
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &RecordTable {
        &self.records
    }

    pub fn vector(&self, global_id: u32) -> &[f32] {
        let i = global_id as usize * DIM;
        &self.vectors[i..i + DIM]
    }

    /// The `k` nearest records, `k` capped at N.
    pub fn knn(&self, query: &[f32], k: usize) -> Vec<Neighbor> {
        self.knn_with(query, k, self.params.max_leaf_checks)
    }

    /// Like [`Self::knn`] with an explicit leaf-visit budget.
    pub fn knn_with(&self, query: &[f32], k: usize, max_leaf_checks: Option<usize>) -> Vec<Neighbor> {
        assert_eq!(query.len(), DIM, "query dimension");
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let raw = match &self.structure {
            Structure::Brute => brute::search(&self.vectors, query, k),
            Structure::Kd(f) => f.search(&self.vectors, query, k, max_leaf_checks, self.params.epsilon),
            Structure::Pq(p) => p.search(&self.vectors, query, k, self.params.pq_rerank),
            Structure::HKMeans(t) => t.search(&self.vectors, query, k, max_leaf_checks, self.params.epsilon),
        };
        raw.into_iter()
            .map(|(d, id)| Neighbor {
                global_id: id,
                distance: d.sqrt(),
            })
            .collect()
    }

    /// Element-wise [`Self::knn`], in query order.
    pub fn knn_batch<Q: AsRef<[f32]> + Sync>(&self, queries: &[Q], k: usize) -> Vec<Vec<Neighbor>> {
        crate::par::map(queries, |q| self.knn(q.as_ref(), k))
    }

    pub fn stats(&self) -> IndexStats {
        let vec_bytes = self.vectors.len() * std::mem::size_of::<f32>();
        let records = self.records.memory_bytes();
        let breakdown = match &self.structure {
            Structure::Brute => MemoryBreakdown {
                vectors: vec_bytes,
                records,
                structure: 0,
                codes: 0,
                rerank_store: 0,
            },
            Structure::Kd(f) => MemoryBreakdown {
                vectors: vec_bytes,
                records,
                structure: f.memory_bytes(),
                codes: 0,
                rerank_store: 0,
            },
            Structure::Pq(p) => MemoryBreakdown {
                vectors: 0,
                records,
                structure: p.codebook_bytes(),
                codes: p.code_bytes(),
                rerank_store: vec_bytes,
            },
            Structure::HKMeans(t) => MemoryBreakdown {
                vectors: vec_bytes,
                records,
                structure: t.memory_bytes(),
                codes: 0,
                rerank_store: 0,
            },
        };
        IndexStats {
            backend: self.backend,
            n: self.len(),
            memory_bytes: breakdown.vectors + breakdown.records + breakdown.structure + breakdown.codes,
            breakdown,
            build_seconds: self.build_seconds,
            params: self.params,
        }
    }
}

impl AsRef<[f32]> for crate::features::Descriptor {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[cfg(test)]
pub(crate) mod testdata {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Standard normal via Box-Muller.
    pub fn gauss(rng: &mut ChaCha8Rng) -> f32 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    pub fn gaussian_records(n: usize, seed: u64) -> Vec<DescriptorRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut v = [0f32; DIM];
                v.iter_mut().for_each(|x| *x = gauss(&mut rng));
                DescriptorRecord {
                    global_id: i as u32,
                    image_id: format!("img{}", i / 10),
                    keypoint_ordinal: (i % 10) as u32,
                    vector: v,
                }
            })
            .collect()
    }

    pub fn gaussian_queries(n: usize, seed: u64) -> Vec<[f32; DIM]> {
        gaussian_records(n, seed).into_iter().map(|r| r.vector).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::testdata::*;
    use super::*;

    fn exact(records: &[DescriptorRecord], q: &[f32], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<(f32, u32)> = records.iter().map(|r| (l2_sq(&r.vector, q), r.global_id)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter()
            .map(|(d, id)| Neighbor {
                global_id: id,
                distance: d.sqrt(),
            })
            .collect()
    }

    #[test]
    fn l2_matches_naive() {
        let r = gaussian_records(2, 1);
        let naive: f32 = r[0].vector.iter().zip(&r[1].vector).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((l2_sq(&r[0].vector, &r[1].vector) - naive).abs() < 1e-3);
        assert_eq!(l2_sq(&r[0].vector, &r[0].vector), 0.0);
    }

    #[test]
    fn single_record_every_backend() {
        let rec = gaussian_records(1, 2);
        let q = gaussian_queries(1, 3)[0];
        let expected = l2_sq(&rec[0].vector, &q).sqrt();
        for b in Backend::ALL {
            let idx = build(&rec, b, &IndexParams::default(), 1).unwrap();
            let res = idx.knn(&q, 5);
            assert_eq!(res.len(), 1, "{b}");
            assert_eq!(res[0].global_id, 0);
            assert!((res[0].distance - expected).abs() < 1e-5, "{b}");
        }
    }

    #[test]
    fn invalid_params_and_empty_input() {
        let rec = gaussian_records(10, 2);
        let p = IndexParams {
            pq_subvectors: 7,
            ..IndexParams::default()
        };
        assert!(matches!(build(&rec, Backend::Pq, &p, 0), Err(Error::InvalidParams(_))));
        let p = IndexParams {
            branching: 1,
            ..IndexParams::default()
        };
        assert!(matches!(build(&rec, Backend::HKMeans, &p, 0), Err(Error::InvalidParams(_))));
        assert!(matches!(build(&[], Backend::Brute, &IndexParams::default(), 0), Err(Error::EmptyInput(_))));
        let mut gap = gaussian_records(3, 1);
        gap[2].global_id = 7;
        assert!(build(&gap, Backend::Brute, &IndexParams::default(), 0).is_err());
    }

    #[test]
    fn exact_query_and_full_k() {
        let rec = gaussian_records(300, 4);
        let idx = build(&rec, Backend::Brute, &IndexParams::default(), 0).unwrap();
        let hit = idx.knn(&rec[123].vector, 3);
        assert_eq!(hit[0].global_id, 123);
        assert_eq!(hit[0].distance, 0.0);
        let all = idx.knn(&rec[0].vector, 10_000);
        assert_eq!(all.len(), 300);
        assert!(all.windows(2).all(|w| (w[0].distance, w[0].global_id) < (w[1].distance, w[1].global_id)));
    }

    #[test]
    fn exhaustive_search_equals_brute_force() {
        let rec = gaussian_records(2000, 5);
        let queries = gaussian_queries(40, 6);
        for b in Backend::ALL {
            let idx = build(&rec, b, &IndexParams::exhaustive(), 9).unwrap();
            for q in &queries {
                assert_eq!(idx.knn(q, 7), exact(&rec, q, 7), "{b}");
            }
        }
    }

    #[test]
    fn kdforest_recall_on_small_gaussian_set() {
        let rec = gaussian_records(1000, 7);
        let idx = build(&rec, Backend::KdForest, &IndexParams::default(), 3).unwrap();
        let queries = gaussian_queries(100, 8);
        let hits = queries
            .iter()
            .filter(|q| idx.knn(&q[..], 1)[0].global_id == exact(&rec, &q[..], 1)[0].global_id)
            .count();
        assert!(hits >= 90, "recall@1 = {hits}/100");
    }

    #[test]
    fn builds_are_deterministic() {
        let rec = gaussian_records(3000, 10);
        let queries = gaussian_queries(100, 11);
        for b in Backend::ALL {
            let a = build(&rec, b, &IndexParams::default(), 42).unwrap();
            let c = build(&rec, b, &IndexParams::default(), 42).unwrap();
            for q in &queries {
                assert_eq!(a.knn(q, 5), c.knn(q, 5), "{b}");
            }
        }
    }

    #[test]
    fn batch_matches_single_queries() {
        let rec = gaussian_records(1500, 12);
        let idx = build(&rec, Backend::KdForest, &IndexParams::default(), 1).unwrap();
        let queries = gaussian_queries(50, 13);
        let batch = idx.knn_batch(&queries, 5);
        assert_eq!(batch.len(), 50);
        for (q, got) in queries.iter().zip(&batch) {
            assert_eq!(&idx.knn(q, 5), got);
        }
        let empty: Vec<[f32; DIM]> = Vec::new();
        assert!(idx.knn_batch(&empty, 5).is_empty());
        assert_eq!(idx.knn_batch(&queries[..1], 5)[0], idx.knn(&queries[0], 5));
    }

    #[test]
    fn epsilon_zero_unbounded_rank_one_is_exact() {
        let rec = gaussian_records(2500, 14);
        let p = IndexParams {
            max_leaf_checks: None,
            epsilon: 0.0,
            ..IndexParams::default()
        };
        let queries = gaussian_queries(30, 15);
        for b in [Backend::KdTree, Backend::KdForest] {
            let idx = build(&rec, b, &p, 2).unwrap();
            for q in &queries {
                assert_eq!(idx.knn(q, 1)[0].distance, exact(&rec, q, 1)[0].distance);
            }
        }
    }

    #[test]
    fn positive_epsilon_respects_bound() {
        let rec = gaussian_records(2500, 16);
        let p = IndexParams {
            max_leaf_checks: None,
            epsilon: 0.5,
            ..IndexParams::default()
        };
        let idx = build(&rec, Backend::KdTree, &p, 2).unwrap();
        for q in &gaussian_queries(30, 17) {
            let got = idx.knn(q, 1)[0].distance;
            let best = exact(&rec, q, 1)[0].distance;
            assert!(got <= 1.5 * best * (1.0 + 1e-5), "{got} vs {best}");
        }
    }

    #[test]
    fn memory_accounting() {
        let rec = gaussian_records(5000, 18);
        let stats = |b| build(&rec, b, &IndexParams::default(), 1).unwrap().stats();
        let brute = stats(Backend::Brute);
        assert!(brute.memory_bytes >= 5000 * 64 * 4);
        let pq = stats(Backend::Pq);
        assert_eq!(pq.breakdown.codes, 5000 * 8);
        let kd = stats(Backend::KdTree);
        let forest = stats(Backend::KdForest);
        assert!(forest.memory_bytes > kd.memory_bytes);
        assert!(kd.memory_bytes >= 5000 * 64 * 4);
        assert!(pq.memory_bytes < kd.memory_bytes);
    }

    #[test]
    fn params_parse() {
        let mut p = IndexParams::default();
        p.set("checks", "inf").unwrap();
        p.set("m", "16").unwrap();
        p.set("rerank", "all").unwrap();
        assert_eq!(p.max_leaf_checks, None);
        assert_eq!(p.pq_subvectors, 16);
        assert_eq!(p.pq_rerank, None);
        assert!(p.set("bogus", "1").is_err());
        assert!(p.set("trees", "x").is_err());
        assert_eq!("KDForest".parse::<Backend>().unwrap(), Backend::KdForest);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_records() -> impl Strategy<Value = Vec<DescriptorRecord>> {
            prop::collection::vec(prop::collection::vec(-1.0f32..1.0, DIM), 1..120).prop_map(|vs| {
                vs.into_iter()
                    .enumerate()
                    .map(|(i, v)| DescriptorRecord {
                        global_id: i as u32,
                        image_id: format!("i{}", i % 7),
                        keypoint_ordinal: (i / 7) as u32,
                        vector: v.try_into().unwrap(),
                    })
                    .collect()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn lists_are_sorted_unique_and_exhaustive_is_exact(
                recs in arb_records(),
                q in prop::collection::vec(-1.0f32..1.0, DIM),
                k in 1usize..12,
                seed in 0u64..1000,
            ) {
                let brute = build(&recs, Backend::Brute, &IndexParams::default(), seed).unwrap();
                let want = brute.knn(&q, k);
                prop_assert_eq!(want.len(), k.min(recs.len()));
                for backend in Backend::ALL {
                    let params = IndexParams { pq_centroids: 16, branching: 4, hk_leaf_size: 8, ..IndexParams::exhaustive() };
                    let idx = build(&recs, backend, &params, seed).unwrap();
                    let got = idx.knn(&q, k);
                    prop_assert!(got.windows(2).all(|w| (w[0].distance, w[0].global_id) < (w[1].distance, w[1].global_id)));
                    prop_assert_eq!(&got, &want, "{:?}", backend);
                    let bounded = build(&recs, backend, &IndexParams { pq_centroids: 16, ..IndexParams::default() }, seed).unwrap().knn(&q, k);
                    let mut ids: Vec<u32> = bounded.iter().map(|n| n.global_id).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), bounded.len());
                    prop_assert!(bounded.windows(2).all(|w| w[0].distance <= w[1].distance));
                }
            }
        }
    }
}
