//! Product quantization with asymmetric distance computation.
//!
//! Vectors are split into `m` sub-vectors, each encoded by the index of its
//! nearest centroid in a per-subspace codebook. A query builds an
//! `m x ksub` table of sub-distances and scores every code by table lookups;
//! the best `rerank * k` candidates are then re-scored exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{kmeans, nearest};
use super::{l2_sq, IndexParams, DIM};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Codes {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl Codes {
    #[inline]
    pub fn get(&self, i: usize) -> usize {
        match self {
            Codes::U8(c) => c[i] as usize,
            Codes::U16(c) => c[i] as usize,
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Codes::U8(c) => c.len(),
            Codes::U16(c) => c.len() * 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PqIndex {
    pub n: usize,
    pub m: usize,
    /// Centroids actually trained per subspace (capped by the training set size).
    pub ksub: usize,
    /// `m * ksub * dsub` codebook entries.
    pub codebooks: Vec<f32>,
    /// `n * m` codes, row-major.
    pub codes: Codes,
}

impl PqIndex {
    pub fn build(vectors: &[f32], params: &IndexParams, seed: u64) -> Self {
        let n = vectors.len() / DIM;
        let m = params.pq_subvectors;
        let dsub = DIM / m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train: Vec<usize> = if n > params.pq_train_size {
            let mut ids = rand::seq::index::sample(&mut rng, n, params.pq_train_size).into_vec();
            ids.sort_unstable();
            ids
        } else {
            (0..n).collect()
        };
        let ksub = params.pq_centroids.min(train.len());
        let books: Vec<Vec<f32>> = (0..m)
            .map(|s| {
                let sub: Vec<f32> = train
                    .iter()
                    .flat_map(|&i| vectors[i * DIM + s * dsub..i * DIM + (s + 1) * dsub].iter().copied())
                    .collect();
                let mut sub_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + s as u64));
                kmeans(&sub, dsub, ksub, params.pq_iterations, &mut sub_rng).centroids
            })
            .collect();
        let codebooks: Vec<f32> = books.concat();
        let encoded: Vec<Vec<u32>> = crate::par::map_range(n, |i| {
            (0..m)
                .map(|s| {
                    let book = &codebooks[s * ksub * dsub..(s + 1) * ksub * dsub];
                    nearest(book, dsub, &vectors[i * DIM + s * dsub..i * DIM + (s + 1) * dsub]).0
                })
                .collect()
        });
        let flat = encoded.into_iter().flatten();
        let codes = if ksub <= 256 {
            Codes::U8(flat.map(|c| c as u8).collect())
        } else {
            Codes::U16(flat.map(|c| c as u16).collect())
        };
        Self {
            n,
            m,
            ksub,
            codebooks,
            codes,
        }
    }

    pub fn code_bytes(&self) -> usize {
        self.codes.bytes()
    }

    pub fn codebook_bytes(&self) -> usize {
        self.codebooks.len() * 4
    }

    fn distance_table(&self, query: &[f32]) -> Vec<f32> {
        let dsub = DIM / self.m;
        let mut table = vec![0f32; self.m * self.ksub];
        for s in 0..self.m {
            let q = &query[s * dsub..(s + 1) * dsub];
            let book = &self.codebooks[s * self.ksub * dsub..(s + 1) * self.ksub * dsub];
            for (c, cen) in book.chunks_exact(dsub).enumerate() {
                table[s * self.ksub + c] = l2_sq(q, cen);
            }
        }
        table
    }

    /// ADC estimates for every code, in id order.
    pub fn adc_all(&self, query: &[f32]) -> Vec<f32> {
        let table = self.distance_table(query);
        (0..self.n)
            .map(|i| {
                let mut d = 0f32;
                for s in 0..self.m {
                    d += table[s * self.ksub + self.codes.get(i * self.m + s)];
                }
                d
            })
            .collect()
    }

    pub fn search(&self, vectors: &[f32], query: &[f32], k: usize, rerank: Option<usize>) -> Vec<(f32, u32)> {
        let adc = self.adc_all(query);
        let n = adc.len();
        let depth = rerank.map_or(n, |r| r.saturating_mul(k).min(n)).max(k.min(n));
        let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let mut cand: Vec<(f32, u32)> = adc.into_iter().enumerate().map(|(i, d)| (d, i as u32)).collect();
        if depth < n {
            cand.select_nth_unstable_by(depth - 1, cmp);
            cand.truncate(depth);
        }
        let mut exact: Vec<(f32, u32)> = cand
            .into_iter()
            .map(|(_, id)| {
                let i = id as usize * DIM;
                (l2_sq(&vectors[i..i + DIM], query), id)
            })
            .collect();
        exact.sort_unstable_by(cmp);
        exact.truncate(k);
        exact
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::testdata::gaussian_records;

    #[test]
    fn codes_reconstruct_nearest_centroids() {
        let rec = gaussian_records(600, 21);
        let v: Vec<f32> = rec.iter().flat_map(|r| r.vector).collect();
        let p = IndexParams {
            pq_centroids: 16,
            pq_subvectors: 4,
            ..IndexParams::default()
        };
        let pq = PqIndex::build(&v, &p, 3);
        assert_eq!(pq.code_bytes(), 600 * 4);
        let adc = pq.adc_all(&v[..DIM]);
        // ADC against itself equals the quantization error of vector 0.
        let dsub = 16;
        let mut qerr = 0f32;
        for s in 0..4 {
            let c = pq.codes.get(s);
            let cen = &pq.codebooks[(s * 16 + c) * dsub..(s * 16 + c + 1) * dsub];
            qerr += l2_sq(&v[s * dsub..(s + 1) * dsub], cen);
        }
        assert!((adc[0] - qerr).abs() < 1e-4);
    }

    #[test]
    fn wide_codebooks_use_u16() {
        let rec = gaussian_records(700, 22);
        let v: Vec<f32> = rec.iter().flat_map(|r| r.vector).collect();
        let p = IndexParams {
            pq_centroids: 300,
            pq_iterations: 3,
            ..IndexParams::default()
        };
        let pq = PqIndex::build(&v, &p, 1);
        assert!(matches!(pq.codes, Codes::U16(_)));
        assert_eq!(pq.code_bytes(), 700 * 8 * 2);
    }
}
