use super::{l2_sq, DIM};

/// Exact k-NN by linear scan.
pub(crate) fn search(vectors: &[f32], query: &[f32], k: usize) -> Vec<(f32, u32)> {
    let mut all: Vec<(f32, u32)> = vectors
        .chunks_exact(DIM)
        .enumerate()
        .map(|(i, v)| (l2_sq(v, query), i as u32))
        .collect();
    let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    all
}
