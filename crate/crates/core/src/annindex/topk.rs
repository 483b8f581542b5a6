use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Candidate ordered by `(squared distance, id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cand {
    pub dist: f32,
    pub id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the `k` smallest candidates.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Cand>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Current k-th squared distance, or infinity while not full.
    pub fn worst(&self) -> f32 {
        if self.is_full() {
            self.heap.peek().map_or(f32::INFINITY, |c| c.dist)
        } else {
            f32::INFINITY
        }
    }

    pub fn push(&mut self, dist: f32, id: u32) {
        let c = Cand { dist, id };
        if !self.is_full() {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Ascending `(squared distance, id)`.
    pub fn into_sorted(self) -> Vec<(f32, u32)> {
        self.heap.into_sorted_vec().into_iter().map(|c| (c.dist, c.id)).collect()
    }
}

/// Visited-id bitset so points shared by several trees are scored once.
pub(crate) struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    pub fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `id`; returns false if it was already marked.
    #[inline]
    pub fn insert(&mut self, id: u32) -> bool {
        let (w, b) = ((id / 64) as usize, id % 64);
        let was = self.bits[w] >> b & 1 == 1;
        self.bits[w] |= 1 << b;
        !was
    }
}

/// True when a branch with lower bound `bound` cannot improve the result.
/// The small relative slack absorbs rounding in incrementally updated bounds
/// so exhaustive searches stay exact.
#[inline]
pub(crate) fn prunable(bound: f32, worst: f32, epsilon: f32) -> bool {
    let scale = (1.0 + epsilon) * (1.0 + epsilon);
    bound * scale > worst * (1.0 + 1e-5)
}
