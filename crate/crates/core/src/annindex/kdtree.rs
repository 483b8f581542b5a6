//! Randomized KD-trees searched best-bin-first.
//!
//! Each split picks one of the five highest-variance dimensions at random
//! (the single highest when there is only one tree) and splits at the median.
//! All trees of a forest share one priority queue during search, so the leaf
//! budget is spent where the bounds are tightest across trees.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::topk::{prunable, TopK, Visited};
use super::{l2_sq, DIM};

const RANDOM_DIMS: usize = 5;
const LEAF: u32 = u32::MAX;

/// Inner node: `dim`, `split`, children `a` (low side) and `b`.
/// Leaf: `dim == LEAF`, points `perm[a..b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Node {
    pub dim: u32,
    pub split: f32,
    pub a: u32,
    pub b: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KdTree {
    pub nodes: Vec<Node>,
    pub perm: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KdForest {
    pub trees: Vec<KdTree>,
    pub leaf_size: usize,
}

impl KdForest {
    pub fn build(vectors: &[f32], num_trees: usize, leaf_size: usize, seed: u64) -> Self {
        let randomized = num_trees > 1;
        let trees = crate::par::map_range(num_trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(t as u64 + 1)));
            KdTree::build(vectors, leaf_size, randomized, &mut rng)
        });
        Self { trees, leaf_size }
    }

    pub fn memory_bytes(&self) -> usize {
        self.trees
            .iter()
            .map(|t| t.nodes.len() * std::mem::size_of::<Node>() + t.perm.len() * 4)
            .sum()
    }

    pub fn search(
        &self,
        vectors: &[f32],
        query: &[f32],
        k: usize,
        max_leaf_checks: Option<usize>,
        epsilon: f32,
    ) -> Vec<(f32, u32)> {
        let n = vectors.len() / DIM;
        let mut s = Search {
            vectors,
            query,
            epsilon,
            max_checks: max_leaf_checks.unwrap_or(usize::MAX),
            checks: 0,
            top: TopK::new(k),
            visited: Visited::new(n),
            heap: BinaryHeap::new(),
            offsets: Vec::new(),
            track_visits: self.trees.len() > 1,
        };
        for (t, tree) in self.trees.iter().enumerate() {
            let slot = s.new_slot(None);
            s.descend(tree, t as u32, 0, 0.0, slot);
        }
        while let Some(b) = s.heap.pop() {
            if s.checks >= s.max_checks && s.top.is_full() {
                break;
            }
            if prunable(b.bound, s.top.worst(), epsilon) {
                break;
            }
            let tree = &self.trees[b.tree as usize];
            s.descend(tree, b.tree, b.node, b.bound, b.slot);
        }
        s.top.into_sorted()
    }
}

impl KdTree {
    fn build(vectors: &[f32], leaf_size: usize, randomized: bool, rng: &mut ChaCha8Rng) -> Self {
        let n = vectors.len() / DIM;
        let mut tree = KdTree {
            nodes: Vec::with_capacity(2 * n / leaf_size.max(1) + 1),
            perm: (0..n as u32).collect(),
        };
        tree.nodes.push(Node {
            dim: LEAF,
            split: 0.0,
            a: 0,
            b: n as u32,
        });
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            if hi - lo <= leaf_size {
                continue;
            }
            let Some(dim) = pick_dim(vectors, &tree.perm[lo..hi], randomized, rng) else {
                continue;
            };
            let slice = &mut tree.perm[lo..hi];
            let mid = slice.len() / 2;
            let key = |i: &u32| vectors[*i as usize * DIM + dim];
            slice.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
            let split = key(&slice[mid]);
            let left = tree.nodes.len() as u32;
            tree.nodes.push(Node {
                dim: LEAF,
                split: 0.0,
                a: lo as u32,
                b: (lo + mid) as u32,
            });
            tree.nodes.push(Node {
                dim: LEAF,
                split: 0.0,
                a: (lo + mid) as u32,
                b: hi as u32,
            });
            tree.nodes[node] = Node {
                dim: dim as u32,
                split,
                a: left,
                b: left + 1,
            };
            stack.push((left as usize + 1, lo + mid, hi));
            stack.push((left as usize, lo, lo + mid));
        }
        tree
    }
}

/// Highest-variance dimension, or a random one among the top five when
/// `randomized`. `None` when all points coincide.
fn pick_dim(vectors: &[f32], ids: &[u32], randomized: bool, rng: &mut ChaCha8Rng) -> Option<usize> {
    let mut mean = [0f64; DIM];
    let mut sq = [0f64; DIM];
    for &i in ids {
        let v = &vectors[i as usize * DIM..(i as usize + 1) * DIM];
        for d in 0..DIM {
            let x = v[d] as f64;
            mean[d] += x;
            sq[d] += x * x;
        }
    }
    let n = ids.len() as f64;
    let mut var: Vec<(f64, usize)> = (0..DIM)
        .map(|d| {
            let m = mean[d] / n;
            ((sq[d] / n - m * m).max(0.0), d)
        })
        .filter(|&(v, _)| v > 0.0)
        .collect();
    if var.is_empty() {
        return None;
    }
    var.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let pick = if randomized {
        rng.gen_range(0..var.len().min(RANDOM_DIMS))
    } else {
        0
    };
    Some(var[pick].1)
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    bound: f32,
    tree: u32,
    node: u32,
    slot: u32,
}

impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Branch {}

impl Ord for Branch {
    // Min-heap on bound; ties resolved by (tree, node) for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    vectors: &'a [f32],
    query: &'a [f32],
    epsilon: f32,
    max_checks: usize,
    checks: usize,
    top: TopK,
    visited: Visited,
    heap: BinaryHeap<Branch>,
    /// Per-branch offset vectors (query-to-cell gap in each dimension).
    offsets: Vec<[f32; DIM]>,
    track_visits: bool,
}

impl Search<'_> {
    fn new_slot(&mut self, from: Option<u32>) -> u32 {
        let v = match from {
            Some(s) => self.offsets[s as usize],
            None => [0f32; DIM],
        };
        self.offsets.push(v);
        (self.offsets.len() - 1) as u32
    }

    fn descend(&mut self, tree: &KdTree, t: u32, mut node: u32, bound: f32, slot: u32) {
        loop {
            let nd = tree.nodes[node as usize];
            if nd.dim == LEAF {
                if self.checks >= self.max_checks && self.top.is_full() {
                    return;
                }
                self.checks += 1;
                for &id in &tree.perm[nd.a as usize..nd.b as usize] {
                    if self.track_visits && !self.visited.insert(id) {
                        continue;
                    }
                    let i = id as usize * DIM;
                    let d = l2_sq(&self.vectors[i..i + DIM], self.query);
                    self.top.push(d, id);
                }
                return;
            }
            let dim = nd.dim as usize;
            let diff = self.query[dim] - nd.split;
            let (near, far) = if diff < 0.0 { (nd.a, nd.b) } else { (nd.b, nd.a) };
            let old = self.offsets[slot as usize][dim];
            let far_bound = (bound - old * old + diff * diff).max(0.0);
            if !prunable(far_bound, self.top.worst(), self.epsilon) {
                let far_slot = self.new_slot(Some(slot));
                self.offsets[far_slot as usize][dim] = diff;
                self.heap.push(Branch {
                    bound: far_bound,
                    tree: t,
                    node: far,
                    slot: far_slot,
                });
            }
            node = near;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::testdata::gaussian_records;

    #[test]
    fn leaves_partition_all_points() {
        let rec = gaussian_records(777, 3);
        let v: Vec<f32> = rec.iter().flat_map(|r| r.vector).collect();
        let f = KdForest::build(&v, 3, 8, 1);
        for t in &f.trees {
            let mut seen = vec![0u8; 777];
            for nd in t.nodes.iter().filter(|n| n.dim == LEAF) {
                assert!(nd.b - nd.a <= 8);
                for &id in &t.perm[nd.a as usize..nd.b as usize] {
                    seen[id as usize] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        assert_ne!(f.trees[0], f.trees[1]);
    }

    #[test]
    fn split_invariant_holds() {
        let rec = gaussian_records(500, 4);
        let v: Vec<f32> = rec.iter().flat_map(|r| r.vector).collect();
        let f = KdForest::build(&v, 1, 4, 0);
        let t = &f.trees[0];
        fn collect(t: &KdTree, n: u32, out: &mut Vec<u32>) {
            let nd = t.nodes[n as usize];
            if nd.dim == LEAF {
                out.extend_from_slice(&t.perm[nd.a as usize..nd.b as usize]);
            } else {
                collect(t, nd.a, out);
                collect(t, nd.b, out);
            }
        }
        for nd in t.nodes.iter().filter(|n| n.dim != LEAF) {
            let (mut lo, mut hi) = (Vec::new(), Vec::new());
            collect(t, nd.a, &mut lo);
            collect(t, nd.b, &mut hi);
            let d = nd.dim as usize;
            assert!(lo.iter().all(|&i| v[i as usize * DIM + d] <= nd.split));
            assert!(hi.iter().all(|&i| v[i as usize * DIM + d] >= nd.split));
        }
    }

    #[test]
    fn identical_points_stay_in_one_leaf() {
        let v = vec![0.5f32; DIM * 40];
        let f = KdForest::build(&v, 1, 4, 0);
        assert_eq!(f.trees[0].nodes.len(), 1);
        let res = f.search(&v, &v[..DIM], 3, Some(1), 0.0);
        assert_eq!(res, vec![(0.0, 0), (0.0, 1), (0.0, 2)]);
    }
}
