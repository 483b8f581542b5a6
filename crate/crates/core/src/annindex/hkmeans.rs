//! Hierarchical k-means tree.
//!
//! Every inner node splits its points into up to `branching` clusters; each
//! child stores its center and covering radius. Search descends to the
//! closest center and queues the siblings by center distance, pruning with
//! the radius lower bound `max(0, d(q, c) - r)^2`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::kmeans;
use super::topk::{prunable, TopK};
use super::{l2_sq, IndexParams, DIM};

/// Leaf: `first_child == u32::MAX`, points `perm[start..end]`.
/// Inner: children are nodes `first_child..first_child + count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HkNode {
    pub first_child: u32,
    pub count: u32,
    pub start: u32,
    pub end: u32,
}

const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HkTree {
    pub nodes: Vec<HkNode>,
    /// One center per node, `nodes.len() * DIM`.
    pub centers: Vec<f32>,
    pub radii: Vec<f32>,
    pub perm: Vec<u32>,
}

impl HkTree {
    pub fn build(vectors: &[f32], params: &IndexParams, seed: u64) -> Self {
        let n = vectors.len() / DIM;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = HkTree {
            nodes: Vec::new(),
            centers: Vec::new(),
            radii: Vec::new(),
            perm: (0..n as u32).collect(),
        };
        let (center, radius) = center_radius(vectors, &tree.perm);
        tree.push_node(0, n, &center, radius);
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let HkNode { start, end, .. } = tree.nodes[node];
            let (lo, hi) = (start as usize, end as usize);
            if hi - lo <= params.hk_leaf_size {
                continue;
            }
            let ids = tree.perm[lo..hi].to_vec();
            let pts: Vec<f32> = ids
                .iter()
                .flat_map(|&i| vectors[i as usize * DIM..(i as usize + 1) * DIM].iter().copied())
                .collect();
            let km = kmeans(&pts, DIM, params.branching, params.hk_iterations, &mut rng);
            let mut groups: Vec<Vec<u32>> = vec![Vec::new(); km.k];
            for (&id, &c) in ids.iter().zip(&km.assignment) {
                groups[c as usize].push(id);
            }
            groups.retain(|g| !g.is_empty());
            if groups.len() < 2 {
                continue;
            }
            let first = tree.nodes.len() as u32;
            let mut cursor = lo;
            for g in &groups {
                tree.perm[cursor..cursor + g.len()].copy_from_slice(g);
                let (c, r) = center_radius(vectors, g);
                tree.push_node(cursor, cursor + g.len(), &c, r);
                cursor += g.len();
            }
            tree.nodes[node].first_child = first;
            tree.nodes[node].count = groups.len() as u32;
            for child in (first as usize..first as usize + groups.len()).rev() {
                stack.push(child);
            }
        }
        tree
    }

    fn push_node(&mut self, start: usize, end: usize, center: &[f32], radius: f32) {
        self.nodes.push(HkNode {
            first_child: NO_CHILD,
            count: 0,
            start: start as u32,
            end: end as u32,
        });
        self.centers.extend_from_slice(center);
        self.radii.push(radius);
    }

    fn center(&self, node: u32) -> &[f32] {
        &self.centers[node as usize * DIM..(node as usize + 1) * DIM]
    }

    pub fn memory_bytes(&self) -> usize {
        self.nodes.len() * std::mem::size_of::<HkNode>() + self.centers.len() * 4 + self.radii.len() * 4 + self.perm.len() * 4
    }

    pub fn search(
        &self,
        vectors: &[f32],
        query: &[f32],
        k: usize,
        max_leaf_checks: Option<usize>,
        epsilon: f32,
    ) -> Vec<(f32, u32)> {
        let max_checks = max_leaf_checks.unwrap_or(usize::MAX);
        let mut checks = 0usize;
        let mut top = TopK::new(k);
        let mut heap: BinaryHeap<Pending> = BinaryHeap::new();
        let mut node = 0u32;
        loop {
            // Descend to a leaf, queueing siblings.
            loop {
                let nd = self.nodes[node as usize];
                if nd.first_child == NO_CHILD {
                    break;
                }
                let kids: Vec<(f32, u32)> = (nd.first_child..nd.first_child + nd.count)
                    .map(|c| (l2_sq(self.center(c), query), c))
                    .collect();
                let best = kids
                    .iter()
                    .copied()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("inner node has children");
                for &(d, c) in &kids {
                    if c == best.1 {
                        continue;
                    }
                    let gap = (d.sqrt() - self.radii[c as usize]).max(0.0);
                    let bound = gap * gap;
                    if !prunable(bound, top.worst(), epsilon) {
                        heap.push(Pending { priority: d, bound, node: c });
                    }
                }
                node = best.1;
            }
            if checks >= max_checks && top.is_full() {
                break;
            }
            checks += 1;
            let nd = self.nodes[node as usize];
            for &id in &self.perm[nd.start as usize..nd.end as usize] {
                let i = id as usize * DIM;
                top.push(l2_sq(&vectors[i..i + DIM], query), id);
            }
            let next = loop {
                match heap.pop() {
                    None => break None,
                    Some(p) if prunable(p.bound, top.worst(), epsilon) => continue,
                    Some(p) => break Some(p.node),
                }
            };
            match next {
                Some(n) if !(checks >= max_checks && top.is_full()) => node = n,
                _ => break,
            }
        }
        top.into_sorted()
    }
}

fn center_radius(vectors: &[f32], ids: &[u32]) -> (Vec<f32>, f32) {
    let mut sum = [0f64; DIM];
    for &i in ids {
        for (s, &x) in sum.iter_mut().zip(&vectors[i as usize * DIM..(i as usize + 1) * DIM]) {
            *s += x as f64;
        }
    }
    let n = ids.len().max(1) as f64;
    let center: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
    let radius = ids
        .iter()
        .map(|&i| l2_sq(&vectors[i as usize * DIM..(i as usize + 1) * DIM], &center))
        .fold(0f32, f32::max)
        .sqrt();
    // Nudge up so rounding in the radius never makes the bound too tight.
    (center, radius * (1.0 + 1e-5) + 1e-6)
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    priority: f32,
    bound: f32,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.priority.total_cmp(&self.priority).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
