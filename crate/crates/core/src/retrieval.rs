//! Image-level ranking from keypoint neighbors, and rank fusion across tiers.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annindex::{Neighbor, RecordTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub image_id: String,
    /// Query keypoints that voted for this image.
    pub votes: u32,
    /// Confidence in `[0, 1]`.
    pub score: f64,
    /// Mean distance of the voting neighbors.
    pub mean_distance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub tier: u8,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>, tier: u8) -> Self {
        Self {
            query_id: query_id.into(),
            tier,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `image_id`.
    pub fn rank_of(&self, image_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.image_id == image_id).map(|p| p + 1)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }

    /// Tab-separated rows: query_id, rank, image_id, votes, score, tier.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.6}\t{}",
                self.query_id,
                i + 1,
                e.image_id,
                e.votes,
                e.score,
                self.tier
            )?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ids are utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteParams {
    /// Neighbors retrieved per query keypoint.
    pub k_per_keypoint: usize,
    pub max_results: usize,
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            k_per_keypoint: 5,
            max_results: 100,
        }
    }
}

fn vote_order(a: &RankedEntry, b: &RankedEntry) -> std::cmp::Ordering {
    b.votes
        .cmp(&a.votes)
        .then(a.mean_distance.total_cmp(&b.mean_distance))
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Majority vote: each query keypoint votes once for every distinct image
/// among its first `k_per_keypoint` neighbors, with the closest neighbor in
/// that image as evidence. Returns a tier-1 list.
pub fn vote(query_id: &str, neighbor_lists: &[Vec<Neighbor>], records: &RecordTable, params: &VoteParams) -> RankedList {
    let nq = neighbor_lists.len();
    let mut tally: HashMap<u32, Vec<f32>> = HashMap::new();
    let mut seen: Vec<u32> = Vec::new();
    for list in neighbor_lists {
        seen.clear();
        for nb in list.iter().take(params.k_per_keypoint) {
            let img = records.image_index(nb.global_id);
            // Lists are sorted, so the first hit per image is its closest.
            if !seen.contains(&img) {
                seen.push(img);
                tally.entry(img).or_default().push(nb.distance);
            }
        }
    }
    let mut entries: Vec<RankedEntry> = tally
        .into_iter()
        .map(|(img, mut d)| {
            d.sort_by(f32::total_cmp);
            let mean = d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64;
            RankedEntry {
                image_id: records.image_name(img).to_string(),
                votes: d.len() as u32,
                score: d.len() as f64 / nq as f64,
                mean_distance: mean as f32,
            }
        })
        .collect();
    entries.sort_by(vote_order);
    entries.truncate(params.max_results);
    RankedList {
        query_id: query_id.to_string(),
        tier: 1,
        entries,
    }
}

/// Min-max normalized scores; constant lists map to 1.0.
fn normalized(list: &RankedList) -> Vec<f64> {
    let (lo, hi) = list
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.score), hi.max(e.score)));
    list.entries
        .iter()
        .map(|e| if hi > lo { (e.score - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

struct Fused {
    score: f64,
    best_rank: usize,
    best_tier: u8,
    votes: u32,
    mean_distance: f32,
}

/// Max-fusion of min-max normalized scores. Ties go to the better
/// originating rank, then to the earlier tier, then to the image id.
/// The tier-1 rank-1 entry therefore always stays first.
pub fn aggregate(tier1: &RankedList, tier2_lists: &[RankedList]) -> Result<RankedList> {
    for l in tier2_lists {
        if l.query_id != tier1.query_id {
            return Err(Error::QueryIdMismatch {
                expected: tier1.query_id.clone(),
                found: l.query_id.clone(),
            });
        }
    }
    let mut fused: HashMap<&str, Fused> = HashMap::new();
    for list in std::iter::once(tier1).chain(tier2_lists) {
        for (rank, (e, s)) in list.entries.iter().zip(normalized(list)).enumerate() {
            let f = fused.entry(e.image_id.as_str()).or_insert(Fused {
                score: f64::NEG_INFINITY,
                best_rank: usize::MAX,
                best_tier: u8::MAX,
                votes: 0,
                mean_distance: f32::INFINITY,
            });
            if s > f.score {
                f.score = s;
                f.votes = e.votes;
                f.mean_distance = e.mean_distance;
            }
            if rank + 1 < f.best_rank || (rank + 1 == f.best_rank && list.tier < f.best_tier) {
                f.best_rank = rank + 1;
                f.best_tier = list.tier;
            }
        }
    }
    let mut rows: Vec<(&str, Fused)> = fused.into_iter().collect();
    rows.sort_by(|(ia, a), (ib, b)| {
        b.score
            .total_cmp(&a.score)
            .then(a.best_rank.cmp(&b.best_rank))
            .then(a.best_tier.cmp(&b.best_tier))
            .then_with(|| ia.cmp(ib))
    });
    Ok(RankedList {
        query_id: tier1.query_id.clone(),
        tier: 2,
        entries: rows
            .into_iter()
            .map(|(id, f)| RankedEntry {
                image_id: id.to_string(),
                votes: f.votes,
                score: f.score,
                mean_distance: f.mean_distance,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::{build, Backend, DescriptorRecord, IndexParams};
    use proptest::prelude::*;

    /// Record table with `per_image` records for each named image, ids in order.
    fn table(images: &[&str], per_image: usize) -> RecordTable {
        let recs: Vec<DescriptorRecord> = images
            .iter()
            .enumerate()
            .flat_map(|(i, name)| {
                (0..per_image).map(move |j| DescriptorRecord {
                    global_id: (i * per_image + j) as u32,
                    image_id: name.to_string(),
                    keypoint_ordinal: j as u32,
                    vector: [0.0; 64],
                })
            })
            .collect();
        build(&recs, Backend::Brute, &IndexParams::default(), 0).unwrap().records().clone()
    }

    fn nb(id: u32, d: f32) -> Neighbor {
        Neighbor {
            global_id: id,
            distance: d,
        }
    }

    fn list(entries: &[(&str, f64)], tier: u8) -> RankedList {
        RankedList {
            query_id: "q".into(),
            tier,
            entries: entries
                .iter()
                .map(|&(id, score)| RankedEntry {
                    image_id: id.into(),
                    votes: 1,
                    score,
                    mean_distance: 0.0,
                })
                .collect(),
        }
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.image_ids().collect()
    }

    #[test]
    fn single_image_gets_every_vote() {
        let t = table(&["A"], 10);
        let lists: Vec<Vec<Neighbor>> = (0..4).map(|i| vec![nb(i, 0.1), nb(i + 1, 0.2)]).collect();
        let r = vote("q", &lists, &t, &VoteParams::default());
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].votes, 4);
        assert_eq!(r.entries[0].score, 1.0);
        assert!(vote("q", &[], &t, &VoteParams::default()).is_empty());
    }

    #[test]
    fn hand_tally() {
        // Images A (ids 0..3), B (3..6).
        let t = table(&["A", "B"], 3);
        let lists = vec![vec![nb(0, 0.1)], vec![nb(1, 0.3)], vec![nb(4, 0.2)]];
        let r = vote("q", &lists, &t, &VoteParams::default());
        assert_eq!(ids(&r), ["A", "B"]);
        assert_eq!(r.entries[0].votes, 2);
        assert_eq!(r.entries[1].votes, 1);
        assert!((r.entries[0].mean_distance - 0.2).abs() < 1e-6);
    }

    #[test]
    fn one_vote_per_image_per_keypoint() {
        let t = table(&["A", "B"], 3);
        let lists = vec![vec![nb(0, 0.1), nb(1, 0.2), nb(2, 0.3), nb(3, 0.4)]];
        let r = vote("q", &lists, &t, &VoteParams::default());
        assert_eq!(r.entries[0].votes, 1);
        assert_eq!(r.entries[0].mean_distance, 0.1);
        let limited = vote(
            "q",
            &lists,
            &t,
            &VoteParams {
                k_per_keypoint: 3,
                max_results: 100,
            },
        );
        assert_eq!(ids(&limited), ["A"]);
    }

    #[test]
    fn aggregate_examples() {
        let a = list(&[("A", 0.9), ("B", 0.3)], 1);
        let b = list(&[("B", 1.0), ("C", 0.5)], 2);
        assert_eq!(ids(&aggregate(&a, &[b]).unwrap()), ["A", "B", "C"]);

        let t1 = list(&[("X", 0.8), ("Y", 0.5), ("Z", 0.5), ("W", 0.1)], 1);
        let same = aggregate(&t1, &[]).unwrap();
        assert_eq!(ids(&same), ids(&t1));
        assert_eq!(same.tier, 2);
        assert_eq!(same.entries[0].score, 1.0);

        let t2 = list(&[("D", 0.2)], 2);
        let fused = aggregate(&t1, &[t2]).unwrap();
        let rank_d = fused.rank_of("D").unwrap();
        assert!(rank_d < fused.rank_of("Y").unwrap());

        let host_first = aggregate(&t1, &[list(&[("D", 0.9), ("X", 0.1)], 2), list(&[("E", 0.4)], 2)]).unwrap();
        assert_eq!(ids(&host_first)[..3], ["X", "D", "E"]);

        let mut other = list(&[("A", 1.0)], 2);
        other.query_id = "r".into();
        assert!(matches!(aggregate(&a, &[other]), Err(Error::QueryIdMismatch { .. })));
    }

    #[test]
    fn tsv_rows() {
        let l = list(&[("A", 0.5), ("B", 1.0 / 3.0)], 1);
        assert_eq!(l.to_tsv(), "q\t1\tA\t1\t0.500000\t1\nq\t2\tB\t1\t0.333333\t1\n");
    }

    fn arb_lists() -> impl Strategy<Value = Vec<Vec<(u32, f32)>>> {
        prop::collection::vec(prop::collection::vec((0u32..24, 0.0f32..2.0), 0..6), 0..30)
    }

    fn to_neighbors(raw: &[Vec<(u32, f32)>]) -> Vec<Vec<Neighbor>> {
        raw.iter()
            .map(|l| {
                let mut v: Vec<Neighbor> = l.iter().map(|&(id, d)| nb(id, d)).collect();
                v.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.global_id.cmp(&b.global_id)));
                v.dedup_by_key(|n| n.global_id);
                v
            })
            .collect()
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(raw in arb_lists(), rot in 0usize..30) {
            let t = table(&["A", "B", "C", "D", "E", "F"], 4);
            let lists = to_neighbors(&raw);
            let mut rotated = lists.clone();
            if !rotated.is_empty() {
                let r = rot % rotated.len();
                rotated.rotate_left(r);
            }
            rotated.reverse();
            let p = VoteParams::default();
            prop_assert_eq!(vote("q", &lists, &t, &p), vote("q", &rotated, &t, &p));
        }

        #[test]
        fn vote_list_invariants(raw in arb_lists()) {
            let t = table(&["A", "B", "C", "D", "E", "F"], 4);
            let r = vote("q", &to_neighbors(&raw), &t, &VoteParams::default());
            let mut seen = std::collections::HashSet::new();
            for w in r.entries.windows(2) {
                prop_assert!(vote_order(&w[0], &w[1]) == std::cmp::Ordering::Less);
            }
            for e in &r.entries {
                prop_assert!(e.votes >= 1);
                prop_assert!(e.score > 0.0 && e.score <= 1.0);
                prop_assert!(seen.insert(e.image_id.clone()));
            }
        }

        #[test]
        fn zero_vote_gallery_images_change_nothing(raw in arb_lists()) {
            let small = table(&["A", "B", "C", "D", "E", "F"], 4);
            let big = table(&["A", "B", "C", "D", "E", "F", "G", "H"], 4);
            let lists = to_neighbors(&raw);
            let p = VoteParams::default();
            prop_assert_eq!(vote("q", &lists, &small, &p), vote("q", &lists, &big, &p));
        }

        #[test]
        fn extra_vote_never_lowers_rank(raw in arb_lists(), target in 0usize..6) {
            let t = table(&["A", "B", "C", "D", "E", "F"], 4);
            let lists = to_neighbors(&raw);
            let p = VoteParams { k_per_keypoint: 5, max_results: 100 };
            let before = vote("q", &lists, &t, &p);
            let name = ["A", "B", "C", "D", "E", "F"][target];
            let mut more = lists.clone();
            more.push(vec![nb(target as u32 * 4, 0.0)]);
            let after = vote("q", &more, &t, &p);
            if let Some(r0) = before.rank_of(name) {
                prop_assert!(after.rank_of(name).unwrap() <= r0);
            }
        }

        #[test]
        fn aggregate_single_list_preserves_order(scores in prop::collection::vec(0.0f64..1.0, 0..20)) {
            let mut s = scores.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            let names: Vec<String> = (0..s.len()).map(|i| format!("i{i:02}")).collect();
            let entries: Vec<(&str, f64)> = names.iter().map(|n| n.as_str()).zip(s).collect();
            let l = list(&entries, 1);
            let fused = aggregate(&l, &[]).unwrap();
            prop_assert_eq!(ids(&fused), ids(&l));
        }
    }
}
