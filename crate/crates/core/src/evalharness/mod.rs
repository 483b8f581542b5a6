//! Synthetic composite corpora with ground truth, Recall@k evaluation per
//! tier and role, and index backend benchmarks.

pub mod bench;
pub mod corpus;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annindex::{Backend, IndexHandle};
use crate::config::Config;
use crate::contextmask::MaskVerdict;
use crate::error::{Error, Result};
use crate::imagecore::Rect;
use crate::pipeline::{run_batch, FeatureStore, ProvenanceResult, QueryEntry, QueryOutcome};
use crate::retrieval::RankedList;

pub use bench::{bench_backends, mixed_gaussian_descriptors, BenchRow};
pub use corpus::{generate_corpus, generate_from_images, read_manifest, GenOptions, GeneratedCorpus, ImageRole, ManifestEntry};

pub const RECALL_KS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceGroundTruth {
    pub query_id: String,
    pub host_id: String,
    pub donor_ids: Vec<String>,
    /// Per donor, in query coordinates.
    pub splice_rects: Vec<Rect>,
    /// Per donor, pasted pixels over query area.
    pub donor_fractions: Vec<f64>,
    /// Per donor, the operations applied to the cut region.
    pub transform_log: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Host,
    Donor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListKind {
    Tier1,
    Final,
}

impl ListKind {
    pub fn of(self, r: &ProvenanceResult) -> &RankedList {
        match self {
            ListKind::Tier1 => &r.tier1,
            ListKind::Final => &r.final_list,
        }
    }
}

fn in_top_k(list: &RankedList, id: &str, k: usize) -> bool {
    list.entries.iter().take(k).any(|e| e.image_id == id)
}

/// Host role: fraction of queries whose host is in the top `k`. Donor
/// role: fraction of (query, donor) pairs with the donor in the top `k`,
/// or 0 when there are no pairs.
pub fn recall_at_k(
    results: &[ProvenanceResult],
    truth: &BTreeMap<String, ProvenanceGroundTruth>,
    k: usize,
    role: Role,
    list: ListKind,
) -> Result<f64> {
    let (hits, total) = tally(results, truth, k, role, list, |_, _| true)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Hit and pair counts; `keep(truth, donor_index)` filters donor pairs.
pub fn tally(
    results: &[ProvenanceResult],
    truth: &BTreeMap<String, ProvenanceGroundTruth>,
    k: usize,
    role: Role,
    list: ListKind,
    keep: impl Fn(&ProvenanceGroundTruth, usize) -> bool,
) -> Result<(usize, usize)> {
    let mut hits = 0;
    let mut total = 0;
    for r in results {
        let gt = truth
            .get(&r.query_id)
            .ok_or_else(|| Error::MissingGroundTruth(r.query_id.clone()))?;
        let l = list.of(r);
        match role {
            Role::Host => {
                total += 1;
                hits += in_top_k(l, &gt.host_id, k) as usize;
            }
            Role::Donor => {
                for (i, d) in gt.donor_ids.iter().enumerate() {
                    if keep(gt, i) {
                        total += 1;
                        hits += in_top_k(l, d, k) as usize;
                    }
                }
            }
        }
    }
    Ok((hits, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub list: ListKind,
    pub role: Role,
    pub k: usize,
    pub hits: usize,
    pub total: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorRow {
    pub donor_id: String,
    pub area_fraction: f64,
    pub rank_tier1: Option<usize>,
    pub rank_final: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub host_id: String,
    pub verdict: Option<MaskVerdict>,
    pub r_best: Option<String>,
    pub host_rank_tier1: Option<usize>,
    pub host_rank_final: Option<usize>,
    pub tier2_lists: usize,
    pub donors: Vec<DonorRow>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub backend: Backend,
    pub descriptors: usize,
    pub images: usize,
    pub memory_bytes: usize,
}

/// Deterministic evaluation output; wall-clock figures are kept elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub index: IndexSummary,
    pub queries: usize,
    pub failed_queries: usize,
    pub donor_pairs: usize,
    pub recalls: Vec<RecallRow>,
    /// Donor recall restricted to donors below `small_donor_fraction` of the query area.
    pub small_donor_fraction: f64,
    pub small_donor_recalls: Vec<RecallRow>,
    pub rows: Vec<QueryRow>,
}

impl EvalReport {
    pub fn recall(&self, list: ListKind, role: Role, k: usize) -> Option<f64> {
        self.recalls
            .iter()
            .find(|r| r.list == list && r.role == role && r.k == k)
            .map(|r| r.recall)
    }

    pub fn small_donor_recall(&self, list: ListKind, k: usize) -> Option<&RecallRow> {
        self.small_donor_recalls.iter().find(|r| r.list == list && r.k == k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (query, donor); queries without donors get one row.
    pub fn rows_tsv(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |r| r.to_string());
        let mut s = String::from(
            "query_id\thost_id\tverdict\thost_rank_tier1\thost_rank_final\tdonor_id\tdonor_fraction\tdonor_rank_tier1\tdonor_rank_final\terror\n",
        );
        for r in &self.rows {
            let verdict = r
                .verdict
                .map_or("-".to_string(), |v| serde_json::to_value(v).unwrap().as_str().unwrap().to_string());
            let head = format!(
                "{}\t{}\t{}\t{}\t{}",
                r.query_id,
                r.host_id,
                verdict,
                opt(r.host_rank_tier1),
                opt(r.host_rank_final)
            );
            let err = r.error.as_deref().unwrap_or("").replace(['\t', '\n'], " ");
            if r.donors.is_empty() {
                writeln!(s, "{head}\t-\t-\t-\t-\t{err}").unwrap();
            }
            for d in &r.donors {
                writeln!(
                    s,
                    "{head}\t{}\t{:.6}\t{}\t{}\t{err}",
                    d.donor_id,
                    d.area_fraction,
                    opt(d.rank_tier1),
                    opt(d.rank_final)
                )
                .unwrap();
            }
        }
        s
    }
}

/// Builds the report. Failed queries count as misses.
pub fn evaluate(
    outcomes: &[QueryOutcome],
    truth: &BTreeMap<String, ProvenanceGroundTruth>,
    index: &IndexHandle,
    small_donor_fraction: f64,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut ok: Vec<ProvenanceResult> = Vec::new();
    let mut failed_truth: Vec<&ProvenanceGroundTruth> = Vec::new();
    for o in outcomes {
        let gt = truth
            .get(&o.query_id)
            .ok_or_else(|| Error::MissingGroundTruth(o.query_id.clone()))?;
        let rank = |r: &ProvenanceResult, kind: ListKind, id: &str| kind.of(r).rank_of(id);
        let row = match &o.result {
            Some(r) => QueryRow {
                query_id: o.query_id.clone(),
                host_id: gt.host_id.clone(),
                verdict: Some(r.verdict),
                r_best: r.r_best.clone(),
                host_rank_tier1: rank(r, ListKind::Tier1, &gt.host_id),
                host_rank_final: rank(r, ListKind::Final, &gt.host_id),
                tier2_lists: r.tier2.len(),
                donors: gt
                    .donor_ids
                    .iter()
                    .zip(&gt.donor_fractions)
                    .map(|(d, &f)| DonorRow {
                        donor_id: d.clone(),
                        area_fraction: f,
                        rank_tier1: rank(r, ListKind::Tier1, d),
                        rank_final: rank(r, ListKind::Final, d),
                    })
                    .collect(),
                error: None,
            },
            None => {
                failed_truth.push(gt);
                QueryRow {
                    query_id: o.query_id.clone(),
                    host_id: gt.host_id.clone(),
                    verdict: None,
                    r_best: None,
                    host_rank_tier1: None,
                    host_rank_final: None,
                    tier2_lists: 0,
                    donors: gt
                        .donor_ids
                        .iter()
                        .zip(&gt.donor_fractions)
                        .map(|(d, &f)| DonorRow {
                            donor_id: d.clone(),
                            area_fraction: f,
                            rank_tier1: None,
                            rank_final: None,
                        })
                        .collect(),
                    error: o.error.clone(),
                }
            }
        };
        if let Some(r) = &o.result {
            ok.push(r.clone());
        }
        rows.push(row);
    }
    let failed_pairs = |keep: &dyn Fn(&ProvenanceGroundTruth, usize) -> bool| -> usize {
        failed_truth
            .iter()
            .map(|gt| (0..gt.donor_ids.len()).filter(|&i| keep(gt, i)).count())
            .sum()
    };
    let mut recalls = Vec::new();
    let mut small = Vec::new();
    let is_small = |gt: &ProvenanceGroundTruth, i: usize| gt.donor_fractions.get(i).is_some_and(|&f| f < small_donor_fraction);
    for list in [ListKind::Tier1, ListKind::Final] {
        for role in [Role::Host, Role::Donor] {
            for k in RECALL_KS {
                let (hits, mut total) = tally(&ok, truth, k, role, list, |_, _| true)?;
                total += match role {
                    Role::Host => failed_truth.len(),
                    Role::Donor => failed_pairs(&|_, _| true),
                };
                recalls.push(RecallRow {
                    list,
                    role,
                    k,
                    hits,
                    total,
                    recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
                });
            }
        }
        for k in RECALL_KS {
            let (hits, mut total) = tally(&ok, truth, k, Role::Donor, list, is_small)?;
            total += failed_pairs(&is_small);
            small.push(RecallRow {
                list,
                role: Role::Donor,
                k,
                hits,
                total,
                recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            });
        }
    }
    let stats = index.stats();
    Ok(EvalReport {
        index: IndexSummary {
            backend: stats.backend,
            descriptors: stats.n,
            images: index.records().image_count(),
            memory_bytes: stats.memory_bytes,
        },
        queries: outcomes.len(),
        failed_queries: failed_truth.len(),
        donor_pairs: truth
            .values()
            .filter(|gt| outcomes.iter().any(|o| o.query_id == gt.query_id))
            .map(|gt| gt.donor_ids.len())
            .sum(),
        recalls,
        small_donor_fraction,
        small_donor_recalls: small,
        rows,
    })
}

/// Ground truth for every query line of a manifest.
pub fn truth_from_manifest(entries: &[ManifestEntry]) -> BTreeMap<String, ProvenanceGroundTruth> {
    entries
        .iter()
        .filter_map(|e| e.ground_truth())
        .map(|gt| (gt.query_id.clone(), gt))
        .collect()
}

/// Queries every manifest query against `index` and scores the results.
pub fn run_eval(
    entries: &[ManifestEntry],
    base_dir: &std::path::Path,
    index: &IndexHandle,
    store: &FeatureStore,
    config: &Config,
) -> Result<(EvalReport, Vec<QueryOutcome>)> {
    let queries: Vec<QueryEntry> = entries
        .iter()
        .filter(|e| e.role == ImageRole::Query)
        .map(|e| QueryEntry {
            query_id: e.image_id.clone(),
            path: base_dir.join(&e.path),
        })
        .collect();
    let truth = truth_from_manifest(entries);
    let outcomes = run_batch(&queries, index, store, config);
    let report = evaluate(&outcomes, &truth, index, SMALL_DONOR_FRACTION)?;
    Ok((report, outcomes))
}

/// Donors below this share of the query area count as small.
pub const SMALL_DONOR_FRACTION: f64 = 0.10;
