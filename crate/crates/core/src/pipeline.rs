//! Two-tier provenance filtering for one query or a batch.
//!
//! Tier 1 votes over the whole query. The top image is registered onto the
//! query, the unexplained regions form a contextual mask, and when the mask
//! looks like a splice each of its largest components is queried again
//! (tier 2). The lists are then fused.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::annindex::{self, records_from_feature_sets, IndexHandle};
use crate::config::Config;
use crate::contextmask::{classify_mask, compute_mask, Component, ContextMask, MaskVerdict, RegistrationSummary};
use crate::error::{Error, Result};
use crate::features::{
    detect_and_describe, keypoints_in_mask, read_feature_set, redetect_in_regions, write_feature_set, DetectorConfig,
    FeatureSet,
};
use crate::geometry::{estimate_homography, match_nndr, top_matches, warp, Homography, Warped};
use crate::imagecore::{load_image, RasterImage};
use crate::retrieval::{aggregate, vote, RankedList};

#[derive(Debug, Clone)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<RasterImage>),
}

impl ImageSource {
    pub fn load(&self) -> Result<Arc<RasterImage>> {
        match self {
            ImageSource::Path(p) => load_image(p).map(Arc::new),
            ImageSource::Memory(img) => Ok(img.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoredImage {
    pub features: FeatureSet,
    pub source: ImageSource,
}

/// Gallery features and pixels, keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    entries: BTreeMap<String, StoredImage>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Extracts features for every image in parallel.
    pub fn extract(images: Vec<(String, ImageSource)>, budget: usize, detector: &DetectorConfig) -> Result<Self> {
        let sets = crate::par::map(&images, |(id, src)| {
            let img = src.load()?;
            detect_and_describe(&img, id, budget, detector)
        });
        let mut store = Self::new();
        for ((id, source), fs) in images.into_iter().zip(sets) {
            let features = fs?;
            store.entries.insert(id, StoredImage { features, source });
        }
        Ok(store)
    }

    pub fn insert(&mut self, features: FeatureSet, source: ImageSource) {
        self.entries.insert(features.image_id.clone(), StoredImage { features, source });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&StoredImage> {
        self.entries.get(image_id)
    }

    pub fn features(&self, image_id: &str) -> Option<&FeatureSet> {
        self.entries.get(image_id).map(|e| &e.features)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredImage)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Descriptor records in image-id order.
    pub fn records(&self) -> Vec<annindex::DescriptorRecord> {
        records_from_feature_sets(self.entries.values().map(|e| &e.features))
    }

    pub fn build_index(&self, config: &Config) -> Result<IndexHandle> {
        annindex::build(&self.records(), config.index.backend, &config.index.params, config.seed)
    }

    /// Writes `<prefix>.pffs` (features) and `<prefix>.paths` (id, path).
    /// In-memory sources are stored with an empty path.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let fpath = sidecar(prefix, "pffs");
        let file = File::create(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let mut w = BufWriter::new(file);
        for e in self.entries.values() {
            write_feature_set(&e.features, &mut w).map_err(|err| Error::io(&fpath, err))?;
        }
        w.flush().map_err(|e| Error::io(&fpath, e))?;
        let ppath = sidecar(prefix, "paths");
        let mut text = String::new();
        for (id, e) in &self.entries {
            let p = match &e.source {
                ImageSource::Path(p) => p.display().to_string(),
                ImageSource::Memory(_) => String::new(),
            };
            text.push_str(&format!("{id}\t{p}\n"));
        }
        std::fs::write(&ppath, text).map_err(|e| Error::io(&ppath, e))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let ppath = sidecar(prefix, "paths");
        let text = std::fs::read_to_string(&ppath).map_err(|e| Error::io(&ppath, e))?;
        let mut paths = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (id, p) = line.split_once('\t').ok_or_else(|| Error::ManifestParse {
                line: i + 1,
                message: "expected <image_id>\\t<path>".into(),
            })?;
            paths.insert(id.to_string(), PathBuf::from(p));
        }
        let fpath = sidecar(prefix, "pffs");
        let file = File::open(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let mut r = BufReader::new(file);
        let mut store = Self::new();
        while let Some(fs) = read_feature_set(&mut r)? {
            let path = paths.get(&fs.image_id).cloned().unwrap_or_default();
            store.insert(fs, ImageSource::Path(path));
        }
        Ok(store)
    }
}

pub fn sidecar(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Wall-clock seconds per stage. Never serialized with the result.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub extract: f64,
    pub tier1: f64,
    pub registration: f64,
    pub mask: f64,
    pub tier2: f64,
    pub aggregate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationInfo {
    pub reference: String,
    pub matrix: [[f64; 3]; 3],
    pub matches: usize,
    pub inliers: usize,
    pub mean_reprojection_error: f64,
    pub match_quality: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskInfo {
    pub width: usize,
    pub height: usize,
    pub coverage: f64,
    pub components: Vec<Component>,
}

impl MaskInfo {
    fn of(m: &ContextMask) -> Self {
        Self {
            width: m.width(),
            height: m.height(),
            coverage: m.coverage(),
            components: m.components().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceResult {
    pub query_id: String,
    pub query_keypoints: usize,
    pub tier1: RankedList,
    pub r_best: Option<String>,
    pub registration: Option<RegistrationInfo>,
    pub verdict: MaskVerdict,
    pub mask_info: Option<MaskInfo>,
    pub tier2: Vec<RankedList>,
    #[serde(rename = "final")]
    pub final_list: RankedList,
    #[serde(skip)]
    pub mask: Option<ContextMask>,
    #[serde(skip)]
    pub timings: Timings,
}

impl ProvenanceResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// Tier 1, each tier-2 list and the fused list, as TSV rows.
    pub fn to_tsv(&self) -> String {
        let mut s = self.tier1.to_tsv();
        for l in &self.tier2 {
            s.push_str(&l.to_tsv());
        }
        s.push_str(&self.final_list.to_tsv());
        s
    }

    /// Writes `<id>.json`, `<id>.tsv` and, when a mask exists, `<id>.mask.png`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{}.json", self.query_id));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let tsv = dir.join(format!("{}.tsv", self.query_id));
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        if let Some(m) = &self.mask {
            m.to_image().save(dir.join(format!("{}.mask.png", self.query_id)))?;
        }
        Ok(())
    }
}

struct Registered {
    info: RegistrationInfo,
    summary: RegistrationSummary,
    warped: Warped,
}

fn register(
    fs_q: &FeatureSet,
    query: &RasterImage,
    reference: &str,
    store: &FeatureStore,
    config: &Config,
) -> Result<Option<Registered>> {
    let stored = store
        .get(reference)
        .ok_or_else(|| Error::IndexUnavailable(format!("no stored features for {reference:?}")))?;
    let g = &config.geometry;
    let matches = match_nndr(fs_q, &stored.features, g.ratio_threshold);
    let Ok(top) = top_matches(&matches, g.top_matches) else {
        return Ok(None);
    };
    let h: Homography = match estimate_homography(&top, &fs_q.keypoints, &stored.features.keypoints, &g.ransac, config.seed) {
        Ok(h) => h,
        Err(Error::DegenerateGeometry(_) | Error::InsufficientMatches { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let host = stored.source.load()?;
    let warped = warp(&host, &h, query.width(), query.height());
    Ok(Some(Registered {
        info: RegistrationInfo {
            reference: reference.to_string(),
            matrix: h.rows(),
            matches: top.len(),
            inliers: h.inlier_count,
            mean_reprojection_error: h.mean_reprojection_error,
            match_quality: h.match_quality,
        },
        summary: RegistrationSummary {
            match_quality: h.match_quality,
            inliers: h.inlier_count,
        },
        warped,
    }))
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs both tiers for one query image.
pub fn run_query(
    query_id: &str,
    query: &RasterImage,
    index: &IndexHandle,
    store: &FeatureStore,
    config: &Config,
) -> Result<ProvenanceResult> {
    if index.is_empty() {
        return Err(Error::IndexUnavailable("index holds no descriptors".into()));
    }
    let start = Instant::now();
    let mut timings = Timings::default();

    let t = Instant::now();
    let mut fs_q = detect_and_describe(query, query_id, config.budgets.query, &config.detector)?;
    if fs_q.is_empty() {
        let relaxed = DetectorConfig {
            hessian_threshold: config.detector.hessian_threshold * config.detector.region_threshold_factor,
            ..config.detector
        };
        fs_q = detect_and_describe(query, query_id, config.budgets.query, &relaxed)?;
    }
    if fs_q.is_empty() {
        return Err(Error::EmptyQueryFeatures);
    }
    timings.extract = secs(t);

    let t = Instant::now();
    let k = config.vote.k_per_keypoint;
    let tier1 = vote(query_id, &index.knn_batch(&fs_q.descriptors, k), index.records(), &config.vote);
    timings.tier1 = secs(t);

    let r_best = tier1.entries.first().map(|e| e.image_id.clone());
    let mut registration = None;
    let mut verdict = MaskVerdict::Unrelated;
    let mut mask: Option<ContextMask> = None;
    let mut tier2: Vec<RankedList> = Vec::new();

    if let Some(best) = &r_best {
        let t = Instant::now();
        let reg = register(&fs_q, query, best, store, config)?;
        timings.registration = secs(t);
        let t = Instant::now();
        if let Some(reg) = &reg {
            let m = compute_mask(query, &reg.warped.image, Some(&reg.warped.valid), &config.mask)?;
            verdict = classify_mask(Some(&m), Some(&reg.summary), &config.verdict);
            mask = Some(m);
        }
        timings.mask = secs(t);
        registration = reg.map(|r| r.info);
    }

    if verdict == MaskVerdict::Composite && config.pipeline.second_tier {
        let t = Instant::now();
        let mut used = vec![r_best.clone().expect("composite implies a best match")];
        let mut current = mask.clone().expect("composite implies a mask");
        for pass in 0..config.pipeline.iterations.max(1) {
            if pass > 0 {
                let fused = aggregate(&tier1, &tier2)?;
                let Some(next) = fused.image_ids().find(|id| !used.iter().any(|u| u == id)).map(str::to_string) else {
                    break;
                };
                let Some(reg) = register(&fs_q, query, &next, store, config)? else { break };
                used.push(next);
                let m = compute_mask(query, &reg.warped.image, Some(&reg.warped.valid), &config.mask)?;
                let both: Vec<bool> = current.bits().iter().zip(m.bits()).map(|(a, b)| *a && b).collect();
                current = ContextMask::from_bits(current.width(), current.height(), &both);
                if current.components().is_empty() {
                    break;
                }
            }
            tier2.extend(tier2_lists(query_id, query, &fs_q, &current, index, config)?);
        }
        mask = Some(current);
        timings.tier2 = secs(t);
    }

    let t = Instant::now();
    let final_list = aggregate(&tier1, &tier2)?;
    timings.aggregate = secs(t);
    timings.total = secs(start);

    Ok(ProvenanceResult {
        query_id: query_id.to_string(),
        query_keypoints: fs_q.len(),
        tier1,
        r_best,
        registration,
        verdict,
        mask_info: mask.as_ref().map(MaskInfo::of),
        tier2,
        final_list,
        mask,
        timings,
    })
}

/// One ranked list per mask component, largest components first.
fn tier2_lists(
    query_id: &str,
    query: &RasterImage,
    fs_q: &FeatureSet,
    mask: &ContextMask,
    index: &IndexHandle,
    config: &Config,
) -> Result<Vec<RankedList>> {
    let n = mask.components().len().min(config.pipeline.max_components);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let comp = mask.component_mask(i);
        let mut sub = keypoints_in_mask(fs_q, &comp)?;
        if sub.len() < config.pipeline.min_kp {
            let bbox = mask.components()[i].bbox;
            sub = redetect_in_regions(query, query_id, &[bbox], config.budgets.region, &config.detector)?;
        }
        let neighbors = index.knn_batch(&sub.descriptors, config.vote.k_per_keypoint);
        let mut list = vote(query_id, &neighbors, index.records(), &config.vote);
        list.tier = 2;
        out.push(list);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub query_id: String,
    pub path: PathBuf,
}

/// A batch item: the result, or the error that stopped that query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ProvenanceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs every query in parallel; results keep manifest order and a failing
/// query does not stop the others.
pub fn run_batch(queries: &[QueryEntry], index: &IndexHandle, store: &FeatureStore, config: &Config) -> Vec<QueryOutcome> {
    crate::par::map(queries, |q| {
        let res = load_image(&q.path).and_then(|img| run_query(&q.query_id, &img, index, store, config));
        match res {
            Ok(r) => QueryOutcome {
                query_id: q.query_id.clone(),
                result: Some(r),
                error: None,
            },
            Err(e) => QueryOutcome {
                query_id: q.query_id.clone(),
                result: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// Query entries from a JSON-lines manifest: every line with role `query`
/// (or with no role). Relative paths are resolved against `base_dir`.
pub fn parse_query_manifest(text: &str, base_dir: &Path) -> Result<Vec<QueryEntry>> {
    #[derive(Deserialize)]
    struct Line {
        image_id: String,
        path: PathBuf,
        role: Option<String>,
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.role.as_deref().is_none_or(|r| r == "query") {
            out.push(QueryEntry {
                query_id: line.image_id,
                path: base_dir.join(line.path),
            });
        }
    }
    Ok(out)
}
