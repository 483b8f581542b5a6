//! Synthetic composite corpus: hosts with pasted, transformed donor regions,
//! plus distractors, described by a JSON-lines manifest.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{adjust_brightness, resize, rotate};
use super::ProvenanceGroundTruth;
use crate::error::{Error, Result};
use crate::imagecore::{load_image, RasterImage, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Distractor,
    Host,
    Donor,
    Query,
}

/// One manifest line. Truth fields are present on query lines only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub role: ImageRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub donor_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub splice_rects: Vec<Rect>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub donor_fractions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transform_log: Vec<Vec<String>>,
}

impl ManifestEntry {
    fn gallery(image_id: &str, role: ImageRole) -> Self {
        Self {
            image_id: image_id.to_string(),
            path: PathBuf::from(format!("gallery/{image_id}.png")),
            role,
            host_id: None,
            donor_ids: Vec::new(),
            splice_rects: Vec::new(),
            donor_fractions: Vec::new(),
            transform_log: Vec::new(),
        }
    }

    pub fn is_gallery(&self) -> bool {
        self.role != ImageRole::Query
    }

    pub fn ground_truth(&self) -> Option<ProvenanceGroundTruth> {
        if self.role != ImageRole::Query {
            return None;
        }
        Some(ProvenanceGroundTruth {
            query_id: self.image_id.clone(),
            host_id: self.host_id.clone()?,
            donor_ids: self.donor_ids.clone(),
            splice_rects: self.splice_rects.clone(),
            donor_fractions: self.donor_fractions.clone(),
            transform_log: self.transform_log.clone(),
        })
    }
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::ManifestParse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenOptions {
    pub n_distractors: usize,
    pub n_composites: usize,
    /// Donors per composite, drawn uniformly from this inclusive range.
    pub donors_min: usize,
    pub donors_max: usize,
    pub seed: u64,
    /// Cut region size as a fraction of the host area.
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Cap on a pasted region after scaling, as a fraction of the host area.
    pub max_paste_fraction: f64,
    /// Probability of applying each optional transform.
    pub transform_probability: f64,
    /// JPEG quality of the final composite.
    pub query_quality: u8,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            n_distractors: 100,
            n_composites: 10,
            donors_min: 1,
            donors_max: 2,
            seed: 0,
            min_fraction: 0.05,
            max_fraction: 0.25,
            max_paste_fraction: 0.30,
            transform_probability: 0.5,
            query_quality: 85,
        }
    }
}

impl GenOptions {
    pub fn required_images(&self) -> usize {
        self.n_distractors + self.n_composites * (1 + self.donors_max)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedQuery {
    pub entry: ManifestEntry,
    pub image: RasterImage,
    /// Encoded JPEG the image was decoded from.
    pub jpeg: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    /// Gallery entries followed by query entries.
    pub entries: Vec<ManifestEntry>,
    pub gallery: Vec<(String, RasterImage)>,
    pub queries: Vec<GeneratedQuery>,
}

impl GeneratedCorpus {
    pub fn manifest(&self) -> String {
        manifest_to_string(&self.entries)
    }

    /// Writes `gallery/*.png`, `queries/*.jpg` and `manifest.jsonl`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let gdir = out_dir.join("gallery");
        let qdir = out_dir.join("queries");
        for d in [&gdir, &qdir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let written: Vec<Result<()>> = crate::par::map(&self.gallery, |(id, img)| img.save(gdir.join(format!("{id}.png"))));
        written.into_iter().collect::<Result<()>>()?;
        for q in &self.queries {
            let p = out_dir.join(&q.entry.path);
            std::fs::write(&p, &q.jpeg).map_err(|e| Error::io(&p, e))?;
        }
        let m = out_dir.join("manifest.jsonl");
        std::fs::write(&m, self.manifest()).map_err(|e| Error::io(&m, e))
    }
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "ppm", "pgm", "pnm"];

/// Loads base images from a directory (sorted by file name, ids are file
/// stems), builds the corpus and writes it to `out_dir`.
pub fn generate_corpus(base_dir: &Path, opts: &GenOptions, out_dir: &Path) -> Result<GeneratedCorpus> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(base_dir)
        .map_err(|e| Error::io(base_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let needed = opts.required_images();
    if files.len() < needed {
        return Err(Error::InsufficientBaseImages {
            needed,
            available: files.len(),
        });
    }
    let loaded = crate::par::map(&files, |p| {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        load_image(p).map(|img| (id, img.to_rgb()))
    });
    let bases = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    let corpus = generate_from_images(bases, opts)?;
    corpus.write(out_dir)?;
    Ok(corpus)
}

/// Builds a corpus from in-memory base images. Deterministic in `opts.seed`.
pub fn generate_from_images(bases: Vec<(String, RasterImage)>, opts: &GenOptions) -> Result<GeneratedCorpus> {
    let needed = opts.required_images();
    if bases.len() < needed {
        return Err(Error::InsufficientBaseImages {
            needed,
            available: bases.len(),
        });
    }
    if opts.donors_min > opts.donors_max {
        return Err(Error::InvalidParams("donors_min exceeds donors_max".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..bases.len()).collect();
    order.shuffle(&mut rng);
    let mut next = order.into_iter();

    let mut gallery_entries = Vec::new();
    let mut used = Vec::new();
    let mut plans = Vec::new();
    for c in 0..opts.n_composites {
        let host = next.next().expect("counted");
        let nd = rng.gen_range(opts.donors_min..=opts.donors_max);
        let donors: Vec<usize> = (0..nd).map(|_| next.next().expect("counted")).collect();
        gallery_entries.push(ManifestEntry::gallery(&bases[host].0, ImageRole::Host));
        used.push(host);
        for &d in &donors {
            gallery_entries.push(ManifestEntry::gallery(&bases[d].0, ImageRole::Donor));
            used.push(d);
        }
        plans.push((c, host, donors, rng.gen::<u64>()));
    }
    for _ in 0..opts.n_distractors {
        let d = next.next().expect("counted");
        gallery_entries.push(ManifestEntry::gallery(&bases[d].0, ImageRole::Distractor));
        used.push(d);
    }

    let queries: Vec<Result<GeneratedQuery>> = crate::par::map(&plans, |(c, host, donors, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let donor_imgs: Vec<&RasterImage> = donors.iter().map(|&d| &bases[d].1).collect();
        let comp = make_composite(&bases[*host].1, &donor_imgs, opts, &mut rng);
        let jpeg = comp.image.encode_jpeg(opts.query_quality)?;
        let image = RasterImage::decode(&jpeg)?;
        let id = format!("q{c:04}");
        Ok(GeneratedQuery {
            entry: ManifestEntry {
                image_id: id.clone(),
                path: PathBuf::from(format!("queries/{id}.jpg")),
                role: ImageRole::Query,
                host_id: Some(bases[*host].0.clone()),
                donor_ids: donors.iter().map(|&d| bases[d].0.clone()).collect(),
                splice_rects: comp.rects,
                donor_fractions: comp.fractions,
                transform_log: comp.logs,
            },
            image,
            jpeg,
        })
    });
    let queries = queries.into_iter().collect::<Result<Vec<_>>>()?;

    let mut gallery: Vec<(String, RasterImage)> = used.iter().map(|&i| bases[i].clone()).collect();
    gallery.sort_by(|a, b| a.0.cmp(&b.0));
    let mut entries = gallery_entries;
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    entries.extend(queries.iter().map(|q| q.entry.clone()));
    Ok(GeneratedCorpus {
        entries,
        gallery,
        queries,
    })
}

pub struct Composite {
    pub image: RasterImage,
    pub rects: Vec<Rect>,
    pub fractions: Vec<f64>,
    pub logs: Vec<Vec<String>>,
}

/// Pastes one transformed region of each donor into a copy of `host`.
pub fn make_composite(host: &RasterImage, donors: &[&RasterImage], opts: &GenOptions, rng: &mut ChaCha8Rng) -> Composite {
    let host = host.to_rgb();
    let (hw, hh) = host.dimensions();
    let host_area = (hw * hh) as f64;
    let mut out = host.clone();
    let mut rects: Vec<Rect> = Vec::new();
    let mut fractions = Vec::new();
    let mut logs = Vec::new();
    for donor in donors {
        let donor = donor.to_rgb();
        let (patch, valid, log) = cut_patch(&donor, hw, hh, opts, rng);
        let (pw, ph) = patch.dimensions();
        let mut pos = (0, 0);
        for attempt in 0..40 {
            pos = (rng.gen_range(0..=hw - pw), rng.gen_range(0..=hh - ph));
            let r = Rect::from_origin_size(pos.0 as i64, pos.1 as i64, pw as i64, ph as i64);
            if attempt == 39 || rects.iter().all(|o| o.intersect(&r).is_empty()) {
                break;
            }
        }
        let mut bbox = Rect::new(i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        let mut count = 0usize;
        for y in 0..ph {
            for x in 0..pw {
                if !valid[y * pw + x] {
                    continue;
                }
                let (qx, qy) = (pos.0 + x, pos.1 + y);
                for c in 0..3 {
                    out.set(qx, qy, c, patch.get(x, y, c));
                }
                count += 1;
                bbox = Rect::new(
                    bbox.x0.min(qx as i64),
                    bbox.y0.min(qy as i64),
                    bbox.x1.max(qx as i64 + 1),
                    bbox.y1.max(qy as i64 + 1),
                );
            }
        }
        let mut log = log;
        log.push(format!("paste {},{}", pos.0, pos.1));
        rects.push(bbox);
        fractions.push(count as f64 / host_area);
        logs.push(log);
    }
    Composite {
        image: out,
        rects,
        fractions,
        logs,
    }
}

/// Cuts a random region from `donor` and applies a random subset of scale,
/// rotation, brightness and JPEG re-compression. Returns the patch, its
/// validity map and the log of applied operations.
fn cut_patch(donor: &RasterImage, hw: usize, hh: usize, opts: &GenOptions, rng: &mut ChaCha8Rng) -> (RasterImage, Vec<bool>, Vec<String>) {
    let host_area = (hw * hh) as f64;
    let (dw, dh) = donor.dimensions();
    let frac = rng.gen_range(opts.min_fraction..=opts.max_fraction);
    let aspect = rng.gen_range(0.6..1.6f64);
    let area = frac * host_area;
    let w = ((area * aspect).sqrt().round() as usize).clamp(8, dw.min(hw));
    let h = ((area / w as f64).round() as usize).clamp(8, dh.min(hh));
    let x0 = rng.gen_range(0..=dw - w);
    let y0 = rng.gen_range(0..=dh - h);
    let mut patch = donor
        .crop(Rect::from_origin_size(x0 as i64, y0 as i64, w as i64, h as i64))
        .expect("cut inside donor");
    let mut log = vec![format!("cut {x0},{y0},{w},{h}")];
    let p = opts.transform_probability;

    let (do_scale, do_rot, do_bright, do_jpeg) = (rng.gen_bool(p), rng.gen_bool(p), rng.gen_bool(p), rng.gen_bool(p));
    let s_raw = rng.gen_range(0.5..=2.0f64);
    let theta = rng.gen_range(-30.0..=30.0f64);
    let bright = rng.gen_range(0.8..=1.2f32);
    let quality = rng.gen_range(70..=95u8);

    if do_scale {
        let cap_area = (opts.max_paste_fraction * host_area / (w * h) as f64).sqrt();
        let cap_w = 0.9 * hw as f64 / w as f64;
        let cap_h = 0.9 * hh as f64 / h as f64;
        let s = s_raw.min(cap_area).min(cap_w).min(cap_h).max(8.0 / w.min(h) as f64);
        let (nw, nh) = (((w as f64 * s).round() as usize).max(8), ((h as f64 * s).round() as usize).max(8));
        patch = resize(&patch, nw, nh);
        log.push(format!("scale {s:.3}"));
    }
    let mut valid = vec![true; patch.width() * patch.height()];
    if do_rot {
        let (r, v) = rotate(&patch, theta.to_radians());
        if r.width() <= hw && r.height() <= hh {
            patch = r;
            valid = v;
            log.push(format!("rotate {theta:.2}deg"));
        }
    }
    if do_bright {
        patch = adjust_brightness(&patch, bright);
        log.push(format!("brightness {bright:.3}"));
    }
    if do_jpeg {
        if let Ok(p) = patch.recompress_jpeg(quality) {
            patch = p;
            log.push(format!("jpeg {quality}"));
        }
    }
    (patch, valid, log)
}

#[cfg(test)]
mod tests {
    use super::super::synth::render_base_image;
    use super::*;

    fn bases(n: usize) -> Vec<(String, RasterImage)> {
        (0..n).map(|i| (format!("b{i:03}"), render_base_image(96, 80, i as u64))).collect()
    }

    #[test]
    fn single_donor_truth_is_inside_bounds() {
        let opts = GenOptions {
            n_distractors: 2,
            n_composites: 1,
            donors_min: 1,
            donors_max: 1,
            ..GenOptions::default()
        };
        let c = generate_from_images(bases(4), &opts).unwrap();
        assert_eq!(c.queries.len(), 1);
        let q = &c.queries[0].entry;
        assert_eq!(q.splice_rects.len(), 1);
        let r = q.splice_rects[0];
        assert!(r.x0 >= 0 && r.y0 >= 0 && r.x1 <= 96 && r.y1 <= 80 && !r.is_empty());
        assert_eq!(c.gallery.len(), 4);
        assert!(q.donor_fractions[0] > 0.0 && q.donor_fractions[0] <= 0.31);
        let gt = q.ground_truth().unwrap();
        assert_eq!(gt.donor_ids.len(), 1);
    }

    #[test]
    fn no_donors_gives_recompressed_host() {
        let opts = GenOptions {
            n_distractors: 1,
            n_composites: 2,
            donors_min: 0,
            donors_max: 0,
            ..GenOptions::default()
        };
        let b = bases(3);
        let c = generate_from_images(b.clone(), &opts).unwrap();
        for q in &c.queries {
            let host = &b.iter().find(|(id, _)| Some(id) == q.entry.host_id.as_ref()).unwrap().1;
            assert_eq!(q.image, host.recompress_jpeg(85).unwrap());
            assert!(q.entry.donor_ids.is_empty());
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let opts = GenOptions {
            n_distractors: 3,
            n_composites: 3,
            seed: 11,
            ..GenOptions::default()
        };
        let a = generate_from_images(bases(12), &opts).unwrap();
        let b = generate_from_images(bases(12), &opts).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        assert!(a.queries.iter().zip(&b.queries).all(|(x, y)| x.jpeg == y.jpeg));
        let other = generate_from_images(bases(12), &GenOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a.manifest(), other.manifest());
        assert_eq!(parse_manifest(&a.manifest()).unwrap(), a.entries);
    }

    #[test]
    fn too_few_bases() {
        let opts = GenOptions {
            n_distractors: 5,
            n_composites: 2,
            donors_max: 2,
            ..GenOptions::default()
        };
        assert!(matches!(
            generate_from_images(bases(6), &opts),
            Err(Error::InsufficientBaseImages { needed: 11, available: 6 })
        ));
    }

    #[test]
    fn writes_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("base");
        std::fs::create_dir_all(&base).unwrap();
        for (id, img) in bases(5) {
            img.save(base.join(format!("{id}.png"))).unwrap();
        }
        let opts = GenOptions {
            n_distractors: 1,
            n_composites: 2,
            donors_min: 1,
            donors_max: 1,
            ..GenOptions::default()
        };
        let out = dir.path().join("out");
        let c = generate_corpus(&base, &opts, &out).unwrap();
        let entries = read_manifest(out.join("manifest.jsonl")).unwrap();
        assert_eq!(entries, c.entries);
        for e in &entries {
            let img = load_image(out.join(&e.path)).unwrap();
            if e.role == ImageRole::Query {
                assert_eq!(img, c.queries.iter().find(|q| q.entry.image_id == e.image_id).unwrap().image);
            }
        }
    }
}
