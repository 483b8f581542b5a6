//! Browser demo: builds a small procedural gallery, splices a donor patch
//! into a host and runs the two-tier query on it.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use provfilter::annindex::{Backend, IndexHandle};
use provfilter::config::Config;
use provfilter::evalharness::synth::render_base_image;
use provfilter::imagecore::{RasterImage, Rect};
use provfilter::pipeline::{run_query, FeatureStore, ImageSource, ProvenanceResult};

pub const WIDTH: usize = 192;
pub const HEIGHT: usize = 144;

#[wasm_bindgen]
pub struct Demo {
    gallery: Vec<(String, RasterImage)>,
    store: FeatureStore,
    index: IndexHandle,
    config: Config,
    query: Option<RasterImage>,
    last: Option<ProvenanceResult>,
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Renders `count` gallery images and indexes them with `backend`.
    #[wasm_bindgen(constructor)]
    pub fn new(count: usize, seed: u32, backend: &str) -> Result<Demo, JsError> {
        let mut config = Config::default();
        config.index.backend = backend.parse::<Backend>().map_err(js_err)?;
        config.budgets.index = 300;
        config.budgets.query = 300;
        let count = count.clamp(2, 200);
        let gallery: Vec<(String, RasterImage)> = (0..count)
            .map(|i| (format!("img{i:03}"), render_base_image(WIDTH, HEIGHT, seed as u64 * 1000 + i as u64)))
            .collect();
        let items = gallery
            .iter()
            .map(|(id, img)| (id.clone(), ImageSource::Memory(Arc::new(img.clone()))))
            .collect();
        let store = FeatureStore::extract(items, config.budgets.index, &config.detector).map_err(js_err)?;
        let index = store.build_index(&config).map_err(js_err)?;
        Ok(Demo {
            gallery,
            store,
            index,
            config,
            query: None,
            last: None,
        })
    }

    pub fn width(&self) -> usize {
        WIDTH
    }

    pub fn height(&self) -> usize {
        HEIGHT
    }

    pub fn len(&self) -> usize {
        self.gallery.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gallery.is_empty()
    }

    pub fn image_id(&self, i: usize) -> String {
        self.gallery[i.min(self.gallery.len() - 1)].0.clone()
    }

    pub fn image_rgba(&self, i: usize) -> Vec<u8> {
        self.gallery[i.min(self.gallery.len() - 1)].1.to_rgba()
    }

    /// Index summary as JSON.
    pub fn stats(&self) -> String {
        let s = self.index.stats();
        format!(
            "{{\"backend\":\"{}\",\"descriptors\":{},\"images\":{},\"memory_bytes\":{},\"build_seconds\":{:.4}}}",
            s.backend,
            s.n,
            self.store.len(),
            s.memory_bytes,
            s.build_seconds
        )
    }

    /// Copies a `size`-square patch from the donor's center onto the host
    /// centered at (x, y), then re-encodes as JPEG. Returns the query RGBA.
    pub fn compose(&mut self, host: usize, donor: usize, x: usize, y: usize, size: usize) -> Result<Vec<u8>, JsError> {
        let n = self.gallery.len();
        let (h, d) = (&self.gallery[host % n].1, &self.gallery[donor % n].1);
        let size = size.clamp(8, HEIGHT);
        let (sx, sy) = ((WIDTH - size) / 2, (HEIGHT - size) / 2);
        let patch = d
            .crop(Rect::from_origin_size(sx as i64, sy as i64, size as i64, size as i64))
            .ok_or_else(|| JsError::new("patch outside donor"))?;
        let x0 = x.saturating_sub(size / 2).min(WIDTH - size);
        let y0 = y.saturating_sub(size / 2).min(HEIGHT - size);
        let mut q = h.clone();
        for py in 0..size {
            for px in 0..size {
                for c in 0..3 {
                    q.set(x0 + px, y0 + py, c, patch.get(px, py, c));
                }
            }
        }
        let q = q.recompress_jpeg(85).map_err(js_err)?;
        let rgba = q.to_rgba();
        self.query = Some(q);
        self.last = None;
        Ok(rgba)
    }

    /// Uses an unmodified gallery image as the query.
    pub fn select(&mut self, i: usize) -> Vec<u8> {
        let img = self.gallery[i % self.gallery.len()].1.clone();
        let rgba = img.to_rgba();
        self.query = Some(img);
        self.last = None;
        rgba
    }

    /// Runs both tiers on the current query; returns the result JSON.
    pub fn run(&mut self) -> Result<String, JsError> {
        let q = self.query.as_ref().ok_or_else(|| JsError::new("compose or select a query first"))?;
        let r = run_query("query", q, &self.index, &self.store, &self.config).map_err(js_err)?;
        let json = r.to_json();
        self.last = Some(r);
        Ok(json)
    }

    /// Mask of the last query as RGBA, red over transparent; empty when
    /// no mask was computed.
    pub fn mask_rgba(&self) -> Vec<u8> {
        let Some(mask) = self.last.as_ref().and_then(|r| r.mask.as_ref()) else {
            return Vec::new();
        };
        mask.bits()
            .into_iter()
            .flat_map(|on| if on { [230, 40, 40, 150] } else { [0, 0, 0, 0] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_then_query() {
        let mut d = Demo::new(12, 1, "kdforest").unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.image_rgba(0).len(), WIDTH * HEIGHT * 4);
        let q = d.compose(2, 7, 130, 90, 56).unwrap();
        assert_eq!(q.len(), WIDTH * HEIGHT * 4);
        let json: serde_json::Value = serde_json::from_str(&d.run().unwrap()).unwrap();
        assert_eq!(json["r_best"], "img002");
        assert_eq!(d.mask_rgba().len(), WIDTH * HEIGHT * 4);
    }

    #[test]
    fn selected_image_is_a_near_duplicate() {
        let mut d = Demo::new(8, 2, "brute").unwrap();
        d.select(5);
        let json: serde_json::Value = serde_json::from_str(&d.run().unwrap()).unwrap();
        assert_eq!(json["verdict"], "near_duplicate");
        assert_eq!(json["r_best"], "img005");
    }
}
