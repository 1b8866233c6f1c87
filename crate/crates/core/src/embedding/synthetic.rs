use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_exemplar_box, check_region, BBox, EmbeddingProvider, Frame, FramePayload, Geometry};
use crate::corr::FeatureMap;
use crate::error::{Result, TrackError};

/// One visible entity in a synthetic frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityState {
    pub signature: Arc<[f64]>,
    pub bbox: BBox,
}

/// Ground-truth content of a synthetic frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub entities: Vec<EntityState>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

/// Renders each entity's signature vector as a separable Gaussian
/// footprint sampled at feature-cell centres, plus additive Gaussian noise.
///
/// The footprint's standard deviation along each axis is
/// `footprint * box side`, so a cell lying exactly on an entity centre
/// carries that entity's signature unchanged.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    geometry: Geometry,
    channels: usize,
    footprint: f64,
}

impl SyntheticProvider {
    pub fn new(geometry: Geometry, channels: usize, footprint: f64) -> Result<Self> {
        geometry.validate()?;
        if channels == 0 {
            return Err(TrackError::arg("synthetic provider needs at least one channel"));
        }
        if !(footprint > 0.0) {
            return Err(TrackError::arg("footprint must be positive"));
        }
        Ok(Self {
            geometry,
            channels,
            footprint,
        })
    }

    pub fn footprint(&self) -> f64 {
        self.footprint
    }

    fn scene<'a>(&self, frame: &'a Frame) -> Result<&'a SceneFrame> {
        match &frame.payload {
            FramePayload::Synthetic(scene) => {
                if let Some(e) = scene.entities.iter().find(|e| e.signature.len() != self.channels) {
                    return Err(TrackError::dim(format!(
                        "entity signature has {} channels, provider expects {}",
                        e.signature.len(),
                        self.channels
                    )));
                }
                Ok(scene)
            }
            _ => Err(TrackError::arg("synthetic provider needs a synthetic frame")),
        }
    }

    /// Whole-frame map with cell `(j, i)` at pixel `((j + 0.5) * stride, (i + 0.5) * stride)`,
    /// the layout read back by the precomputed provider.
    pub fn render_frame(&self, frame: &Frame) -> Result<FeatureMap> {
        let scene = self.scene(frame)?;
        let s = self.geometry.stride;
        let cells = |len: f64| -> Vec<f64> { (0..(len / s).ceil() as usize).map(|j| (j as f64 + 0.5) * s).collect() };
        let xs = cells(frame.extent.width);
        let ys = cells(frame.extent.height);
        if xs.is_empty() || ys.is_empty() {
            return Err(TrackError::dim("frame smaller than one cell"));
        }
        Ok(self.render(frame, scene, &xs, &ys, 3))
    }

    fn render(&self, frame: &Frame, scene: &SceneFrame, xs: &[f64], ys: &[f64], salt: u64) -> FeatureMap {
        let c = self.channels;
        let mut map = FeatureMap::zeros(xs.len(), ys.len(), c);
        for ent in &scene.entities {
            let sx = self.footprint * ent.bbox.w;
            let sy = self.footprint * ent.bbox.h;
            let reach_x = 4.0 * sx;
            let reach_y = 4.0 * sy;
            for (iy, &y) in ys.iter().enumerate() {
                let dy = y - ent.bbox.cy;
                if dy.abs() > reach_y {
                    continue;
                }
                let gy = (-(dy * dy) / (2.0 * sy * sy)).exp();
                for (ix, &x) in xs.iter().enumerate() {
                    let dx = x - ent.bbox.cx;
                    if dx.abs() > reach_x || !frame.extent.contains(x, y) {
                        continue;
                    }
                    let weight = gy * (-(dx * dx) / (2.0 * sx * sx)).exp();
                    for (o, s) in map.cell_mut(ix, iy).iter_mut().zip(ent.signature.iter()) {
                        *o += weight * s;
                    }
                }
            }
        }
        if scene.noise_sigma > 0.0 {
            let seed = mix(&[
                scene.noise_seed,
                frame.id as u64,
                salt,
                xs[0].to_bits(),
                ys[0].to_bits(),
                xs.len() as u64,
                ys.len() as u64,
            ]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, scene.noise_sigma).expect("finite sigma");
            for (iy, &y) in ys.iter().enumerate() {
                for (ix, &x) in xs.iter().enumerate() {
                    let inside = frame.extent.contains(x, y);
                    for o in map.cell_mut(ix, iy) {
                        let n = normal.sample(&mut rng);
                        if inside {
                            *o += n;
                        }
                    }
                }
            }
        }
        map
    }
}

/// SplitMix64-style fold used to derive per-call noise seeds.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

impl EmbeddingProvider for SyntheticProvider {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn embed_exemplar(&self, frame: &Frame, bbox: &BBox) -> Result<FeatureMap> {
        check_exemplar_box(frame, bbox)?;
        let scene = self.scene(frame)?;
        let xs = self.geometry.exemplar_positions(bbox.cx);
        let ys = self.geometry.exemplar_positions(bbox.cy);
        Ok(self.render(frame, scene, &xs, &ys, 1))
    }

    fn embed_search(&self, frame: &Frame, center: (f64, f64), region_size: u32) -> Result<FeatureMap> {
        check_region(region_size)?;
        let scene = self.scene(frame)?;
        let xs = self.geometry.search_positions(center.0, region_size);
        let ys = self.geometry.search_positions(center.1, region_size);
        Ok(self.render(frame, scene, &xs, &ys, 2))
    }
}
