//! Pluggable embedding functions: everything that turns a frame into
//! feature maps lives behind [`EmbeddingProvider`].
//!
//! All providers share one [`Geometry`]: a feature cell every `stride`
//! pixels, an exemplar of `exemplar_cells` squared cells centred on the
//! target, and search grids sized so that a 255 px region yields a 17x17
//! response.

mod dafm;
mod patch;
mod precomputed;
mod synthetic;

use std::sync::Arc;

use crate::corr::FeatureMap;
use crate::error::{Result, TrackError};

pub use dafm::{read_dafm, read_dafm_from, write_dafm, write_dafm_to, DafmRecord, DAFM_MAGIC, DAFM_VERSION};
pub use patch::{GrayImage, PatchProvider};
pub use precomputed::PrecomputedProvider;
pub use synthetic::{EntityState, SceneFrame, SyntheticProvider};

/// Axis-aligned box given by centre and size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(TrackError::arg(format!(
                "box size must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        if ![self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(TrackError::arg("box coordinates must be finite"));
        }
        Ok(())
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn with_center(&self, cx: f64, cy: f64) -> Self {
        Self { cx, cy, ..*self }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    /// True when the box shares positive area with `[0, width) x [0, height)`.
    pub fn intersects_extent(&self, extent: Extent) -> bool {
        self.x1() > 0.0 && self.y1() > 0.0 && self.x0() < extent.width && self.y0() < extent.height
    }
}

/// Frame size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub width: f64,
    pub height: f64,
}

impl Extent {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width && y < self.height
    }
}

#[derive(Debug, Clone)]
pub enum FramePayload {
    Synthetic(SceneFrame),
    Image(Arc<GrayImage>),
    /// Features are looked up by frame id in a [`PrecomputedProvider`].
    Precomputed,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u32,
    pub extent: Extent,
    pub payload: FramePayload,
}

impl Frame {
    pub fn synthetic(id: u32, extent: Extent, scene: SceneFrame) -> Self {
        Self {
            id,
            extent,
            payload: FramePayload::Synthetic(scene),
        }
    }

    pub fn image(id: u32, image: Arc<GrayImage>) -> Self {
        let extent = Extent::new(image.width() as f64, image.height() as f64);
        Self {
            id,
            extent,
            payload: FramePayload::Image(image),
        }
    }

    pub fn precomputed(id: u32, extent: Extent) -> Self {
        Self {
            id,
            extent,
            payload: FramePayload::Precomputed,
        }
    }
}

/// Grid arithmetic shared by every provider and by the proposal stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Pixels between neighbouring feature cells.
    pub stride: f64,
    /// Exemplar side length in cells.
    pub exemplar_cells: usize,
    /// Pixel context an exemplar stands for; the response grid counts the
    /// stride-spaced placements of this context inside the search region.
    pub exemplar_context: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            stride: 8.0,
            exemplar_cells: 6,
            exemplar_context: 127.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride > 0.0) || self.exemplar_cells == 0 || !(self.exemplar_context > 0.0) {
            return Err(TrackError::arg(format!("invalid geometry {self:?}")));
        }
        Ok(())
    }

    /// Side of the (always odd) response grid for a square search region.
    pub fn response_dim(&self, region_size: u32) -> usize {
        let span = (region_size as f64 - self.exemplar_context).max(0.0);
        2 * (span / (2.0 * self.stride)).floor() as usize + 1
    }

    /// Side of the search feature map for a square search region.
    pub fn search_dim(&self, region_size: u32) -> usize {
        self.response_dim(region_size) + self.exemplar_cells - 1
    }

    /// Index of the exemplar cell that sits on the box centre.
    pub fn exemplar_anchor(&self) -> usize {
        self.exemplar_cells / 2
    }

    /// Index of the search cell that sits on the region centre.
    pub fn search_anchor(&self, region_size: u32) -> usize {
        self.exemplar_anchor() + (self.response_dim(region_size) - 1) / 2
    }

    /// Pixel offset from the region centre of response cell `r`.
    pub fn response_offset(&self, r: usize, region_size: u32) -> f64 {
        let half = (self.response_dim(region_size) - 1) / 2;
        (r as f64 - half as f64) * self.stride
    }

    /// Pixel positions of the search cells along one axis.
    pub fn search_positions(&self, center: f64, region_size: u32) -> Vec<f64> {
        let anchor = self.search_anchor(region_size) as f64;
        (0..self.search_dim(region_size))
            .map(|j| center + (j as f64 - anchor) * self.stride)
            .collect()
    }

    /// Pixel positions of the exemplar cells along one axis.
    pub fn exemplar_positions(&self, center: f64) -> Vec<f64> {
        let anchor = self.exemplar_anchor() as f64;
        (0..self.exemplar_cells)
            .map(|i| center + (i as f64 - anchor) * self.stride)
            .collect()
    }

    /// Box in search-map cell coordinates (unit cells, centres at `j + 0.5`)
    /// whose exemplar-sized crop is laid out like [`Self::exemplar_positions`]
    /// around a pixel position; `scale` stretches the crop.
    pub fn map_box(
        &self,
        region_center: (f64, f64),
        region_size: u32,
        target: (f64, f64),
        scale: f64,
    ) -> BBox {
        let anchor = self.search_anchor(region_size) as f64;
        let e = self.exemplar_cells as f64;
        let side = e * scale;
        // Shift so the sample of exemplar cell `exemplar_anchor()` lands on
        // the target (matters for even exemplar sizes).
        let shift = 0.5 - scale * (self.exemplar_anchor() as f64 + 0.5 - e / 2.0);
        BBox {
            cx: anchor + (target.0 - region_center.0) / self.stride + shift,
            cy: anchor + (target.1 - region_center.1) / self.stride + shift,
            w: side,
            h: side,
        }
    }
}

/// The embedding function: exemplar and search feature maps from frames.
pub trait EmbeddingProvider: Send + Sync {
    fn geometry(&self) -> &Geometry;

    fn channels(&self) -> usize;

    fn exemplar_size(&self) -> usize {
        self.geometry().exemplar_cells
    }

    /// `exemplar_cells x exemplar_cells x channels` map centred on `bbox`.
    fn embed_exemplar(&self, frame: &Frame, bbox: &BBox) -> Result<FeatureMap>;

    /// Square search map centred on `center`; see [`Geometry::search_dim`].
    fn embed_search(&self, frame: &Frame, center: (f64, f64), region_size: u32) -> Result<FeatureMap>;
}

macro_rules! forward_provider {
    ($($ty:ty),*) => {$(
        impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for $ty {
            fn geometry(&self) -> &Geometry {
                (**self).geometry()
            }

            fn channels(&self) -> usize {
                (**self).channels()
            }

            fn embed_exemplar(&self, frame: &Frame, bbox: &BBox) -> Result<FeatureMap> {
                (**self).embed_exemplar(frame, bbox)
            }

            fn embed_search(&self, frame: &Frame, center: (f64, f64), region_size: u32) -> Result<FeatureMap> {
                (**self).embed_search(frame, center, region_size)
            }
        }
    )*};
}

forward_provider!(&T, Box<T>, Arc<T>);

pub(crate) fn check_exemplar_box(frame: &Frame, bbox: &BBox) -> Result<()> {
    bbox.validate()?;
    if !bbox.intersects_extent(frame.extent) {
        return Err(TrackError::OutOfExtent(format!(
            "box {bbox:?} vs frame {}x{}",
            frame.extent.width, frame.extent.height
        )));
    }
    Ok(())
}

pub(crate) fn check_region(region_size: u32) -> Result<()> {
    if region_size == 0 {
        return Err(TrackError::arg("search region size must be positive"));
    }
    Ok(())
}

/// Bilinear sample of all channels at fractional cell index `(u, v)`,
/// where integer indices hit cell centres. Cells outside the map read as
/// zero.
pub(crate) fn sample_bilinear(map: &FeatureMap, u: f64, v: f64, out: &mut [f64]) {
    let (w, h, c) = map.dims();
    let x0 = u.floor();
    let y0 = v.floor();
    let tx = u - x0;
    let ty = v - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    let fetch = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            map.get(x as usize, y as usize, ch)
        }
    };
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let a = fetch(x0, y0, ch);
        let b = fetch(x0 + 1, y0, ch);
        let top = a + tx * (b - a);
        let cc = fetch(x0, y0 + 1, ch);
        let d = fetch(x0 + 1, y0 + 1, ch);
        let bottom = cc + tx * (d - cc);
        *o = top + ty * (bottom - top);
    }
}

/// Bilinear resample of the boxed region to `out_w x out_h`.
///
/// `bbox` is in map cell coordinates: cell `(x, y)` covers
/// `[x, x + 1) x [y, y + 1)`. Samples are taken at output cell centres;
/// the map is zero-padded outside its extent.
pub fn crop_and_resize(map: &FeatureMap, bbox: &BBox, out_w: usize, out_h: usize) -> Result<FeatureMap> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(TrackError::arg(format!(
            "crop box has zero area: {}x{}",
            bbox.w, bbox.h
        )));
    }
    if out_w == 0 || out_h == 0 {
        return Err(TrackError::arg("crop output dims must be positive"));
    }
    let extent = Extent::new(map.width() as f64, map.height() as f64);
    if !bbox.intersects_extent(extent) {
        return Err(TrackError::OutOfExtent(format!(
            "crop box {bbox:?} misses {}x{} map",
            map.width(),
            map.height()
        )));
    }
    let c = map.channels();
    let mut out = FeatureMap::zeros(out_w, out_h, c);
    let step_x = bbox.w / out_w as f64;
    let step_y = bbox.h / out_h as f64;
    for oy in 0..out_h {
        let v = bbox.y0() + (oy as f64 + 0.5) * step_y - 0.5;
        for ox in 0..out_w {
            let u = bbox.x0() + (ox as f64 + 0.5) * step_x - 0.5;
            sample_bilinear(map, u, v, out.cell_mut(ox, oy));
        }
    }
    Ok(out)
}
