use super::{check_exemplar_box, check_region, BBox, EmbeddingProvider, Frame, FramePayload, Geometry};
use crate::corr::FeatureMap;
use crate::error::{Result, TrackError};

/// Single-channel intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(TrackError::dim(format!(
                "image {width}x{height} with {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Grayscale block averages, one per feature cell, normalised per patch to
/// zero mean and unit norm.
#[derive(Debug, Clone, Default)]
pub struct PatchProvider {
    geometry: Geometry,
}

impl PatchProvider {
    pub fn new(geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        Ok(Self { geometry })
    }

    fn image<'a>(&self, frame: &'a Frame) -> Result<&'a GrayImage> {
        match &frame.payload {
            FramePayload::Image(img) => Ok(img),
            _ => Err(TrackError::arg("patch provider needs an image frame")),
        }
    }

    /// Mean intensity of the stride-sized block centred at `(x, y)`; pixels
    /// outside the image read as `pad`.
    fn block_mean(&self, img: &GrayImage, x: f64, y: f64, pad: f64) -> f64 {
        let half = self.geometry.stride / 2.0;
        let x0 = (x - half).round() as i64;
        let y0 = (y - half).round() as i64;
        let n = self.geometry.stride.round().max(1.0) as i64;
        let mut sum = 0.0;
        for py in y0..y0 + n {
            for px in x0..x0 + n {
                sum += if px < 0 || py < 0 || px >= img.width as i64 || py >= img.height as i64 {
                    pad
                } else {
                    img.get(px as usize, py as usize) as f64
                };
            }
        }
        sum / (n * n) as f64
    }

    fn render(&self, img: &GrayImage, xs: &[f64], ys: &[f64]) -> FeatureMap {
        let pad = img.mean();
        let mut values: Vec<f64> = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .map(|(x, y)| self.block_mean(img, x, y, pad))
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        FeatureMap::new(xs.len(), ys.len(), 1, values).expect("dims are consistent")
    }
}

impl EmbeddingProvider for PatchProvider {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn channels(&self) -> usize {
        1
    }

    fn embed_exemplar(&self, frame: &Frame, bbox: &BBox) -> Result<FeatureMap> {
        check_exemplar_box(frame, bbox)?;
        let img = self.image(frame)?;
        let xs = self.geometry.exemplar_positions(bbox.cx);
        let ys = self.geometry.exemplar_positions(bbox.cy);
        Ok(self.render(img, &xs, &ys))
    }

    fn embed_search(&self, frame: &Frame, center: (f64, f64), region_size: u32) -> Result<FeatureMap> {
        check_region(region_size)?;
        let img = self.image(frame)?;
        let xs = self.geometry.search_positions(center.0, region_size);
        let ys = self.geometry.search_positions(center.1, region_size);
        Ok(self.render(img, &xs, &ys))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    #[test]
    fn constant_image_normalises_to_zero() {
        let img = GrayImage::new(64, 48, vec![0.7; 64 * 48]).unwrap();
        let frame = Frame::image(0, Arc::new(img));
        let p = PatchProvider::default();
        let z = p.embed_exemplar(&frame, &BBox::new(32.0, 24.0, 16.0, 16.0).unwrap()).unwrap();
        assert_eq!(z.dims(), (6, 6, 1));
        assert!(z.data().iter().all(|v| *v == 0.0));
        // Off-frame area pads with the mean, so it stays constant too.
        let x = p.embed_search(&frame, (0.0, 0.0), 255).unwrap();
        assert!(x.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bright_square_is_found_by_correlation() {
        let mut data = vec![0.1f32; 96 * 96];
        for y in 40..56 {
            for x in 60..76 {
                data[y * 96 + x] = 0.9;
            }
        }
        let frame = Frame::image(0, Arc::new(GrayImage::new(96, 96, data).unwrap()));
        let p = PatchProvider::default();
        let z = p.embed_exemplar(&frame, &BBox::new(68.0, 48.0, 16.0, 16.0).unwrap()).unwrap();
        let norm: f64 = z.data().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
        let x = p.embed_search(&frame, (52.0, 48.0), 255).unwrap();
        let r = crate::corr::xcorr(&z, &x, 0.0).unwrap();
        let (ax, ay, _) = r.argmax();
        assert_eq!((ax, ay), (10, 8));
    }
}
