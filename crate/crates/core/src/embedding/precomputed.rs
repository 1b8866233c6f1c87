use std::collections::HashMap;

use super::{
    check_exemplar_box, check_region, sample_bilinear, BBox, DafmRecord, EmbeddingProvider, Extent, Frame, Geometry,
};
use crate::corr::FeatureMap;
use crate::error::{Result, TrackError};

/// Frame-level feature maps computed elsewhere and loaded from a DAFM file.
///
/// Each record covers its whole frame: cell `(j, i)` sits at pixel
/// `((j + 0.5) * stride, (i + 0.5) * stride)`. Exemplar and search maps are
/// bilinear samples of that grid, zero outside it.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    geometry: Geometry,
    channels: usize,
    records: HashMap<u32, FeatureMap>,
}

impl PrecomputedProvider {
    pub fn new(geometry: Geometry, records: Vec<DafmRecord>) -> Result<Self> {
        geometry.validate()?;
        let channels = records
            .first()
            .map(|r| r.map.channels())
            .ok_or_else(|| TrackError::arg("precomputed provider needs at least one record"))?;
        let mut by_id = HashMap::with_capacity(records.len());
        for rec in records {
            if rec.map.channels() != channels {
                return Err(TrackError::dim(format!(
                    "record for frame {} has {} channels, expected {channels}",
                    rec.frame_id,
                    rec.map.channels()
                )));
            }
            if by_id.insert(rec.frame_id, rec.map).is_some() {
                return Err(TrackError::arg(format!("duplicate record for frame {}", rec.frame_id)));
            }
        }
        Ok(Self {
            geometry,
            channels,
            records: by_id,
        })
    }

    /// Pixel extent covered by a frame's record.
    pub fn extent_of(&self, frame_id: u32) -> Option<Extent> {
        self.records.get(&frame_id).map(|m| {
            Extent::new(
                m.width() as f64 * self.geometry.stride,
                m.height() as f64 * self.geometry.stride,
            )
        })
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn record(&self, frame: &Frame) -> Result<&FeatureMap> {
        self.records
            .get(&frame.id)
            .ok_or_else(|| TrackError::arg(format!("no precomputed record for frame {}", frame.id)))
    }

    fn sample(&self, rec: &FeatureMap, xs: &[f64], ys: &[f64]) -> FeatureMap {
        let s = self.geometry.stride;
        let mut out = FeatureMap::zeros(xs.len(), ys.len(), self.channels);
        for (iy, &y) in ys.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                sample_bilinear(rec, x / s - 0.5, y / s - 0.5, out.cell_mut(ix, iy));
            }
        }
        out
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn embed_exemplar(&self, frame: &Frame, bbox: &BBox) -> Result<FeatureMap> {
        check_exemplar_box(frame, bbox)?;
        let rec = self.record(frame)?;
        let xs = self.geometry.exemplar_positions(bbox.cx);
        let ys = self.geometry.exemplar_positions(bbox.cy);
        Ok(self.sample(rec, &xs, &ys))
    }

    fn embed_search(&self, frame: &Frame, center: (f64, f64), region_size: u32) -> Result<FeatureMap> {
        check_region(region_size)?;
        let rec = self.record(frame)?;
        let xs = self.geometry.search_positions(center.0, region_size);
        let ys = self.geometry.search_positions(center.1, region_size);
        Ok(self.sample(rec, &xs, &ys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{read_dafm, write_dafm};

    #[test]
    fn exemplar_over_whole_record_is_bit_exact() {
        let g = Geometry::default();
        let values: Vec<f64> = (0..6 * 6 * 2).map(|i| (i as f32 * 0.37 - 5.0) as f64).collect();
        let map = FeatureMap::new(6, 6, 2, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.dafm");
        write_dafm(&path, &[DafmRecord { frame_id: 7, map: map.clone() }]).unwrap();
        let p = PrecomputedProvider::new(g, read_dafm(&path).unwrap()).unwrap();
        let extent = p.extent_of(7).unwrap();
        assert_eq!(extent, Extent::new(48.0, 48.0));
        let frame = Frame::precomputed(7, extent);
        // Exemplar cell 3 sits on the box centre; cell 0 must land on (0.5 * stride).
        let z = p.embed_exemplar(&frame, &BBox::new(28.0, 28.0, 16.0, 16.0).unwrap()).unwrap();
        assert_eq!(z, map);
        let missing = Frame::precomputed(8, extent);
        assert!(p.embed_search(&missing, (24.0, 24.0), 255).is_err());
    }
}
