//! Dense feature maps and the correlation primitives built on them.
//!
//! Layout is row-major with channels innermost, so one template row of
//! `width * channels` values is a contiguous slice. The blocked kernel in
//! [`xcorr`] relies on that: every output cell is a sum of `height`
//! contiguous dot products.

use crate::error::{Result, TrackError};

/// Dense `width x height x channels` block of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(TrackError::dim(format!(
                "feature map dims must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(TrackError::dim(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TrackError::arg(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    /// Channel vector stored at cell `(x, y)`.
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let start = self.index(x, y, 0);
        &self.data[start..start + self.channels]
    }

    pub(crate) fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let start = self.index(x, y, 0);
        &mut self.data[start..start + self.channels]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn row(&self, y: usize) -> &[f64] {
        let stride = self.width * self.channels;
        &self.data[y * stride..(y + 1) * stride]
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }
}

/// Scalar response grid produced by correlation or windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ResponseMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(TrackError::dim("response map dims must be positive"));
        }
        if values.len() != width * height {
            return Err(TrackError::dim(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `(x, y, value)` of the largest entry; earliest row-major index wins ties.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width, self.values[best])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrConfig {
    pub bias: f64,
    pub window_weight: f64,
}

impl Default for CorrConfig {
    fn default() -> Self {
        Self {
            bias: 0.0,
            window_weight: 0.4,
        }
    }
}

impl CorrConfig {
    pub fn validate(&self) -> Result<()> {
        check_weight(self.window_weight)?;
        if !self.bias.is_finite() {
            return Err(TrackError::arg("bias must be finite"));
        }
        Ok(())
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(TrackError::arg(format!(
            "window weight {weight} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_corr_dims(template: &FeatureMap, search: &FeatureMap) -> Result<()> {
    if template.channels != search.channels {
        return Err(TrackError::dim(format!(
            "channel mismatch: template {} vs search {}",
            template.channels, search.channels
        )));
    }
    if template.width > search.width || template.height > search.height {
        return Err(TrackError::dim(format!(
            "template {}x{} larger than search {}x{}",
            template.width, template.height, search.width, search.height
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators let the compiler keep the loop vectorized.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Valid-mode cross correlation plus a constant bias.
///
/// Output is `(W - w + 1) x (H - h + 1)`. Each output cell is the sum of
/// `h` contiguous row dot products of length `w * channels`.
pub fn xcorr(template: &FeatureMap, search: &FeatureMap, bias: f64) -> Result<ResponseMap> {
    check_corr_dims(template, search)?;
    let out_w = search.width - template.width + 1;
    let out_h = search.height - template.height + 1;
    let c = template.channels;
    let row_len = template.width * c;
    let mut values = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for ty in 0..template.height {
                let srow = search.row(oy + ty);
                acc += dot(template.row(ty), &srow[ox * c..ox * c + row_len]);
            }
            values.push(acc + bias);
        }
    }
    ResponseMap::new(out_w, out_h, values)
}

/// Straightforward four-deep loop; the measured baseline for [`xcorr`].
pub fn xcorr_direct(template: &FeatureMap, search: &FeatureMap, bias: f64) -> Result<ResponseMap> {
    check_corr_dims(template, search)?;
    let out_w = search.width - template.width + 1;
    let out_h = search.height - template.height + 1;
    let mut values = vec![0.0; out_w * out_h];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for ty in 0..template.height {
                for tx in 0..template.width {
                    for ch in 0..template.channels {
                        acc += template.get(tx, ty, ch) * search.get(ox + tx, oy + ty, ch);
                    }
                }
            }
            values[oy * out_w + ox] = acc + bias;
        }
    }
    ResponseMap::new(out_w, out_h, values)
}

/// Correlation of two equally sized maps: the single-cell case of [`xcorr`].
pub fn correlate_aligned(a: &FeatureMap, b: &FeatureMap, bias: f64) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(TrackError::dim(format!(
            "aligned correlation needs equal dims, got {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(dot(&a.data, &b.data) + bias)
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            // Evaluate on the nearer half so the window is exactly symmetric.
            let k = i.min(n - 1 - i) as f64;
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * k / denom).cos()
        })
        .collect()
}

/// Outer product of two 1-D Hann windows.
pub fn cosine_window(width: usize, height: usize) -> Result<ResponseMap> {
    if width == 0 || height == 0 {
        return Err(TrackError::dim(format!(
            "window dims must be positive, got {width}x{height}"
        )));
    }
    let wx = hann(width);
    let wy = hann(height);
    let values = wy
        .iter()
        .flat_map(|y| wx.iter().map(move |x| y * x))
        .collect();
    ResponseMap::new(width, height, values)
}

/// `(1 - weight) * response + weight * window`, elementwise.
pub fn apply_window(response: &ResponseMap, window: &ResponseMap, weight: f64) -> Result<ResponseMap> {
    check_weight(weight)?;
    if response.width != window.width || response.height != window.height {
        return Err(TrackError::dim(format!(
            "response {}x{} vs window {}x{}",
            response.width, response.height, window.width, window.height
        )));
    }
    let values = response
        .values
        .iter()
        .zip(&window.values)
        .map(|(r, w)| (1.0 - weight) * r + weight * w)
        .collect();
    ResponseMap::new(response.width, response.height, values)
}

/// Elementwise weighted sum of equally shaped maps.
pub fn linear_combine(maps: &[(&FeatureMap, f64)]) -> Result<FeatureMap> {
    let (first, _) = maps
        .first()
        .ok_or_else(|| TrackError::arg("linear_combine needs at least one map"))?;
    let mut out = vec![0.0; first.data.len()];
    for (map, coeff) in maps {
        if !map.same_dims(first) {
            return Err(TrackError::dim(format!(
                "linear_combine dims {:?} vs {:?}",
                map.dims(),
                first.dims()
            )));
        }
        for (o, v) in out.iter_mut().zip(&map.data) {
            *o += coeff * v;
        }
    }
    Ok(FeatureMap {
        width: first.width,
        height: first.height,
        channels: first.channels,
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, c: usize, f: impl Fn(usize) -> f64) -> FeatureMap {
        FeatureMap::new(w, h, c, (0..w * h * c).map(f).collect()).unwrap()
    }

    #[test]
    fn degenerate_dot_product() {
        let t = FeatureMap::new(1, 1, 1, vec![3.0]).unwrap();
        let s = FeatureMap::new(1, 1, 1, vec![2.0]).unwrap();
        let r = xcorr(&t, &s, 0.0).unwrap();
        assert_eq!(r.values(), &[6.0]);
    }

    #[test]
    fn zero_template_yields_bias() {
        let t = FeatureMap::zeros(2, 3, 2);
        let s = map(5, 6, 2, |i| (i as f64).sin());
        let r = xcorr(&t, &s, 0.5).unwrap();
        assert_eq!((r.width(), r.height()), (4, 4));
        assert!(r.values().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn dimension_errors() {
        let t = FeatureMap::zeros(3, 3, 2);
        assert!(matches!(
            xcorr(&t, &FeatureMap::zeros(5, 5, 3), 0.0),
            Err(TrackError::Dimension(_))
        ));
        assert!(matches!(
            xcorr(&t, &FeatureMap::zeros(2, 5, 2), 0.0),
            Err(TrackError::Dimension(_))
        ));
        assert!(FeatureMap::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn windows() {
        assert_eq!(cosine_window(1, 1).unwrap().values(), &[1.0]);
        let w = cosine_window(3, 3).unwrap();
        assert_eq!(w.get(0, 0), 0.0);
        assert_eq!(w.get(2, 2), 0.0);
        assert_eq!(w.get(1, 1), 1.0);
        let w = cosine_window(17, 17).unwrap();
        for y in 0..17 {
            for x in 0..17 {
                assert_eq!(w.get(x, y), w.get(16 - x, y));
                assert_eq!(w.get(x, y), w.get(x, 16 - y));
                assert!((0.0..=1.0).contains(&w.get(x, y)));
            }
        }
        assert_eq!(w.argmax(), (8, 8, 1.0));
        assert!(cosine_window(0, 3).is_err());
    }

    #[test]
    fn window_mixing() {
        let r = ResponseMap::new(2, 1, vec![0.3, 0.9]).unwrap();
        let w = ResponseMap::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(apply_window(&r, &w, 0.0).unwrap(), r);
        assert_eq!(apply_window(&r, &w, 1.0).unwrap(), w);
        assert!(apply_window(&r, &w, 1.5).is_err());
        let other = ResponseMap::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            apply_window(&r, &other, 0.4),
            Err(TrackError::Dimension(_))
        ));
    }

    #[test]
    fn combine_identity_and_cancellation() {
        let m = map(3, 2, 2, |i| i as f64 * 0.25 - 1.0);
        assert_eq!(linear_combine(&[(&m, 1.0)]).unwrap(), m);
        let z = linear_combine(&[(&m, 1.0), (&m, -1.0)]).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        assert!(matches!(linear_combine(&[]), Err(TrackError::Argument(_))));
        let other = FeatureMap::zeros(2, 3, 2);
        assert!(matches!(
            linear_combine(&[(&m, 1.0), (&other, 1.0)]),
            Err(TrackError::Dimension(_))
        ));
    }

    #[test]
    fn blocked_kernel_matches_direct() {
        let t = map(3, 2, 5, |i| ((i * 7 % 11) as f64) - 5.0);
        let s = map(9, 6, 5, |i| ((i * 13 % 17) as f64) * 0.5 - 4.0);
        let a = xcorr(&t, &s, 0.25).unwrap();
        let b = xcorr_direct(&t, &s, 0.25).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
