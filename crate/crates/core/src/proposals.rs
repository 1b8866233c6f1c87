//! Anchors, regression decoding, windowed scoring, NMS and top-k.

use std::cmp::Ordering;

use crate::corr::{FeatureMap, ResponseMap};
use crate::embedding::BBox;
use crate::error::{Result, TrackError};

const DELTA_CLAMP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub base_size: f64,
    /// Width over height.
    pub ratios: Vec<f64>,
    pub scales: Vec<f64>,
    pub stride: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            base_size: 64.0,
            ratios: vec![1.0 / 3.0, 0.5, 1.0, 2.0, 3.0],
            scales: vec![1.0],
            stride: 8.0,
        }
    }
}

impl AnchorConfig {
    /// Anchors per grid cell.
    pub fn k(&self) -> usize {
        self.ratios.len() * self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.scales.is_empty() {
            return Err(TrackError::arg("anchor ratios and scales must be non-empty"));
        }
        if self.ratios.iter().chain(&self.scales).any(|v| !(*v > 0.0)) {
            return Err(TrackError::arg("anchor ratios and scales must be positive"));
        }
        if !(self.base_size > 0.0 && self.stride > 0.0) {
            return Err(TrackError::arg("anchor base size and stride must be positive"));
        }
        Ok(())
    }

    /// Anchor shapes `(w, h)` in the order anchors are laid out per cell.
    pub fn shapes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.k());
        for &ratio in &self.ratios {
            for &scale in &self.scales {
                let side = self.base_size * scale;
                let r = ratio.sqrt();
                out.push((side * r, side / r));
            }
        }
        out
    }
}

/// `rows * cols * k` anchors, ordered by row, then column, then anchor.
pub fn generate_anchors(
    cfg: &AnchorConfig,
    rows: usize,
    cols: usize,
    region_center: (f64, f64),
    region_size: u32,
) -> Result<Vec<BBox>> {
    cfg.validate()?;
    if rows == 0 || cols == 0 {
        return Err(TrackError::arg("anchor grid must have at least one row and column"));
    }
    if region_size == 0 {
        return Err(TrackError::arg("region size must be positive"));
    }
    let shapes = cfg.shapes();
    let half_r = (rows as f64 - 1.0) / 2.0;
    let half_c = (cols as f64 - 1.0) / 2.0;
    let mut anchors = Vec::with_capacity(rows * cols * shapes.len());
    for r in 0..rows {
        let cy = region_center.1 + (r as f64 - half_r) * cfg.stride;
        for c in 0..cols {
            let cx = region_center.0 + (c as f64 - half_c) * cfg.stride;
            anchors.extend(shapes.iter().map(|&(w, h)| BBox { cx, cy, w, h }));
        }
    }
    Ok(anchors)
}

/// Standard RPN box parameterisation; size deltas are clamped to `[-4, 4]`.
pub fn decode_deltas(anchor: &BBox, delta: [f64; 4]) -> BBox {
    let [dx, dy, dw, dh] = delta;
    BBox {
        cx: anchor.cx + dx * anchor.w,
        cy: anchor.cy + dy * anchor.h,
        w: anchor.w * dw.clamp(-DELTA_CLAMP, DELTA_CLAMP).exp(),
        h: anchor.h * dh.clamp(-DELTA_CLAMP, DELTA_CLAMP).exp(),
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Grid origin of a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    /// Window-mixed score used for ordering.
    pub score: f64,
    /// Calibrated similarity before window mixing.
    pub similarity: f64,
    pub cell: Cell,
    /// Proposal-aligned embedding, filled on demand.
    pub embedding: Option<FeatureMap>,
}

impl Proposal {
    pub fn new(bbox: BBox, score: f64, cell: Cell) -> Self {
        Self {
            bbox,
            score,
            similarity: score,
            cell,
            embedding: None,
        }
    }
}

/// Descending score, then ascending cell index.
pub fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.cell.cmp(&b.cell))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    /// One score per `(row, col, anchor)`.
    pub scores: Vec<f64>,
    /// `(dx, dy, dw, dh)` per `(row, col, anchor)`.
    pub deltas: Vec<[f64; 4]>,
}

impl ScoreGrid {
    pub fn new(rows: usize, cols: usize, k: usize, scores: Vec<f64>, deltas: Vec<[f64; 4]>) -> Result<Self> {
        let n = rows * cols * k;
        if n == 0 || scores.len() != n || deltas.len() != n {
            return Err(TrackError::dim(format!(
                "score grid {rows}x{cols}x{k} with {} scores and {} deltas",
                scores.len(),
                deltas.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            k,
            scores,
            deltas,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn cell_of(&self, i: usize) -> Cell {
        Cell {
            row: i / (self.cols * self.k),
            col: (i / self.k) % self.cols,
            anchor: i % self.k,
        }
    }
}

/// Deterministic stand-in for a learned classification/regression head.
///
/// Every cell's score is `calibrate(response)`. Its regression target is
/// the strongest response within `peak_radius` cells, refined to sub-cell
/// precision with a parabola through the peak and its neighbours, and
/// sized to `target_size`. Anchors near one object therefore decode onto
/// the same box, which NMS then collapses.
pub fn score_grid_from_response(
    response: &ResponseMap,
    anchors: &[BBox],
    k: usize,
    stride: f64,
    target_size: (f64, f64),
    peak_radius: usize,
    calibrate: impl Fn(f64) -> f64,
) -> Result<ScoreGrid> {
    let (cols, rows) = (response.width(), response.height());
    if anchors.len() != rows * cols * k {
        return Err(TrackError::dim(format!(
            "{} anchors for a {rows}x{cols}x{k} response",
            anchors.len()
        )));
    }
    let peaks = local_peaks(response, peak_radius);
    // Anchor shapes repeat per cell, so the size deltas do too.
    let size_deltas: Vec<(f64, f64)> = anchors[..k]
        .iter()
        .map(|a| ((target_size.0 / a.w).ln(), (target_size.1 / a.h).ln()))
        .collect();
    let mut scores = Vec::with_capacity(anchors.len());
    let mut deltas = Vec::with_capacity(anchors.len());
    for r in 0..rows {
        for c in 0..cols {
            let (px, py) = peaks[r * cols + c];
            let disp_x = (px - c as f64) * stride;
            let disp_y = (py - r as f64) * stride;
            let s = calibrate(response.get(c, r));
            for a in 0..k {
                let anchor = &anchors[(r * cols + c) * k + a];
                scores.push(s);
                deltas.push([disp_x / anchor.w, disp_y / anchor.h, size_deltas[a].0, size_deltas[a].1]);
            }
        }
    }
    ScoreGrid::new(rows, cols, k, scores, deltas)
}

/// Sub-cell position of the strongest response near each cell.
fn local_peaks(response: &ResponseMap, radius: usize) -> Vec<(f64, f64)> {
    let (w, h) = (response.width(), response.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut bx, mut by) = (x, y);
            for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                    if response.get(xx, yy) > response.get(bx, by) {
                        bx = xx;
                        by = yy;
                    }
                }
            }
            let ox = if bx > 0 && bx + 1 < w {
                parabola_offset(response.get(bx - 1, by), response.get(bx, by), response.get(bx + 1, by))
            } else {
                0.0
            };
            let oy = if by > 0 && by + 1 < h {
                parabola_offset(response.get(bx, by - 1), response.get(bx, by), response.get(bx, by + 1))
            } else {
                0.0
            };
            out.push((bx as f64 + ox, by as f64 + oy));
        }
    }
    out
}

fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * mid + right;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// One proposal per `(row, col, anchor)`: decoded box and window-mixed score.
pub fn score_grid_to_proposals(
    grid: &ScoreGrid,
    anchors: &[BBox],
    window: &ResponseMap,
    window_weight: f64,
) -> Result<Vec<Proposal>> {
    if anchors.len() != grid.len() {
        return Err(TrackError::dim(format!(
            "{} anchors for {} grid entries",
            anchors.len(),
            grid.len()
        )));
    }
    if window.width() != grid.cols || window.height() != grid.rows {
        return Err(TrackError::dim(format!(
            "window {}x{} vs grid {}x{}",
            window.width(),
            window.height(),
            grid.cols,
            grid.rows
        )));
    }
    if !(0.0..=1.0).contains(&window_weight) {
        return Err(TrackError::arg(format!("window weight {window_weight} outside [0, 1]")));
    }
    let out = (0..grid.len())
        .map(|i| {
            let cell = grid.cell_of(i);
            let raw = grid.scores[i];
            let score = (1.0 - window_weight) * raw + window_weight * window.get(cell.col, cell.row);
            Proposal {
                bbox: decode_deltas(&anchors[i], grid.deltas[i]),
                score,
                similarity: raw,
                cell,
                embedding: None,
            }
        })
        .collect();
    Ok(out)
}

/// Greedy NMS: keep a proposal iff its IoU with every kept one is at most
/// `iou_threshold`. Output is in [`rank_order`].
pub fn nms(proposals: Vec<Proposal>, iou_threshold: f64) -> Vec<Proposal> {
    if proposals.is_empty() {
        return proposals;
    }
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| rank_order(&proposals[a], &proposals[b]));
    // Buckets of side >= any box side: overlapping boxes share a bucket
    // or sit in neighbouring ones.
    let max_side = proposals.iter().map(|p| p.bbox.w.max(p.bbox.h)).fold(0.0, f64::max);
    let bucket = max_side.max(f64::MIN_POSITIVE);
    let key = |b: &BBox| ((b.cx / bucket).floor() as i64, (b.cy / bucket).floor() as i64);
    let keys: Vec<(i64, i64)> = proposals.iter().map(|p| key(&p.bbox)).collect();
    let (min_x, max_x) = keys.iter().fold((i64::MAX, i64::MIN), |(lo, hi), k| (lo.min(k.0), hi.max(k.0)));
    let (min_y, max_y) = keys.iter().fold((i64::MAX, i64::MIN), |(lo, hi), k| (lo.min(k.1), hi.max(k.1)));
    // One ring of padding so neighbour lookups never leave the grid.
    let gw = (max_x - min_x + 3) as usize;
    let gh = (max_y - min_y + 3) as usize;
    let mut kept: Vec<usize> = Vec::new();
    if gw.saturating_mul(gh) > 4 * proposals.len() + 64 {
        // sparse layout: small boxes spread far apart
        for i in order {
            let b = &proposals[i].bbox;
            if kept.iter().all(|&j| iou(&proposals[j].bbox, b) <= iou_threshold) {
                kept.push(i);
            }
        }
        return take_kept(proposals, kept);
    }
    let slot = |kx: i64, ky: i64| (ky - min_y + 1) as usize * gw + (kx - min_x + 1) as usize;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    for i in order {
        let (kx, ky) = keys[i];
        let b = &proposals[i].bbox;
        let suppressed = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid[slot(kx + dx, ky + dy)]
                    .iter()
                    .any(|&j| iou(&proposals[j].bbox, b) > iou_threshold)
            })
        });
        if !suppressed {
            grid[slot(kx, ky)].push(i);
            kept.push(i);
        }
    }
    take_kept(proposals, kept)
}

fn take_kept(proposals: Vec<Proposal>, kept: Vec<usize>) -> Vec<Proposal> {
    let mut slots: Vec<Option<Proposal>> = proposals.into_iter().map(Some).collect();
    kept.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

/// The `k` best proposals in [`rank_order`].
pub fn top_k(mut proposals: Vec<Proposal>, k: usize) -> Vec<Proposal> {
    proposals.sort_by(rank_order);
    proposals.truncate(k.max(1));
    proposals
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn prop(bbox: BBox, score: f64, row: usize) -> Proposal {
        Proposal::new(bbox, score, Cell { row, col: 0, anchor: 0 })
    }

    #[test]
    fn anchor_counts_and_shapes() {
        let cfg = AnchorConfig::default();
        assert_eq!(cfg.k(), 5);
        let a = generate_anchors(&cfg, 17, 17, (100.0, 100.0), 255).unwrap();
        assert_eq!(a.len(), 1445);
        // Centre cell, ratio-1 anchor.
        let mid = a[(8 * 17 + 8) * 5 + 2];
        assert_eq!(mid, b(100.0, 100.0, 64.0, 64.0));
        let wide = a[3];
        assert!((wide.w / wide.h - 2.0).abs() < 1e-9);
        assert!((wide.area() - 64.0 * 64.0).abs() < 1e-6);

        let single = AnchorConfig {
            ratios: vec![1.0],
            scales: vec![1.0],
            ..AnchorConfig::default()
        };
        let one = generate_anchors(&single, 1, 1, (5.0, 7.0), 255).unwrap();
        assert_eq!(one, vec![b(5.0, 7.0, 64.0, 64.0)]);

        let empty = AnchorConfig {
            ratios: vec![],
            ..AnchorConfig::default()
        };
        assert!(generate_anchors(&empty, 2, 2, (0.0, 0.0), 255).is_err());
    }

    #[test]
    fn decoding() {
        let a = b(50.0, 40.0, 10.0, 20.0);
        assert_eq!(decode_deltas(&a, [0.0; 4]), a);
        assert_eq!(decode_deltas(&a, [1.0, 0.0, 0.0, 0.0]).cx, 60.0);
        let d = decode_deltas(&a, [0.0, 0.0, 2f64.ln(), 0.0]);
        assert!((d.w - 20.0).abs() < 1e-12);
        let huge = decode_deltas(&a, [0.0, 0.0, 50.0, -50.0]);
        assert!((huge.w - 10.0 * 4f64.exp()).abs() < 1e-9);
        assert!((huge.h - 20.0 * (-4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn iou_spot_values() {
        let a = b(0.5, 0.5, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        let half = b(1.0, 0.5, 1.0, 1.0);
        assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nms_basics() {
        assert!(nms(vec![], 0.5).is_empty());
        let one = vec![prop(b(0.0, 0.0, 4.0, 4.0), 0.3, 0)];
        assert_eq!(nms(one.clone(), 0.5), one);
        let twins = vec![
            prop(b(0.0, 0.0, 4.0, 4.0), 0.8, 1),
            prop(b(0.0, 0.0, 4.0, 4.0), 0.9, 2),
        ];
        let kept = nms(twins, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_ties_break_by_cell() {
        let a = prop(b(0.0, 0.0, 4.0, 4.0), 0.5, 3);
        let c = prop(b(0.0, 0.0, 4.0, 4.0), 0.5, 1);
        let kept = nms(vec![a, c], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].cell.row, 1);
    }

    #[test]
    fn top_k_selection() {
        let ps: Vec<_> = (0..5).map(|i| prop(b(0.0, 0.0, 1.0, 1.0), i as f64 * 0.1, i)).collect();
        assert_eq!(top_k(ps.clone(), 10).len(), 5);
        let best = top_k(ps, 1);
        assert_eq!(best[0].cell.row, 4);
    }

    #[test]
    fn grid_to_proposals_mixing() {
        let anchors = generate_anchors(&AnchorConfig::default(), 3, 3, (0.0, 0.0), 255).unwrap();
        let grid = ScoreGrid::new(3, 3, 5, vec![0.7; 45], vec![[0.0; 4]; 45]).unwrap();
        let window = crate::corr::cosine_window(3, 3).unwrap();
        let raw = score_grid_to_proposals(&grid, &anchors, &window, 0.0).unwrap();
        assert!(raw.iter().all(|p| p.score == 0.7));
        let win = score_grid_to_proposals(&grid, &anchors, &window, 1.0).unwrap();
        for p in &win {
            assert_eq!(p.score, window.get(p.cell.col, p.cell.row));
        }
        let bad = crate::corr::cosine_window(4, 3).unwrap();
        assert!(score_grid_to_proposals(&grid, &anchors, &bad, 0.5).is_err());
    }

    #[test]
    fn head_regresses_neighbours_onto_peak() {
        // Peak at (2.25, 2) in a 5x5 response.
        let mut v = vec![0.0; 25];
        for y in 0..5 {
            for x in 0..5 {
                let dx = x as f64 - 2.25;
                let dy = y as f64 - 2.0;
                v[y * 5 + x] = 1.0 - 0.1 * (dx * dx + dy * dy);
            }
        }
        let resp = ResponseMap::new(5, 5, v).unwrap();
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&cfg, 5, 5, (0.0, 0.0), 255).unwrap();
        let grid = score_grid_from_response(&resp, &anchors, 5, 8.0, (48.0, 32.0), 2, |s| s).unwrap();
        let window = crate::corr::cosine_window(5, 5).unwrap();
        let props = score_grid_to_proposals(&grid, &anchors, &window, 0.0).unwrap();
        for p in &props {
            if p.cell.row.abs_diff(2) <= 1 && p.cell.col.abs_diff(2) <= 1 {
                assert!((p.bbox.cx - 2.0).abs() < 1e-9, "{:?}", p.bbox);
                assert!(p.bbox.cy.abs() < 1e-9);
                assert!((p.bbox.w - 48.0).abs() < 1e-9 && (p.bbox.h - 32.0).abs() < 1e-9);
            }
        }
        let kept = nms(props, 0.5);
        assert_eq!(kept[0].cell, Cell { row: 2, col: 2, anchor: 0 });
    }
}
