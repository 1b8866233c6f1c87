#![allow(dead_code)]

use datrack::embedding::BBox;
use datrack::proposals::{Cell, Proposal};
use datrack::FeatureMap;
use rand::Rng;

pub fn random_map<R: Rng>(rng: &mut R, w: usize, h: usize, c: usize) -> FeatureMap {
    let data = (0..w * h * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(w, h, c, data).unwrap()
}

pub fn proposal(bbox: BBox, score: f64, index: usize) -> Proposal {
    Proposal::new(
        bbox,
        score,
        Cell {
            row: index / 7,
            col: index % 7,
            anchor: 0,
        },
    )
}

/// Greedy suppression by exhaustive pairwise comparison.
pub fn nms_oracle(props: &[Proposal], thr: f64) -> Vec<Cell> {
    let mut sorted: Vec<&Proposal> = props.iter().collect();
    sorted.sort_by(|a, b| datrack::proposals::rank_order(a, b));
    let mut kept: Vec<&Proposal> = Vec::new();
    for p in sorted {
        if kept.iter().all(|k| datrack::proposals::iou(&k.bbox, &p.bbox) <= thr) {
            kept.push(p);
        }
    }
    kept.into_iter().map(|p| p.cell).collect()
}

pub fn xcorr_oracle(t: &FeatureMap, s: &FeatureMap, bias: f64) -> Vec<f64> {
    let (tw, th, c) = t.dims();
    let (sw, sh, _) = s.dims();
    let mut out = Vec::new();
    for oy in 0..=sh - th {
        for ox in 0..=sw - tw {
            let mut acc = bias;
            for y in 0..th {
                for x in 0..tw {
                    for ch in 0..c {
                        acc += t.get(x, y, ch) * s.get(ox + x, oy + y, ch);
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
