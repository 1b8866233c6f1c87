//! Success/precision curves and reset-based accuracy/robustness.

use crate::embedding::{BBox, Frame};
use crate::error::{Result, TrackError};
use crate::harness::run::{SequenceTracker, Trajectory};
use crate::proposals::iou;

/// Thresholds `0, 0.01, ..., 1`.
pub const SUCCESS_STEPS: usize = 101;

/// Frames skipped after a failure before restarting from ground truth.
pub const RESET_DELAY: usize = 5;

pub const PRECISION_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success_auc: f64,
    pub precision_at_20: f64,
    /// Fraction of frames with IoU above 0.5.
    pub overlap_precision: f64,
    pub mean_overlap: f64,
    pub failures: usize,
    /// Per-frame IoU; `None` where ground truth is absent.
    pub ious: Vec<Option<f64>>,
    pub success_curve: Vec<f64>,
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|i| i as f64 / (SUCCESS_STEPS - 1) as f64).collect()
}

/// Success at `tau` counts frames with `IoU >= tau` and a non-empty overlap.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    success_thresholds()
        .into_iter()
        .map(|tau| {
            if ious.is_empty() {
                return 0.0;
            }
            ious.iter().filter(|&&v| v > 0.0 && v >= tau).count() as f64 / ious.len() as f64
        })
        .collect()
}

/// One-pass evaluation of a trajectory. Frames without ground truth are
/// ignored; a missing prediction counts as IoU 0 and infinite distance.
pub fn eval_success_precision(traj: &Trajectory, gt: &[Option<BBox>]) -> Result<EvalReport> {
    if traj.len() != gt.len() {
        return Err(TrackError::arg(format!(
            "trajectory has {} frames, ground truth {}",
            traj.len(),
            gt.len()
        )));
    }
    let mut ious = Vec::with_capacity(gt.len());
    let mut scored = Vec::new();
    let mut close = 0usize;
    for (e, g) in traj.entries.iter().zip(gt) {
        let Some(g) = g else {
            ious.push(None);
            continue;
        };
        let (v, dist) = match &e.bbox {
            Some(b) => (iou(b, g), b.center_distance(g)),
            None => (0.0, f64::INFINITY),
        };
        if dist <= PRECISION_RADIUS {
            close += 1;
        }
        ious.push(Some(v));
        scored.push(v);
    }
    let n = scored.len();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let curve = success_curve(&scored);
    Ok(EvalReport {
        success_auc: curve.iter().sum::<f64>() / curve.len() as f64,
        precision_at_20: rate(close),
        overlap_precision: rate(scored.iter().filter(|&&v| v > 0.5).count()),
        mean_overlap: if n == 0 { 0.0 } else { scored.iter().sum::<f64>() / n as f64 },
        failures: 0,
        ious,
        success_curve: curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetReport {
    /// Mean IoU over scored frames.
    pub accuracy: f64,
    pub failures: usize,
    pub failure_frames: Vec<usize>,
    /// Frames at which the tracker was (re)initialised.
    pub init_frames: Vec<usize>,
    /// IoU of every scored frame; `None` for init, skipped and unlabelled frames.
    pub ious: Vec<Option<f64>>,
}

fn next_labelled(gt: &[Option<BBox>], from: usize) -> Option<usize> {
    (from..gt.len()).find(|&i| gt[i].is_some())
}

/// Reset-based protocol: a frame with zero overlap is a failure and the
/// tracker restarts from ground truth [`RESET_DELAY`] frames later (or at
/// the next labelled frame after that). Init frames are not scored.
pub fn eval_reset_based(frames: &[Frame], gt: &[Option<BBox>], tracker: &mut dyn SequenceTracker) -> Result<ResetReport> {
    if frames.len() != gt.len() {
        return Err(TrackError::arg(format!(
            "{} frames but {} ground-truth entries",
            frames.len(),
            gt.len()
        )));
    }
    let mut ious = vec![None; gt.len()];
    let mut failure_frames = Vec::new();
    let mut init_frames = Vec::new();
    let mut next_init = next_labelled(gt, 0);
    let mut f = 0;
    while f < frames.len() {
        if Some(f) == next_init {
            tracker.init(&frames[f], gt[f].as_ref().expect("labelled"))?;
            init_frames.push(f);
            next_init = None;
            f += 1;
            continue;
        }
        if init_frames.is_empty() || next_init.is_some() {
            f += 1;
            continue;
        }
        let out = tracker.track(&frames[f]).ok().and_then(|e| e.bbox);
        if let Some(g) = &gt[f] {
            let v = out.map_or(0.0, |b| iou(&b, g));
            ious[f] = Some(v);
            if v == 0.0 {
                failure_frames.push(f);
                next_init = next_labelled(gt, f + RESET_DELAY);
                if next_init.is_none() {
                    break;
                }
            }
        }
        f += 1;
    }
    let scored: Vec<f64> = ious.iter().flatten().copied().collect();
    Ok(ResetReport {
        accuracy: if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        },
        failures: failure_frames.len(),
        failure_frames,
        init_frames,
        ious,
    })
}
