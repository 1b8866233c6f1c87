//! Running a tracker over a sequence.

use crate::embedding::{BBox, EmbeddingProvider, Frame};
use crate::error::{Result, TrackError};
use crate::longterm::Mode;
use crate::tracker::{Tracker, TrackerConfig};

/// One frame of tracker output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub bbox: Option<BBox>,
    pub score: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn boxes(&self) -> Vec<Option<BBox>> {
        self.entries.iter().map(|e| e.bbox).collect()
    }
}

/// Anything that can be (re)started from a box and stepped frame by frame.
pub trait SequenceTracker {
    fn init(&mut self, frame: &Frame, bbox: &BBox) -> Result<()>;

    fn track(&mut self, frame: &Frame) -> Result<TrajectoryEntry>;

    /// Mode to report when `track` fails.
    fn mode(&self) -> Mode {
        Mode::ShortTerm
    }
}

/// [`Tracker`] behind the [`SequenceTracker`] interface.
pub struct EngineTracker<P> {
    provider: P,
    cfg: TrackerConfig,
    inner: Option<Tracker<P>>,
}

impl<P: EmbeddingProvider + Clone> EngineTracker<P> {
    pub fn new(provider: P, cfg: TrackerConfig) -> Self {
        Self {
            provider,
            cfg,
            inner: None,
        }
    }

    pub fn tracker(&self) -> Option<&Tracker<P>> {
        self.inner.as_ref()
    }
}

impl<P: EmbeddingProvider + Clone> SequenceTracker for EngineTracker<P> {
    fn init(&mut self, frame: &Frame, bbox: &BBox) -> Result<()> {
        self.inner = Some(Tracker::init(self.provider.clone(), self.cfg.clone(), frame, bbox)?);
        Ok(())
    }

    fn track(&mut self, frame: &Frame) -> Result<TrajectoryEntry> {
        let t = self.inner.as_mut().ok_or(TrackError::Uninitialized)?;
        let out = t.track(frame)?;
        Ok(TrajectoryEntry {
            bbox: Some(out.bbox),
            score: out.score,
            mode: out.mode,
        })
    }

    fn mode(&self) -> Mode {
        self.inner.as_ref().map_or(Mode::ShortTerm, |t| t.mode())
    }
}

/// Plays back a recorded trajectory, indexed by frame id. Restarts are
/// no-ops, so a reset-based evaluation scores the recording as it stands.
pub struct ReplayTracker {
    entries: Vec<TrajectoryEntry>,
}

impl ReplayTracker {
    pub fn new(traj: Trajectory) -> Self {
        Self { entries: traj.entries }
    }
}

impl SequenceTracker for ReplayTracker {
    fn init(&mut self, _: &Frame, _: &BBox) -> Result<()> {
        Ok(())
    }

    fn track(&mut self, frame: &Frame) -> Result<TrajectoryEntry> {
        self.entries
            .get(frame.id as usize)
            .copied()
            .ok_or_else(|| TrackError::arg(format!("no recorded entry for frame {}", frame.id)))
    }
}

/// Initialises on the first frame with ground truth and tracks every later
/// frame. Frames before that, and frames where tracking errors, get no box.
pub fn run_tracker(frames: &[Frame], gt: &[Option<BBox>], tracker: &mut dyn SequenceTracker) -> Result<Trajectory> {
    if frames.len() != gt.len() {
        return Err(TrackError::arg(format!(
            "{} frames but {} ground-truth entries",
            frames.len(),
            gt.len()
        )));
    }
    let start = gt
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| TrackError::arg("no ground truth to initialise from"))?;
    let mut entries = Vec::with_capacity(frames.len());
    for _ in 0..start {
        entries.push(TrajectoryEntry {
            bbox: None,
            score: 0.0,
            mode: Mode::ShortTerm,
        });
    }
    let init_box = gt[start].expect("position found it");
    tracker.init(&frames[start], &init_box)?;
    entries.push(TrajectoryEntry {
        bbox: Some(init_box),
        score: 1.0,
        mode: Mode::ShortTerm,
    });
    for frame in &frames[start + 1..] {
        let entry = tracker.track(frame).unwrap_or_else(|_| TrajectoryEntry {
            bbox: None,
            score: 0.0,
            mode: tracker.mode(),
        });
        entries.push(entry);
    }
    Ok(Trajectory { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Geometry;
    use crate::harness::scenario::{gen_scenario, EntitySpec, ScenarioSpec};
    use crate::embedding::Extent;

    #[test]
    fn single_entity_tracked_every_frame() {
        let n = 30;
        let trajectory = (0..n)
            .map(|f| BBox::new(150.0 + 3.0 * f as f64, 120.0 + 1.5 * f as f64, 64.0, 64.0).unwrap())
            .collect();
        let spec = ScenarioSpec {
            frame_count: n,
            extent: Extent::new(400.0, 300.0),
            channels: 8,
            footprint: 0.2,
            entities: vec![EntitySpec {
                signature: vec![0.5, -0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
                trajectory,
                visible: vec![0..n],
                is_target: true,
            }],
            noise_sigma: 0.01,
            seed: 4,
        };
        let seq = gen_scenario(&spec).unwrap();
        let provider = seq.provider(Geometry::default()).unwrap();
        let mut t = EngineTracker::new(provider, TrackerConfig::default());
        let traj = run_tracker(&seq.frames, &seq.gt, &mut t).unwrap();
        assert_eq!(traj.len(), n as usize);
        for (e, g) in traj.entries.iter().zip(&seq.gt) {
            let iou = crate::proposals::iou(&e.bbox.unwrap(), g.as_ref().unwrap());
            assert!(iou >= 0.5, "iou {iou}");
            assert_eq!(e.mode, Mode::ShortTerm);
        }
    }

    #[test]
    fn length_mismatch() {
        struct Nop;
        impl SequenceTracker for Nop {
            fn init(&mut self, _: &Frame, _: &BBox) -> Result<()> {
                Ok(())
            }
            fn track(&mut self, _: &Frame) -> Result<TrajectoryEntry> {
                Err(TrackError::NoCandidates)
            }
        }
        assert!(run_tracker(&[], &[None], &mut Nop).is_err());
    }
}
