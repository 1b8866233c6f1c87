//! CSV trajectories, ground truth and reports; DAFM feature sequences.

use std::path::Path;

use crate::embedding::{
    read_dafm, write_dafm, BBox, DafmRecord, Frame, Geometry, PrecomputedProvider,
    SyntheticProvider,
};
use crate::error::{Result, TrackError};
use crate::harness::metrics::EvalReport;
use crate::harness::run::{Trajectory, TrajectoryEntry};
use crate::harness::scenario::Sequence;
use crate::longterm::Mode;

pub const TRAJECTORY_HEADER: &str = "frame,cx,cy,w,h,score,mode";
pub const GT_HEADER: &str = "frame,cx,cy,w,h";
pub const REPORT_HEADER: &str = "name,frame,value";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| TrackError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| TrackError::io(path, e))
}

fn box_fields(b: &Option<BBox>) -> String {
    match b {
        Some(b) => format!("{},{},{},{}", b.cx, b.cy, b.w, b.h),
        None => ",,,".to_string(),
    }
}

/// Data lines with their byte offsets; checks the header.
fn data_lines<'a>(text: &'a str, header: &str) -> Result<Vec<(u64, &'a str)>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    let mut seen_header = false;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let line = line.trim_end_matches(['\n', '\r']);
        if !seen_header {
            if line != header {
                return Err(TrackError::format(start, format!("expected header {header:?}, got {line:?}")));
            }
            seen_header = true;
            continue;
        }
        if !line.is_empty() {
            out.push((start, line));
        }
    }
    if !seen_header {
        return Err(TrackError::format(0, "missing header"));
    }
    Ok(out)
}

fn parse_box(offset: u64, fields: &[&str]) -> Result<Option<BBox>> {
    if fields.iter().all(|f| f.is_empty()) {
        return Ok(None);
    }
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f
            .parse()
            .map_err(|_| TrackError::format(offset, format!("bad number {f:?}")))?;
    }
    BBox::new(v[0], v[1], v[2], v[3])
        .map(Some)
        .map_err(|e| TrackError::format(offset, e.to_string()))
}

fn check_frame(offset: u64, field: &str, expected: usize) -> Result<()> {
    let f: usize = field
        .parse()
        .map_err(|_| TrackError::format(offset, format!("bad frame index {field:?}")))?;
    if f != expected {
        return Err(TrackError::format(offset, format!("frame {f} out of order, expected {expected}")));
    }
    Ok(())
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for (i, e) in traj.entries.iter().enumerate() {
        s.push_str(&format!("{i},{},{},{}\n", box_fields(&e.bbox), e.score, e.mode.as_str()));
    }
    s
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (offset, line) in data_lines(text, TRAJECTORY_HEADER)? {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(TrackError::format(offset, format!("expected 7 fields, got {}", f.len())));
        }
        check_frame(offset, f[0], entries.len())?;
        let score = f[5]
            .parse()
            .map_err(|_| TrackError::format(offset, format!("bad score {:?}", f[5])))?;
        let mode = Mode::parse(f[6]).ok_or_else(|| TrackError::format(offset, format!("bad mode {:?}", f[6])))?;
        entries.push(TrajectoryEntry {
            bbox: parse_box(offset, &f[1..5])?,
            score,
            mode,
        });
    }
    Ok(Trajectory { entries })
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_text(path.as_ref(), &trajectory_to_csv(traj))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    trajectory_from_csv(&read_text(path.as_ref())?)
}

pub fn gt_to_csv(gt: &[Option<BBox>]) -> String {
    let mut s = format!("{GT_HEADER}\n");
    for (i, b) in gt.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", box_fields(b)));
    }
    s
}

pub fn gt_from_csv(text: &str) -> Result<Vec<Option<BBox>>> {
    let mut gt = Vec::new();
    for (offset, line) in data_lines(text, GT_HEADER)? {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(TrackError::format(offset, format!("expected 5 fields, got {}", f.len())));
        }
        check_frame(offset, f[0], gt.len())?;
        gt.push(parse_box(offset, &f[1..5])?);
    }
    Ok(gt)
}

pub fn write_gt(path: impl AsRef<Path>, gt: &[Option<BBox>]) -> Result<()> {
    write_text(path.as_ref(), &gt_to_csv(gt))
}

pub fn read_gt(path: impl AsRef<Path>) -> Result<Vec<Option<BBox>>> {
    gt_from_csv(&read_text(path.as_ref())?)
}

/// Summary rows (empty frame column) followed by one `iou` row per frame.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for (name, v) in [
        ("success_auc", report.success_auc),
        ("precision_at_20", report.precision_at_20),
        ("overlap_precision", report.overlap_precision),
        ("mean_overlap", report.mean_overlap),
        ("failures", report.failures as f64),
    ] {
        s.push_str(&format!("{name},,{v}\n"));
    }
    for (i, v) in report.ious.iter().enumerate() {
        match v {
            Some(v) => s.push_str(&format!("iou,{i},{v}\n")),
            None => s.push_str(&format!("iou,{i},\n")),
        }
    }
    s
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    write_text(path.as_ref(), &report_to_csv(report))
}

/// Renders every frame of a synthetic sequence to a frame-level DAFM
/// record and writes the ground truth next to it (`<path>.gt.csv`).
pub fn write_sequence(path: impl AsRef<Path>, seq: &Sequence, geometry: Geometry) -> Result<usize> {
    let path = path.as_ref();
    let provider = SyntheticProvider::new(geometry, seq.channels, seq.footprint)?;
    let records = seq
        .frames
        .iter()
        .map(|f| {
            Ok(DafmRecord {
                frame_id: f.id,
                map: provider.render_frame(f)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_dafm(path, &records)?;
    write_gt(gt_path(path), &seq.gt)?;
    Ok(records.len())
}

pub fn gt_path(seq_path: &Path) -> std::path::PathBuf {
    let mut s = seq_path.as_os_str().to_owned();
    s.push(".gt.csv");
    s.into()
}

/// A DAFM sequence ready to track: frames in id order and their provider.
pub struct LoadedSequence {
    pub frames: Vec<Frame>,
    pub provider: PrecomputedProvider,
}

pub fn load_sequence(path: impl AsRef<Path>, geometry: Geometry) -> Result<LoadedSequence> {
    let records = read_dafm(path)?;
    let provider = PrecomputedProvider::new(geometry, records)?;
    let frames = provider
        .frame_ids()
        .into_iter()
        .map(|id| Frame::precomputed(id, provider.extent_of(id).expect("listed id")))
        .collect();
    Ok(LoadedSequence { frames, provider })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_roundtrip_with_gaps() {
        let traj = Trajectory {
            entries: vec![
                TrajectoryEntry {
                    bbox: Some(BBox::new(1.5, 2.25, 3.0, 4.125).unwrap()),
                    score: 0.1 + 0.2,
                    mode: Mode::ShortTerm,
                },
                TrajectoryEntry {
                    bbox: None,
                    score: 0.0,
                    mode: Mode::Failure,
                },
            ],
        };
        let csv = trajectory_to_csv(&traj);
        assert_eq!(trajectory_from_csv(&csv).unwrap(), traj);
        assert!(csv.contains("\n1,,,,,0,failure\n"));
    }

    #[test]
    fn gt_roundtrip_and_errors() {
        let gt = vec![None, Some(BBox::new(10.0, 20.0, 5.0, 6.0).unwrap())];
        assert_eq!(gt_from_csv(&gt_to_csv(&gt)).unwrap(), gt);
        assert!(gt_from_csv("").is_err());
        assert!(gt_from_csv("frame,cx,cy,w,h\n1,1,1,1,1\n").is_err());
        match gt_from_csv("frame,cx,cy,w,h\n0,1,1,1,1\n1,x,1,1,1\n") {
            Err(TrackError::Format { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("{other:?}"),
        }
        assert_eq!(gt_from_csv("frame,cx,cy,w,h\n").unwrap(), vec![]);
    }
    #[test]
    fn sequence_roundtrip_through_dafm() {
        use crate::harness::run::{run_tracker, EngineTracker};
        use crate::harness::scenario::{gen_scenario, preset_spec_with, Preset, PresetParams};
        let params = PresetParams {
            frame_count: 3,
            ..PresetParams::default()
        };
        let seq = gen_scenario(&preset_spec_with(Preset::Clutter, 3, &params)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.dafm");
        let geometry = Geometry::default();
        assert_eq!(write_sequence(&path, &seq, geometry).unwrap(), 3);
        let loaded = load_sequence(&path, geometry).unwrap();
        assert_eq!(loaded.frames.len(), 3);
        assert_eq!(loaded.frames[2].extent, seq.frames[2].extent);
        assert_eq!(read_gt(gt_path(&path)).unwrap(), seq.gt);
        let mut tracker = EngineTracker::new(loaded.provider.clone(), crate::tracker::TrackerConfig::default());
        let traj = run_tracker(&loaded.frames, &seq.gt, &mut tracker).unwrap();
        for f in 1..3 {
            let (b, g) = (traj.entries[f].bbox.unwrap(), seq.gt[f].unwrap());
            assert!(crate::proposals::iou(&b, &g) > 0.5, "frame {f}");
        }
    }

    #[test]
    fn truncated_sequence_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dafm");
        std::fs::write(&path, b"DAF").unwrap();
        assert!(matches!(load_sequence(&path, Geometry::default()), Err(TrackError::Format { .. })));
    }
}
