//! Seeded synthetic scenes with ground truth.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{BBox, EntityState, Extent, Frame, Geometry, SceneFrame, SyntheticProvider};
use crate::error::{Result, TrackError};

#[derive(Debug, Clone, PartialEq)]
pub struct EntitySpec {
    pub signature: Vec<f64>,
    /// One box per frame.
    pub trajectory: Vec<BBox>,
    /// Frame ranges in which the entity is rendered.
    pub visible: Vec<Range<u32>>,
    pub is_target: bool,
}

impl EntitySpec {
    pub fn is_visible(&self, frame: u32) -> bool {
        self.visible.iter().any(|r| r.contains(&frame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub frame_count: u32,
    pub extent: Extent,
    pub channels: usize,
    /// Footprint of the synthetic renderer; see [`SyntheticProvider`].
    pub footprint: f64,
    pub entities: Vec<EntitySpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(TrackError::Spec("scenario needs at least one frame".into()));
        }
        if self.entities.is_empty() {
            return Err(TrackError::Spec("scenario has no entities".into()));
        }
        let targets = self.entities.iter().filter(|e| e.is_target).count();
        if targets != 1 {
            return Err(TrackError::Spec(format!("scenario needs exactly one target, found {targets}")));
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.trajectory.len() != self.frame_count as usize {
                return Err(TrackError::Spec(format!(
                    "entity {i} has {} trajectory entries for {} frames",
                    e.trajectory.len(),
                    self.frame_count
                )));
            }
            if e.signature.len() != self.channels {
                return Err(TrackError::Spec(format!("entity {i} signature length != {}", self.channels)));
            }
            for b in &e.trajectory {
                b.validate().map_err(|err| TrackError::Spec(format!("entity {i}: {err}")))?;
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.footprint > 0.0) {
            return Err(TrackError::Spec("noise must be >= 0 and footprint > 0".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> &EntitySpec {
        self.entities.iter().find(|e| e.is_target).expect("validated")
    }
}

/// Frames plus per-frame ground truth (`None` while the target is hidden).
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub gt: Vec<Option<BBox>>,
    pub channels: usize,
    pub footprint: f64,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn provider(&self, geometry: Geometry) -> Result<SyntheticProvider> {
        SyntheticProvider::new(geometry, self.channels, self.footprint)
    }

    /// First frame whose ground truth is present.
    pub fn first_visible(&self) -> Option<usize> {
        self.gt.iter().position(Option::is_some)
    }
}

pub fn gen_scenario(spec: &ScenarioSpec) -> Result<Sequence> {
    spec.validate()?;
    let signatures: Vec<Arc<[f64]>> = spec.entities.iter().map(|e| Arc::from(e.signature.as_slice())).collect();
    let mut frames = Vec::with_capacity(spec.frame_count as usize);
    let mut gt = Vec::with_capacity(spec.frame_count as usize);
    for f in 0..spec.frame_count {
        let entities = spec
            .entities
            .iter()
            .zip(&signatures)
            .filter(|(e, _)| e.is_visible(f))
            .map(|(e, sig)| EntityState {
                signature: sig.clone(),
                bbox: e.trajectory[f as usize],
            })
            .collect();
        let scene = SceneFrame {
            entities,
            noise_sigma: spec.noise_sigma,
            noise_seed: spec.seed,
        };
        frames.push(Frame::synthetic(f, spec.extent, scene));
        let target = spec.target();
        gt.push(target.is_visible(f).then(|| target.trajectory[f as usize]));
    }
    Ok(Sequence {
        frames,
        gt,
        channels: spec.channels,
        footprint: spec.footprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Target crossed by three identical near-copies of itself.
    Crossing,
    /// Target leaves the view and comes back far from where it left.
    OutView,
    /// Target among unrelated moving entities.
    Clutter,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crossing" => Some(Preset::Crossing),
            "outview" => Some(Preset::OutView),
            "clutter" => Some(Preset::Clutter),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Crossing => "crossing",
            Preset::OutView => "outview",
            Preset::Clutter => "clutter",
        }
    }
}

/// Knobs shared by the presets.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetParams {
    pub frame_count: u32,
    pub extent: Extent,
    pub channels: usize,
    pub footprint: f64,
    pub noise_sigma: f64,
    /// Distractor signature `(1 + gain) * v + spread * n` with `n` a unit
    /// vector orthogonal to the target signature `v`.
    pub distractor_gain: f64,
    pub distractor_spread: f64,
    /// Frames at which crossing distractors meet the target's path.
    pub crossings: Vec<u32>,
    /// Hidden frames of the out-of-view preset (inclusive).
    pub hidden: (u32, u32),
    /// Range of the horizontal jump between exit and reappearance.
    pub jump: (f64, f64),
    pub clutter: usize,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            frame_count: 100,
            extent: Extent::new(640.0, 480.0),
            channels: 16,
            footprint: 0.2,
            noise_sigma: 0.02,
            distractor_gain: 0.1,
            distractor_spread: 0.6,
            crossings: vec![40, 50, 60],
            hidden: (40, 70),
            jump: (270.0, 320.0),
            clutter: 4,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to the unit vector `v`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, v: &[f64]) -> Vec<f64> {
    loop {
        let mut n = unit_vector(rng, v.len());
        let d: f64 = n.iter().zip(v).map(|(a, b)| a * b).sum();
        n.iter_mut().zip(v).for_each(|(a, b)| *a -= d * b);
        let norm = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return n.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn square(cx: f64, cy: f64, side: f64) -> BBox {
    BBox {
        cx,
        cy,
        w: side,
        h: side,
    }
}

/// Linear motion that reflects off the frame borders.
fn bouncing(rng: &mut ChaCha8Rng, p: &PresetParams, side: f64) -> Vec<BBox> {
    let (w, h) = (p.extent.width, p.extent.height);
    let m = side / 2.0;
    let mut x = rng.gen_range(m..w - m);
    let mut y = rng.gen_range(m..h - m);
    let speed = rng.gen_range(2.0..5.0);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
    let mut out = Vec::with_capacity(p.frame_count as usize);
    for _ in 0..p.frame_count {
        out.push(square(x, y, side));
        x += vx;
        y += vy;
        if x < m || x > w - m {
            vx = -vx;
            x = x.clamp(m, w - m);
        }
        if y < m || y > h - m {
            vy = -vy;
            y = y.clamp(m, h - m);
        }
    }
    out
}

fn clutter_entities(rng: &mut ChaCha8Rng, p: &PresetParams) -> Vec<EntitySpec> {
    (0..p.clutter)
        .map(|_| {
            let side = rng.gen_range(48.0..96.0);
            EntitySpec {
                signature: unit_vector(rng, p.channels),
                trajectory: bouncing(rng, p, side),
                visible: vec![0..p.frame_count],
                is_target: false,
            }
        })
        .collect()
}

pub fn preset_spec(preset: Preset, seed: u64) -> ScenarioSpec {
    preset_spec_with(preset, seed, &PresetParams::default())
}

pub fn preset_spec_with(preset: Preset, seed: u64, p: &PresetParams) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (preset as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let v = unit_vector(&mut rng, p.channels);
    let side = rng.gen_range(64.0..80.0);
    let n = p.frame_count;
    let mut entities = Vec::new();
    match preset {
        Preset::Crossing => {
            let speed = rng.gen_range(3.0..4.5);
            let y0 = p.extent.height / 2.0 + rng.gen_range(-40.0..40.0);
            let x0 = p.extent.width / 2.0 - speed * n as f64 / 2.0;
            let wobble = rng.gen_range(5.0..15.0);
            let target_at = |f: u32| {
                let t = f as f64;
                (x0 + speed * t, y0 + wobble * (t / 15.0).sin())
            };
            let trajectory: Vec<BBox> = (0..n).map(|f| {
                let (x, y) = target_at(f);
                square(x, y, side)
            }).collect();
            entities.push(EntitySpec {
                signature: v.clone(),
                trajectory,
                visible: vec![0..n],
                is_target: true,
            });
            // One shared perturbation: the distractors are look-alikes of
            // the same kind.
            let perp = orthogonal_unit(&mut rng, &v);
            for &meet in &p.crossings {
                let signature: Vec<f64> = v
                    .iter()
                    .zip(&perp)
                    .map(|(a, b)| (1.0 + p.distractor_gain) * a + p.distractor_spread * b)
                    .collect();
                // Crosses the target's path one box ahead of the target.
                let (mx, my) = target_at(meet);
                let cross_x = mx + side * rng.gen_range(0.9..1.2);
                let vy = rng.gen_range(3.0..5.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let trajectory = (0..n)
                    .map(|f| square(cross_x, my + vy * (f as f64 - meet as f64), side))
                    .collect();
                entities.push(EntitySpec {
                    signature,
                    trajectory,
                    visible: vec![0..n],
                    is_target: false,
                });
            }
        }
        Preset::OutView => {
            let (h0, h1) = p.hidden;
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let speed = rng.gen_range(2.0..3.0);
            let start_x = p.extent.width / 2.0 - dir * rng.gen_range(180.0..220.0);
            let y0 = p.extent.height / 2.0 + rng.gen_range(-60.0..60.0);
            let exit_x = start_x + dir * speed * h0 as f64;
            let jump = rng.gen_range(p.jump.0..p.jump.1);
            let back_x = exit_x + dir * jump;
            let back_y = y0 + rng.gen_range(-40.0..40.0);
            let trajectory = (0..n)
                .map(|f| {
                    let t = f as f64;
                    if f < h0 {
                        square(start_x + dir * speed * t, y0, side)
                    } else if f <= h1 {
                        let a = (t - h0 as f64) / (h1 + 1 - h0) as f64;
                        square(exit_x + a * (back_x - exit_x), y0 + a * (back_y - y0), side)
                    } else {
                        square(back_x + dir * 0.5 * (t - h1 as f64 - 1.0), back_y, side)
                    }
                })
                .collect();
            entities.push(EntitySpec {
                signature: v,
                trajectory,
                visible: vec![0..h0, h1 + 1..n],
                is_target: true,
            });
            entities.extend(clutter_entities(&mut rng, p));
        }
        Preset::Clutter => {
            entities.push(EntitySpec {
                signature: v,
                trajectory: bouncing(&mut rng, p, side),
                visible: vec![0..n],
                is_target: true,
            });
            entities.extend(clutter_entities(&mut rng, p));
        }
    }
    ScenarioSpec {
        frame_count: n,
        extent: p.extent,
        channels: p.channels,
        footprint: p.footprint,
        entities,
        noise_sigma: p.noise_sigma,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_target_constant_truth() {
        let b = square(100.0, 100.0, 64.0);
        let spec = ScenarioSpec {
            frame_count: 5,
            extent: Extent::new(320.0, 240.0),
            channels: 4,
            footprint: 0.2,
            entities: vec![EntitySpec {
                signature: vec![1.0, 0.0, 0.0, 0.0],
                trajectory: vec![b; 5],
                visible: vec![0..5],
                is_target: true,
            }],
            noise_sigma: 0.0,
            seed: 1,
        };
        let seq = gen_scenario(&spec).unwrap();
        assert!(seq.gt.iter().all(|g| *g == Some(b)));
    }

    #[test]
    fn spec_errors() {
        let mut spec = preset_spec(Preset::Clutter, 3);
        spec.entities.iter_mut().for_each(|e| e.is_target = false);
        assert!(matches!(gen_scenario(&spec), Err(TrackError::Spec(_))));
        spec.entities.clear();
        assert!(matches!(gen_scenario(&spec), Err(TrackError::Spec(_))));
    }

    #[test]
    fn outview_geometry() {
        for seed in 0..20 {
            let spec = preset_spec(Preset::OutView, seed);
            let seq = gen_scenario(&spec).unwrap();
            assert!(seq.gt[39].is_some() && seq.gt[40].is_none() && seq.gt[70].is_none());
            let exit = seq.gt[39].unwrap();
            let back = seq.gt[71].unwrap();
            assert!(exit.center_distance(&back) > 255.0);
            assert!(p_in_frame(&back, spec.extent));
        }
    }

    fn p_in_frame(b: &BBox, e: Extent) -> bool {
        b.x0() >= 0.0 && b.y0() >= 0.0 && b.x1() <= e.width && b.y1() <= e.height
    }

    #[test]
    fn crossing_has_three_close_copies() {
        let spec = preset_spec(Preset::Crossing, 9);
        assert_eq!(spec.entities.len(), 4);
        let v = &spec.target().signature;
        for d in spec.entities.iter().filter(|e| !e.is_target) {
            let dot: f64 = d.signature.iter().zip(v).map(|(a, b)| a * b).sum();
            assert!((dot - 1.1).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let a = preset_spec(Preset::OutView, 5);
        let b = preset_spec(Preset::OutView, 5);
        assert_eq!(a, b);
        assert_ne!(a, preset_spec(Preset::OutView, 6));
    }
}
