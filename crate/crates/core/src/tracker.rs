//! Per-frame tracking: search embedding, proposals, distractor-aware
//! re-ranking, mode switching and template learning.

use crate::corr::{cosine_window, xcorr, CorrConfig, FeatureMap};
use crate::distractor::{squash, Calibration, CompositeTemplates, DistractorSet, FactoredQuery, RerankConfig};
use crate::embedding::{crop_and_resize, BBox, EmbeddingProvider, Frame};
use crate::error::{Result, TrackError};
use crate::longterm::{failure_center, search_size, update_mode, LongTermConfig, Mode, TrackerState};
use crate::proposals::{
    generate_anchors, iou, nms, score_grid_from_response, score_grid_to_proposals, AnchorConfig, Proposal,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub window_weight: f64,
    pub anchors: AnchorConfig,
    pub nms_iou: f64,
    pub top_k: usize,
    pub rerank: RerankConfig,
    pub longterm: LongTermConfig,
    /// Off: the search region never grows and the centre only follows
    /// detections scoring at least `longterm.enter_threshold`.
    pub longterm_enabled: bool,
    /// Off: no distractors are collected and re-ranking is plain similarity.
    pub distractor_aware: bool,
    /// Steepness of the logistic score calibration.
    pub calib_steepness: f64,
    /// Cells searched around each grid cell for the regression target.
    pub peak_radius: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_weight: CorrConfig::default().window_weight,
            anchors: AnchorConfig::default(),
            nms_iou: 0.5,
            top_k: 16,
            rerank: RerankConfig::default(),
            longterm: LongTermConfig::default(),
            longterm_enabled: true,
            distractor_aware: true,
            calib_steepness: 4.0,
            peak_radius: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        CorrConfig {
            bias: self.rerank.bias,
            window_weight: self.window_weight,
        }
        .validate()?;
        self.anchors.validate()?;
        self.rerank.validate()?;
        self.longterm.validate()?;
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(TrackError::arg(format!("nms_iou {} outside [0, 1]", self.nms_iou)));
        }
        if self.top_k == 0 {
            return Err(TrackError::arg("top_k must be at least 1"));
        }
        if !(self.calib_steepness > 0.0) {
            return Err(TrackError::arg("calibration steepness must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub bbox: BBox,
    /// Calibrated detection score in `[0, 1]`.
    pub score: f64,
    /// Re-ranked correlation of the chosen proposal.
    pub raw_score: f64,
    /// Mode after this frame.
    pub mode: Mode,
    /// Search region side used for this frame.
    pub region_size: u32,
    pub distractors: usize,
    pub templates_updated: bool,
}

struct Detection {
    search: FeatureMap,
    survivors: Vec<Proposal>,
    region_center: (f64, f64),
    region_size: u32,
}

pub struct Tracker<P> {
    provider: P,
    cfg: TrackerConfig,
    state: TrackerState,
    calibration: Calibration,
}

impl<P: EmbeddingProvider> Tracker<P> {
    /// Embeds the exemplar from the first frame's box and, when distractor
    /// aware, seeds the templates with that frame's distractors.
    pub fn init(provider: P, cfg: TrackerConfig, frame: &Frame, bbox: &BBox) -> Result<Self> {
        cfg.validate()?;
        provider.geometry().validate()?;
        let z1 = provider.embed_exemplar(frame, bbox)?;
        let calibration = Calibration::from_exemplar(&z1, cfg.rerank.bias, cfg.calib_steepness)
            .map_err(|_| TrackError::arg("exemplar has no positive self-similarity"))?;
        let composite = CompositeTemplates::like(&z1);
        let state = TrackerState::new(bbox.center(), (bbox.w, bbox.h), composite);
        let mut tracker = Self {
            provider,
            cfg,
            state,
            calibration,
        };
        let mut initial = DistractorSet::new();
        if tracker.cfg.distractor_aware {
            let det = tracker.detect(frame, &z1, bbox.center(), tracker.cfg.longterm.short_size)?;
            if let Some(target) = det
                .survivors
                .iter()
                .enumerate()
                .max_by(|a, b| iou(&a.1.bbox, bbox).total_cmp(&iou(&b.1.bbox, bbox)).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
            {
                let h = tracker.cfg.rerank.distractor_threshold;
                for (i, p) in det.survivors.iter().enumerate() {
                    if i != target && p.similarity > h {
                        let emb = tracker.crop(&det, p)?;
                        initial.push(emb, tracker.cfg.rerank.default_alpha)?;
                    }
                }
            }
        }
        tracker.state.composite.update(&z1, &initial, &tracker.cfg.rerank)?;
        Ok(tracker)
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    /// Search region side and centre for the next frame.
    pub fn next_region(&self, frame: &Frame) -> (u32, (f64, f64)) {
        if !self.cfg.longterm_enabled {
            return (self.cfg.longterm.short_size, self.state.center);
        }
        let stride = self.provider.geometry().stride;
        let size = search_size(&self.state, &self.cfg.longterm, frame.extent, stride);
        (size, failure_center(&self.state, size, frame.extent))
    }

    fn crop(&self, det: &Detection, p: &Proposal) -> Result<FeatureMap> {
        let g = self.provider.geometry();
        let e = g.exemplar_cells;
        let map_box = g.map_box(det.region_center, det.region_size, p.bbox.center(), 1.0);
        crop_and_resize(&det.search, &map_box, e, e)
    }

    fn detect(&self, frame: &Frame, template: &FeatureMap, center: (f64, f64), size: u32) -> Result<Detection> {
        let g = *self.provider.geometry();
        let x = self.provider.embed_search(frame, center, size)?;
        let response = xcorr(template, &x, self.cfg.rerank.bias)?;
        let (cols, rows) = (response.width(), response.height());
        let anchors = generate_anchors(&self.cfg.anchors, rows, cols, center, size)?;
        let calibration = self.calibration;
        let grid = score_grid_from_response(
            &response,
            &anchors,
            self.cfg.anchors.k(),
            g.stride,
            self.state.target_size,
            self.cfg.peak_radius,
            |r| calibration.calibrate(r),
        )?;
        let window = cosine_window(cols, rows)?;
        let proposals = score_grid_to_proposals(&grid, &anchors, &window, self.cfg.window_weight)?;
        Ok(Detection {
            search: x,
            survivors: nms(proposals, self.cfg.nms_iou),
            region_center: center,
            region_size: size,
        })
    }

    /// Tracks one frame. `Err(NoCandidates)` means nothing resembling the
    /// target was found; the state has already been moved towards failure.
    pub fn track(&mut self, frame: &Frame) -> Result<TrackOutput> {
        let (size, center) = self.next_region(frame);
        let zbar = self.state.composite.target_template()?;
        let det = self.detect(frame, &zbar, center, size)?;
        self.state.frame_index += 1;
        let h = self.cfg.rerank.distractor_threshold;
        let alpha = self.cfg.rerank.default_alpha;

        // Survivors arrive in rank order: the first is the provisional target.
        let mut candidates: Vec<usize> = Vec::new();
        for (i, p) in det.survivors.iter().enumerate() {
            if candidates.len() == self.cfg.top_k {
                break;
            }
            if p.similarity > 0.0 {
                candidates.push(i);
            }
        }
        if candidates.is_empty() {
            self.fail_frame();
            return Err(TrackError::NoCandidates);
        }
        let pre_target = candidates[0];
        let is_distractor =
            |i: usize, target: usize| self.cfg.distractor_aware && i != target && det.survivors[i].similarity > h;

        let mut embeddings: Vec<Option<FeatureMap>> = vec![None; det.survivors.len()];
        for i in 0..det.survivors.len() {
            if candidates.contains(&i) || is_distractor(i, pre_target) {
                embeddings[i] = Some(self.crop(&det, &det.survivors[i])?);
            }
        }
        let collect = |target: usize| -> Result<DistractorSet> {
            let mut set = DistractorSet::new();
            for (i, emb) in embeddings.iter().enumerate() {
                if is_distractor(i, target) {
                    if let Some(emb) = emb {
                        set.push(emb.clone(), alpha)?;
                    }
                }
            }
            Ok(set)
        };
        let current = collect(pre_target)?;
        let query = FactoredQuery::from_templates(&self.state.composite, &current, &self.cfg.rerank)?;
        let ranked: Vec<Proposal> = candidates
            .iter()
            .map(|&i| {
                let mut p = det.survivors[i].clone();
                p.embedding = embeddings[i].clone();
                p
            })
            .collect();
        let reranked = query.score(&ranked)?;
        let best_idx = candidates[reranked.best];
        let raw = reranked.scores[reranked.best];
        let reference = query.score_one(&zbar)?;
        let score = if reference > 0.0 {
            squash(raw / reference, self.cfg.calib_steepness)
        } else {
            0.0
        };
        let best = &det.survivors[best_idx];
        let detected = best.bbox.center();

        if self.cfg.longterm_enabled {
            update_mode(&mut self.state, score, detected, &self.cfg.longterm);
        } else {
            self.state.mode = Mode::ShortTerm;
            self.state.failure_iters = 0;
            if score >= self.cfg.longterm.enter_threshold {
                self.state.center = detected;
            }
        }

        let confident = score >= self.cfg.longterm.enter_threshold;
        let update = confident && self.state.mode == Mode::ShortTerm;
        let distractors = if best_idx == pre_target {
            current
        } else {
            collect(best_idx)?
        };
        let count = distractors.len();
        if update {
            let z_t = embeddings[best_idx].as_ref().ok_or(TrackError::NoCandidates)?;
            self.state.composite.update(z_t, &distractors, &self.cfg.rerank)?;
        }
        Ok(TrackOutput {
            bbox: BBox {
                cx: detected.0,
                cy: detected.1,
                w: self.state.target_size.0,
                h: self.state.target_size.1,
            },
            score,
            raw_score: raw,
            mode: self.state.mode,
            region_size: size,
            distractors: count,
            templates_updated: update,
        })
    }

    fn fail_frame(&mut self) {
        if self.cfg.longterm_enabled {
            let center = self.state.center;
            update_mode(&mut self.state, 0.0, center, &self.cfg.longterm);
        }
    }
}
