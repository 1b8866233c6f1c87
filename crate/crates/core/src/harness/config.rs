//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::embedding::Geometry;
use crate::error::{Result, TrackError};
use crate::tracker::TrackerConfig;

/// Everything needed to build a tracker over a feature grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineConfig {
    pub tracker: TrackerConfig,
    pub geometry: Geometry,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| TrackError::arg(format!("bad value {raw:?} for {key}")))
}

fn list(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',').map(|v| value(key, v.trim())).collect()
}

fn optional_u32(key: &str, raw: &str) -> Result<Option<u32>> {
    if raw.is_empty() || raw == "auto" {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl EngineConfig {
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.tracker;
        match key {
            "alpha_hat" => t.rerank.alpha_hat = value(key, raw)?,
            "alpha" => t.rerank.default_alpha = value(key, raw)?,
            "h" => t.rerank.distractor_threshold = value(key, raw)?,
            "eta" => t.rerank.eta = value(key, raw)?,
            "bias" => t.rerank.bias = value(key, raw)?,
            "enter" => t.longterm.enter_threshold = value(key, raw)?,
            "leave" => t.longterm.leave_threshold = value(key, raw)?,
            "short_size" => t.longterm.short_size = value(key, raw)?,
            "failure_size" => t.longterm.failure_size = value(key, raw)?,
            "step" => t.longterm.step = optional_u32(key, raw)?,
            "max_size" => t.longterm.max_size = optional_u32(key, raw)?,
            "nms_iou" => t.nms_iou = value(key, raw)?,
            "top_k" => t.top_k = value(key, raw)?,
            "window_weight" => t.window_weight = value(key, raw)?,
            "anchor_base" => t.anchors.base_size = value(key, raw)?,
            "anchor_ratios" => t.anchors.ratios = list(key, raw)?,
            "anchor_scales" => t.anchors.scales = list(key, raw)?,
            "calib_steepness" => t.calib_steepness = value(key, raw)?,
            "peak_radius" => t.peak_radius = value(key, raw)?,
            "longterm" => t.longterm_enabled = value(key, raw)?,
            "distractor_aware" => t.distractor_aware = value(key, raw)?,
            "stride" => {
                let s = value(key, raw)?;
                self.geometry.stride = s;
                t.anchors.stride = s;
            }
            "exemplar_cells" => self.geometry.exemplar_cells = value(key, raw)?,
            "exemplar_context" => self.geometry.exemplar_context = value(key, raw)?,
            _ => return Err(TrackError::arg(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrackError::arg(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| TrackError::arg(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrackError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.tracker.validate()?;
        if self.tracker.anchors.stride != self.geometry.stride {
            return Err(TrackError::arg("anchor stride must equal the feature stride"));
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`EngineConfig::parse`] reads back.
    pub fn to_kv(&self) -> String {
        let t = &self.tracker;
        let opt = |v: Option<u32>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("alpha_hat", t.rerank.alpha_hat.to_string());
        kv("alpha", t.rerank.default_alpha.to_string());
        kv("h", t.rerank.distractor_threshold.to_string());
        kv("eta", t.rerank.eta.to_string());
        kv("bias", t.rerank.bias.to_string());
        kv("enter", t.longterm.enter_threshold.to_string());
        kv("leave", t.longterm.leave_threshold.to_string());
        kv("short_size", t.longterm.short_size.to_string());
        kv("failure_size", t.longterm.failure_size.to_string());
        kv("step", opt(t.longterm.step));
        kv("max_size", opt(t.longterm.max_size));
        kv("nms_iou", t.nms_iou.to_string());
        kv("top_k", t.top_k.to_string());
        kv("window_weight", t.window_weight.to_string());
        kv("anchor_base", t.anchors.base_size.to_string());
        kv("anchor_ratios", join(&t.anchors.ratios));
        kv("anchor_scales", join(&t.anchors.scales));
        kv("calib_steepness", t.calib_steepness.to_string());
        kv("peak_radius", t.peak_radius.to_string());
        kv("longterm", t.longterm_enabled.to_string());
        kv("distractor_aware", t.distractor_aware.to_string());
        kv("stride", self.geometry.stride.to_string());
        kv("exemplar_cells", self.geometry.exemplar_cells.to_string());
        kv("exemplar_context", self.geometry.exemplar_context.to_string());
        s
    }
}
