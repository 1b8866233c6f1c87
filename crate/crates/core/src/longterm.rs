//! Failure detection and local-to-global search growth.

use crate::distractor::CompositeTemplates;
use crate::embedding::Extent;
use crate::error::{Result, TrackError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    ShortTerm,
    Failure,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ShortTerm => "short",
            Mode::Failure => "failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "short" => Some(Mode::ShortTerm),
            "failure" => Some(Mode::Failure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTermConfig {
    /// Leave short-term tracking below this score.
    pub enter_threshold: f64,
    /// Return to short-term tracking at or above this score.
    pub leave_threshold: f64,
    pub short_size: u32,
    pub failure_size: u32,
    /// Growth per failure iteration; defaults to `failure_size - short_size`.
    pub step: Option<u32>,
    /// Upper bound on the region; defaults to the frame diagonal rounded
    /// up to a stride multiple.
    pub max_size: Option<u32>,
}

impl Default for LongTermConfig {
    fn default() -> Self {
        Self {
            enter_threshold: 0.8,
            leave_threshold: 0.95,
            short_size: 255,
            failure_size: 767,
            step: None,
            max_size: None,
        }
    }
}

impl LongTermConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leave_threshold < self.enter_threshold {
            return Err(TrackError::arg(format!(
                "leave threshold {} below enter threshold {}",
                self.leave_threshold, self.enter_threshold
            )));
        }
        if self.failure_size <= self.short_size {
            return Err(TrackError::arg("failure region must be larger than the short-term region"));
        }
        if self.short_size == 0 {
            return Err(TrackError::arg("short-term region must be positive"));
        }
        Ok(())
    }

    pub fn effective_step(&self) -> u32 {
        self.step.unwrap_or(self.failure_size - self.short_size)
    }

    pub fn effective_max(&self, extent: Extent, stride: f64) -> u32 {
        let max = self.max_size.unwrap_or_else(|| {
            let cells = (extent.diagonal() / stride).ceil();
            (cells * stride).ceil() as u32
        });
        max.max(self.short_size)
    }
}

/// Per-sequence tracker state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub mode: Mode,
    /// Last confident target centre.
    pub center: (f64, f64),
    /// Tracked box size.
    pub target_size: (f64, f64),
    /// Consecutive failure iterations; zero in short-term mode.
    pub failure_iters: u32,
    pub composite: CompositeTemplates,
    pub frame_index: u64,
}

impl TrackerState {
    pub fn new(center: (f64, f64), target_size: (f64, f64), composite: CompositeTemplates) -> Self {
        Self {
            mode: Mode::ShortTerm,
            center,
            target_size,
            failure_iters: 0,
            composite,
            frame_index: 0,
        }
    }
}

/// Applies the enter/leave hysteresis for one frame's calibrated score.
///
/// The centre follows `detected` whenever the frame ends in short-term
/// mode; in failure mode it stays at the last confident position.
pub fn update_mode(state: &mut TrackerState, best_score: f64, detected: (f64, f64), cfg: &LongTermConfig) {
    match state.mode {
        Mode::ShortTerm if best_score < cfg.enter_threshold => {
            state.mode = Mode::Failure;
            state.failure_iters = 1;
        }
        Mode::ShortTerm => {
            state.center = detected;
        }
        Mode::Failure if best_score >= cfg.leave_threshold => {
            state.mode = Mode::ShortTerm;
            state.failure_iters = 0;
            state.center = detected;
        }
        Mode::Failure => {
            state.failure_iters = state.failure_iters.saturating_add(1);
        }
    }
}

/// Search region side in pixels for the current state.
pub fn search_size(state: &TrackerState, cfg: &LongTermConfig, extent: Extent, stride: f64) -> u32 {
    match state.mode {
        Mode::ShortTerm => cfg.short_size,
        Mode::Failure => {
            let grown = cfg.short_size as u64 + state.failure_iters as u64 * cfg.effective_step() as u64;
            grown.min(cfg.effective_max(extent, stride) as u64) as u32
        }
    }
}

/// Search region centre: the last confident position, or the frame centre
/// once a failure-mode region covers the whole frame.
pub fn failure_center(state: &TrackerState, region_size: u32, extent: Extent) -> (f64, f64) {
    let covers = region_size as f64 >= extent.width && region_size as f64 >= extent.height;
    match state.mode {
        Mode::Failure if covers => extent.center(),
        _ => state.center,
    }
}
