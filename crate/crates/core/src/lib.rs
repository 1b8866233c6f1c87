//! Distractor-aware Siamese tracking over pluggable embeddings.
//!
//! The pipeline per frame: embed a search region, correlate it with the
//! accumulated target template, decode anchor proposals, suppress
//! overlaps, re-rank the best proposals against a composite of target and
//! distractor templates, then update the failure/short-term mode and the
//! templates.

pub mod corr;
pub mod distractor;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod longterm;
pub mod proposals;
pub mod sampler;
pub mod tracker;

pub use corr::{FeatureMap, ResponseMap};
pub use embedding::{BBox, EmbeddingProvider, Extent, Frame, Geometry};
pub use error::{Result, TrackError};
pub use longterm::Mode;
pub use tracker::{TrackOutput, Tracker, TrackerConfig};
