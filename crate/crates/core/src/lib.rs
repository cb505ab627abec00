//! Detection refinement for weakly supervised video scene graphs.
//!
//! Per-category attention maps are fused, turned into box proposals, merged
//! with an external detector and propagated across frames by optical flow.
//! The refined detections ground a category-only scene graph annotation into
//! per-frame pseudo scene graphs.

pub mod attention;
pub mod dfm;
pub mod error;
pub mod io;
pub mod metrics;
pub mod proposals;
pub mod pseudo_sg;
pub mod temporal;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use types::{
    AttentionStack, BBox, CategoryVocabulary, Detection, DetectionSet, DetectionSource, FlowField,
    FrameRef, LocalizedSceneGraph, LocalizedTriplet, Provenance, Triplet, UnlocalizedSceneGraph,
};
