//! Shared domain types passed between pipeline stages.
//!
//! Every type validates its invariants on construction and is immutable
//! afterwards, so values can be shared freely across threads.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One frame of a video, with its pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
}

impl FrameRef {
    pub fn new(
        video_id: impl Into<String>,
        frame_index: usize,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            frame_index,
            width,
            height,
        })
    }

    pub(crate) fn ensure_same(&self, other: &FrameRef, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::FrameMismatch(format!(
                "{what}: {}#{} ({}x{}) vs {}#{} ({}x{})",
                self.video_id,
                self.frame_index,
                self.width,
                self.height,
                other.video_id,
                other.frame_index,
                other.width,
                other.height
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.video_id, self.frame_index)
    }
}

/// Axis-aligned box in half-open pixel coordinates: `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation(format!(
                "box {self:?} has non-finite coordinates"
            )));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::Validation(format!(
                "box ({}, {}, {}, {}) requires x1 < x2 and y1 < y2",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Clamp into `[0, width] x [0, height]`; fails if nothing is left.
    pub fn clamp_to(&self, frame: &FrameRef) -> Result<Self> {
        let (w, h) = (frame.width as f64, frame.height as f64);
        BBox::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
    }

    pub fn within(&self, frame: &FrameRef) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= frame.width as f64
            && self.y2 <= frame.height as f64
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: usize,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: usize, score: f64) -> Result<Self> {
        bbox.validate()?;
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!(
                "score {score} must lie in [0,1]"
            )));
        }
        Ok(Self {
            bbox,
            category,
            score,
        })
    }
}

/// Which pipeline stage produced a detection set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    /// External detector output.
    External,
    /// Threshold proposals from attention.
    Internal,
    /// Localization refinement output.
    Lrm,
    /// Proposals from the confidence-boosted attention.
    Cbm,
    /// WBF of the two refinement streams.
    Fused,
    /// Output of the last refinement stage.
    Final,
    /// Ground-truth boxes.
    Gt,
}

impl fmt::Display for DetectionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DetectionSource::External => "external",
            DetectionSource::Internal => "internal",
            DetectionSource::Lrm => "lrm",
            DetectionSource::Cbm => "cbm",
            DetectionSource::Fused => "fused",
            DetectionSource::Final => "final",
            DetectionSource::Gt => "gt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub frame: FrameRef,
    pub detections: Vec<Detection>,
    pub source: DetectionSource,
}

impl DetectionSet {
    /// Builds a set after checking that every box lies inside the frame.
    pub fn new(
        frame: FrameRef,
        detections: Vec<Detection>,
        source: DetectionSource,
    ) -> Result<Self> {
        for (i, d) in detections.iter().enumerate() {
            d.bbox.validate()?;
            if !d.bbox.within(&frame) {
                return Err(Error::Validation(format!(
                    "detection {i} box {:?} leaves frame {}x{}",
                    d.bbox.to_array(),
                    frame.width,
                    frame.height
                )));
            }
        }
        Ok(Self {
            frame,
            detections,
            source,
        })
    }

    pub fn empty(frame: FrameRef, source: DetectionSource) -> Self {
        Self {
            frame,
            detections: Vec::new(),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn with_source(mut self, source: DetectionSource) -> Self {
        self.source = source;
        self
    }

    pub fn of_category(&self, category: usize) -> impl Iterator<Item = &Detection> {
        self.detections
            .iter()
            .filter(move |d| d.category == category)
    }
}

/// Role of an attention stack in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Straight from a decoder.
    Raw,
    /// Object attention with relation attention fused in.
    Fused,
    /// Previous frame's fused attention warped by optical flow.
    Pseudo,
}

/// Per-category attention maps over an `h x w` grid, values in `[0,1]`.
///
/// Storage is category-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    frame: FrameRef,
    categories: Vec<usize>,
    height: usize,
    width: usize,
    data: Vec<f32>,
    provenance: Provenance,
}

impl AttentionStack {
    pub fn new(
        frame: FrameRef,
        categories: Vec<usize>,
        height: usize,
        width: usize,
        data: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "attention grid must be non-empty, got {height}x{width}"
            )));
        }
        if categories.is_empty() {
            return Err(Error::Shape(
                "attention stack needs at least one category".into(),
            ));
        }
        let expected = categories.len() * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "attention data has {} values, expected {}x{}x{} = {expected}",
                data.len(),
                categories.len(),
                height,
                width
            )));
        }
        let plane = height * width;
        if let Some((i, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidCell {
                category: i / plane,
                row: (i % plane) / width,
                col: i % width,
                value,
            });
        }
        Ok(Self {
            frame,
            categories,
            height,
            width,
            data,
            provenance,
        })
    }

    pub fn zeros(
        frame: FrameRef,
        categories: Vec<usize>,
        height: usize,
        width: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = categories.len() * height * width;
        Self::new(frame, categories, height, width, vec![0.0; n], provenance)
    }

    /// Internal constructor for values already known to be in range.
    pub(crate) fn from_trusted(
        frame: FrameRef,
        categories: Vec<usize>,
        height: usize,
        width: usize,
        data: Vec<f32>,
        provenance: Provenance,
    ) -> Self {
        debug_assert_eq!(data.len(), categories.len() * height * width);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            frame,
            categories,
            height,
            width,
            data,
            provenance,
        }
    }

    pub fn frame(&self) -> &FrameRef {
        &self.frame
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Pixels per attention cell along x and y.
    pub fn grid_scale(&self) -> (f64, f64) {
        (
            self.frame.width as f64 / self.width as f64,
            self.frame.height as f64 / self.height as f64,
        )
    }

    /// The `h*w` plane of the category at position `index`.
    pub fn map(&self, index: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[index * plane..(index + 1) * plane]
    }

    pub fn get(&self, index: usize, row: usize, col: usize) -> f32 {
        self.data[(index * self.height + row) * self.width + col]
    }

    pub fn position_of(&self, category: usize) -> Option<usize> {
        self.categories.iter().position(|&c| c == category)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_frame(mut self, frame: FrameRef) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_categories(self, categories: Vec<usize>) -> Result<Self> {
        if categories.len() != self.categories.len() {
            return Err(Error::Shape(format!(
                "{} category ids for a stack of {} maps",
                categories.len(),
                self.categories.len()
            )));
        }
        Ok(Self { categories, ..self })
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Backward optical flow: cell `q` of this frame came from `q + data[q]` in the previous one.
///
/// Displacements are `(dx, dy)` pairs in attention-grid units, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    frame: FrameRef,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(frame: FrameRef, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "flow grid must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 2 {
            return Err(Error::Shape(format!(
                "flow data has {} values, expected {height}x{width}x2",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "flow value at cell ({},{}) is not finite",
                (i / 2) / width,
                (i / 2) % width
            )));
        }
        Ok(Self {
            frame,
            height,
            width,
            data,
        })
    }

    pub fn zeros(frame: FrameRef, height: usize, width: usize) -> Result<Self> {
        Self::new(frame, height, width, vec![0.0; height * width * 2])
    }

    pub fn frame(&self) -> &FrameRef {
        &self.frame
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `(dx, dy)` at a cell.
    pub fn at(&self, row: usize, col: usize) -> (f32, f32) {
        let i = (row * self.width + col) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn with_frame(mut self, frame: FrameRef) -> Self {
        self.frame = frame;
        self
    }
}

/// Category-only `(subject, object, predicate)` triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

/// The single unlocalized annotation a video carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlocalizedSceneGraph {
    pub video_id: String,
    pub annotated_frame_index: usize,
    pub triplets: Vec<Triplet>,
}

impl UnlocalizedSceneGraph {
    pub fn new(
        video_id: impl Into<String>,
        annotated_frame_index: usize,
        triplets: Vec<Triplet>,
    ) -> Result<Self> {
        let g = Self {
            video_id: video_id.into(),
            annotated_frame_index,
            triplets,
        };
        g.validate(None)?;
        Ok(g)
    }

    pub fn validate(&self, vocab: Option<&CategoryVocabulary>) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(Error::Validation(
                "scene graph annotation has no triplets".into(),
            ));
        }
        if let Some(v) = vocab {
            for (i, t) in self.triplets.iter().enumerate() {
                v.check_object(t.subject)
                    .and_then(|_| v.check_object(t.object))
                    .and_then(|_| v.check_relation(t.predicate))
                    .map_err(|e| Error::Validation(format!("triplet {i}: {e}")))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedTriplet {
    pub subject: Detection,
    pub object: Detection,
    pub predicate: usize,
    pub score: f64,
}

impl LocalizedTriplet {
    pub fn categories(&self) -> Triplet {
        Triplet {
            subject: self.subject.category,
            object: self.object.category,
            predicate: self.predicate,
        }
    }
}

/// Box-grounded scene graph for one frame (pseudo labels or ground truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedSceneGraph {
    pub frame: FrameRef,
    pub triplets: Vec<LocalizedTriplet>,
}

impl LocalizedSceneGraph {
    pub fn new(frame: FrameRef, triplets: Vec<LocalizedTriplet>) -> Result<Self> {
        for (i, t) in triplets.iter().enumerate() {
            if t.subject.bbox == t.object.bbox {
                return Err(Error::Validation(format!(
                    "triplet {i}: subject and object share a box"
                )));
            }
            if !t.score.is_finite() || !(0.0..=1.0).contains(&t.score) {
                return Err(Error::Validation(format!(
                    "triplet {i}: score {} outside [0,1]",
                    t.score
                )));
            }
        }
        Ok(Self { frame, triplets })
    }

    pub fn empty(frame: FrameRef) -> Self {
        Self {
            frame,
            triplets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub object_classes: Vec<String>,
    pub relation_classes: Vec<String>,
}

impl CategoryVocabulary {
    pub fn new(object_classes: Vec<String>, relation_classes: Vec<String>) -> Result<Self> {
        let v = Self {
            object_classes,
            relation_classes,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, names) in [
            ("object", &self.object_classes),
            ("relation", &self.relation_classes),
        ] {
            if names.is_empty() {
                return Err(Error::Validation(format!("{what} vocabulary is empty")));
            }
            let mut seen = HashSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate {what} class name {n:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        self.object_classes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_classes.len()
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_classes.iter().position(|n| n == name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_classes.iter().position(|n| n == name)
    }

    pub fn check_object(&self, id: usize) -> Result<()> {
        if id >= self.object_classes.len() {
            return Err(Error::Validation(format!(
                "unknown object category id {id} (vocabulary has {})",
                self.object_classes.len()
            )));
        }
        Ok(())
    }

    pub fn check_relation(&self, id: usize) -> Result<()> {
        if id >= self.relation_classes.len() {
            return Err(Error::Validation(format!(
                "unknown relation category id {id} (vocabulary has {})",
                self.relation_classes.len()
            )));
        }
        Ok(())
    }
}
