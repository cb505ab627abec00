//! Grounding category-only scene graph annotations onto detections.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Detection, DetectionSet, LocalizedSceneGraph, LocalizedTriplet, Triplet, UnlocalizedSceneGraph,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingSubject,
    MissingObject,
    InsufficientDistinctInstances,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::MissingSubject => "no detection of the subject category",
            DropReason::MissingObject => "no detection of the object category",
            DropReason::InsufficientDistinctInstances => "insufficient distinct instances",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTriplet {
    pub triplet: Triplet,
    pub reason: DropReason,
}

/// Detections of one category sorted by score, highest first (stable on ties).
fn ranked(det: &DetectionSet, category: usize) -> Vec<&Detection> {
    let mut v: Vec<&Detection> = det.of_category(category).collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

fn ground_triplet(
    t: &Triplet,
    det: &DetectionSet,
) -> std::result::Result<LocalizedTriplet, DropReason> {
    let subjects = ranked(det, t.subject);
    let subject = *subjects.first().ok_or(DropReason::MissingSubject)?;
    let object = if t.subject == t.object {
        *subjects
            .iter()
            .find(|d| d.bbox != subject.bbox)
            .ok_or(DropReason::InsufficientDistinctInstances)?
    } else {
        *ranked(det, t.object)
            .first()
            .ok_or(DropReason::MissingObject)?
    };
    if subject.bbox == object.bbox {
        // Different categories on an identical box would break the graph invariant.
        return Err(DropReason::InsufficientDistinctInstances);
    }
    Ok(LocalizedTriplet {
        subject: *subject,
        object: *object,
        predicate: t.predicate,
        score: subject.score * object.score,
    })
}

fn ground_all(
    triplets: &[Triplet],
    det: &DetectionSet,
) -> Result<(LocalizedSceneGraph, Vec<DroppedTriplet>)> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for t in triplets {
        match ground_triplet(t, det) {
            Ok(lt) => kept.push(lt),
            Err(reason) => dropped.push(DroppedTriplet {
                triplet: *t,
                reason,
            }),
        }
    }
    Ok((LocalizedSceneGraph::new(det.frame.clone(), kept)?, dropped))
}

/// Matches each annotated triplet to the highest-scoring detections of its
/// subject and object categories. Triplet score is the product of the two
/// detection scores.
pub fn ground_annotation(
    ann: &UnlocalizedSceneGraph,
    det: &DetectionSet,
) -> Result<(LocalizedSceneGraph, Vec<DroppedTriplet>)> {
    if det.frame.video_id != ann.video_id || det.frame.frame_index != ann.annotated_frame_index {
        return Err(Error::FrameMismatch(format!(
            "annotation is for {}#{}, detections are for {}",
            ann.video_id, ann.annotated_frame_index, det.frame
        )));
    }
    ground_all(&ann.triplets, det)
}

/// Re-grounds the triplets of `g` on every frame by category. Triplets that
/// cannot be grounded on a frame are left out of that frame's graph.
/// Output is sorted by frame index.
pub fn propagate(
    g: &LocalizedSceneGraph,
    dets_by_frame: &[DetectionSet],
) -> Result<Vec<LocalizedSceneGraph>> {
    if let Some(d) = dets_by_frame
        .iter()
        .find(|d| d.frame.video_id != g.frame.video_id)
    {
        return Err(Error::Validation(format!(
            "frame {} does not belong to video {}",
            d.frame, g.frame.video_id
        )));
    }
    let triplets: Vec<Triplet> = g
        .triplets
        .iter()
        .map(LocalizedTriplet::categories)
        .collect();
    let mut order: Vec<&DetectionSet> = dets_by_frame.iter().collect();
    order.sort_by_key(|d| d.frame.frame_index);
    order
        .into_iter()
        .map(|d| ground_all(&triplets, d).map(|(lg, _)| lg))
        .collect()
}
