//! Scene graph detection recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::coco::check_alignment;
use crate::error::Result;
use crate::proposals::iou;
use crate::types::{LocalizedSceneGraph, LocalizedTriplet};

/// Box IoU both endpoints must reach to match.
pub const SGDET_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// At most one predicate per subject-object pair.
    WithConstraint,
    /// Every predicted predicate is ranked.
    NoConstraint,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 2] =
        [ConstraintMode::WithConstraint, ConstraintMode::NoConstraint];
}

pub type RecallTable = BTreeMap<ConstraintMode, BTreeMap<usize, f64>>;

fn matches(p: &LocalizedTriplet, g: &LocalizedTriplet) -> bool {
    p.predicate == g.predicate
        && p.subject.category == g.subject.category
        && p.object.category == g.object.category
        && iou(&p.subject.bbox, &g.subject.bbox) >= SGDET_IOU
        && iou(&p.object.bbox, &g.object.bbox) >= SGDET_IOU
}

fn pair_key(t: &LocalizedTriplet) -> [u64; 10] {
    let s = t.subject.bbox.to_array();
    let o = t.object.bbox.to_array();
    [
        t.subject.category as u64,
        s[0].to_bits(),
        s[1].to_bits(),
        s[2].to_bits(),
        s[3].to_bits(),
        t.object.category as u64,
        o[0].to_bits(),
        o[1].to_bits(),
        o[2].to_bits(),
        o[3].to_bits(),
    ]
}

/// Ranked candidate list for one frame, ties kept in input order.
fn ranking(pred: &LocalizedSceneGraph, mode: ConstraintMode) -> Vec<&LocalizedTriplet> {
    let mut list: Vec<&LocalizedTriplet> = match mode {
        ConstraintMode::NoConstraint => pred.triplets.iter().collect(),
        ConstraintMode::WithConstraint => {
            let mut best: BTreeMap<[u64; 10], (usize, &LocalizedTriplet)> = BTreeMap::new();
            for (i, t) in pred.triplets.iter().enumerate() {
                best.entry(pair_key(t))
                    .and_modify(|slot| {
                        if t.score > slot.1.score {
                            *slot = (slot.0, t);
                        }
                    })
                    .or_insert((i, t));
            }
            let mut kept: Vec<(usize, &LocalizedTriplet)> = best.into_values().collect();
            kept.sort_by_key(|k| k.0);
            kept.into_iter().map(|k| k.1).collect()
        }
    };
    list.sort_by(|a, b| b.score.total_cmp(&a.score));
    list
}

/// Recall@K per constraint mode, averaged over frames with at least one GT triplet.
///
/// A GT triplet counts as recalled when any of the top-K ranked predictions matches it.
pub fn eval_sgdet(
    preds: &[LocalizedSceneGraph],
    gts: &[LocalizedSceneGraph],
    ks: &[usize],
) -> Result<RecallTable> {
    check_alignment(
        preds
            .iter()
            .map(|p| (p.frame.video_id.as_str(), p.frame.frame_index)),
        gts.iter()
            .map(|g| (g.frame.video_id.as_str(), g.frame.frame_index)),
    )?;
    let mut table = RecallTable::new();
    for mode in ConstraintMode::ALL {
        let mut row = BTreeMap::new();
        for &k in ks {
            let mut sum = 0.0;
            let mut frames = 0usize;
            for (p, g) in preds.iter().zip(gts) {
                if g.triplets.is_empty() {
                    continue;
                }
                let ranked = ranking(p, mode);
                let top = &ranked[..ranked.len().min(k)];
                let hit = g
                    .triplets
                    .iter()
                    .filter(|gt| top.iter().any(|pt| matches(pt, gt)))
                    .count();
                sum += hit as f64 / g.triplets.len() as f64;
                frames += 1;
            }
            row.insert(
                k,
                if frames == 0 {
                    0.0
                } else {
                    sum / frames as f64
                },
            );
        }
        table.insert(mode, row);
    }
    Ok(table)
}
