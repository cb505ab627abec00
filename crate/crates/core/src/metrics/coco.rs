//! COCO-style box AP/AR.
//!
//! IoU thresholds `0.50:0.05:0.95`, 101-point interpolated precision, per
//! image top-`maxDets` truncation, averaged over categories that have at
//! least one ground-truth box.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proposals::iou;
use crate::types::DetectionSet;

pub const RECALL_POINTS: usize = 101;

pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50.0 + 5.0 * i as f64) / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub ap: BTreeMap<usize, f64>,
    pub ar: BTreeMap<usize, f64>,
}

pub(crate) fn check_alignment<'a, I, J>(preds: I, gts: J) -> Result<()>
where
    I: ExactSizeIterator<Item = (&'a str, usize)>,
    J: ExactSizeIterator<Item = (&'a str, usize)>,
{
    if preds.len() != gts.len() {
        return Err(Error::Validation(format!(
            "{} prediction frames vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    for (i, (p, g)) in preds.zip(gts).enumerate() {
        if p != g {
            return Err(Error::Validation(format!(
                "frame {i} misaligned: prediction {}#{} vs ground truth {}#{}",
                p.0, p.1, g.0, g.1
            )));
        }
    }
    Ok(())
}

/// Greedy score-ordered matching of one image/category at one IoU threshold.
///
/// `ious[d][g]` for detections already sorted by score. Returns a TP flag per detection.
pub fn greedy_match(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; n_gt];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &v) in row.iter().enumerate() {
                if taken[g] || v < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Interpolated AP from score-sorted TP flags; also returns the final recall.
pub fn precision_recall(flags: &[bool], n_gt: usize) -> (f64, f64) {
    if flags.is_empty() || n_gt == 0 {
        return (0.0, 0.0);
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&v| v < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    (
        sum / RECALL_POINTS as f64,
        *recall.last().expect("non-empty"),
    )
}

/// COCO AP/AR for each `maxDets` value. `preds[i]` and `gts[i]` must describe the same frame.
pub fn eval_detection(
    preds: &[DetectionSet],
    gts: &[DetectionSet],
    max_dets: &[usize],
) -> Result<DetectionMetrics> {
    check_alignment(
        preds
            .iter()
            .map(|p| (p.frame.video_id.as_str(), p.frame.frame_index)),
        gts.iter()
            .map(|g| (g.frame.video_id.as_str(), g.frame.frame_index)),
    )?;
    let categories: BTreeSet<usize> = gts
        .iter()
        .flat_map(|g| g.detections.iter().map(|d| d.category))
        .collect();
    let thresholds = iou_thresholds();

    // Per category, per frame: det scores (sorted), IoU matrix, GT count.
    struct FrameCat {
        scores: Vec<f64>,
        ious: Vec<Vec<f64>>,
        n_gt: usize,
    }
    let prepared: Vec<(usize, Vec<FrameCat>)> = categories
        .iter()
        .map(|&c| {
            let frames = preds
                .iter()
                .zip(gts)
                .map(|(p, g)| {
                    let mut dets: Vec<_> = p.of_category(c).collect();
                    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
                    let gt_boxes: Vec<_> = g.of_category(c).map(|d| d.bbox).collect();
                    FrameCat {
                        scores: dets.iter().map(|d| d.score).collect(),
                        ious: dets
                            .iter()
                            .map(|d| gt_boxes.iter().map(|b| iou(&d.bbox, b)).collect())
                            .collect(),
                        n_gt: gt_boxes.len(),
                    }
                })
                .collect();
            (c, frames)
        })
        .collect();

    let mut ap = BTreeMap::new();
    let mut ar = BTreeMap::new();
    for &m in max_dets {
        let mut ap_sum = 0.0;
        let mut ar_sum = 0.0;
        let mut count = 0usize;
        for (_, frames) in &prepared {
            let n_gt: usize = frames.iter().map(|f| f.n_gt).sum();
            for &t in &thresholds {
                let mut scored: Vec<(f64, bool)> = Vec::new();
                for f in frames {
                    let k = f.scores.len().min(m);
                    let flags = greedy_match(&f.ious[..k], f.n_gt, t);
                    scored.extend(f.scores[..k].iter().copied().zip(flags));
                }
                scored.sort_by(|a, b| b.0.total_cmp(&a.0));
                let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
                let (p, r) = precision_recall(&flags, n_gt);
                ap_sum += p;
                ar_sum += r;
                count += 1;
            }
        }
        let (a, r) = if count == 0 {
            (0.0, 0.0)
        } else {
            (ap_sum / count as f64, ar_sum / count as f64)
        };
        ap.insert(m, a);
        ar.insert(m, r);
    }
    Ok(DetectionMetrics { ap, ar })
}
