//! Six-way detection error taxonomy.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::proposals::iou;
use crate::types::DetectionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Classification,
    Localization,
    Both,
    Duplicate,
    Background,
    MissedGt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TideConfig {
    /// Foreground IoU: a correct-class match at or above this is a true positive.
    pub t_fg: f64,
    /// Background IoU: below this against every GT the prediction is background.
    pub t_bg: f64,
}

impl Default for TideConfig {
    fn default() -> Self {
        Self {
            t_fg: 0.5,
            t_bg: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub classification: usize,
    pub localization: usize,
    pub both: usize,
    pub duplicate: usize,
    pub background: usize,
    pub missed_gt: usize,
    pub true_positives: usize,
}

impl ErrorCounts {
    pub fn get(&self, t: ErrorType) -> usize {
        match t {
            ErrorType::Classification => self.classification,
            ErrorType::Localization => self.localization,
            ErrorType::Both => self.both,
            ErrorType::Duplicate => self.duplicate,
            ErrorType::Background => self.background,
            ErrorType::MissedGt => self.missed_gt,
        }
    }

    fn bump(&mut self, t: ErrorType) {
        match t {
            ErrorType::Classification => self.classification += 1,
            ErrorType::Localization => self.localization += 1,
            ErrorType::Both => self.both += 1,
            ErrorType::Duplicate => self.duplicate += 1,
            ErrorType::Background => self.background += 1,
            ErrorType::MissedGt => self.missed_gt += 1,
        }
    }

    /// Errors attributed to predictions (everything except missed GT).
    pub fn prediction_errors(&self) -> usize {
        self.classification + self.localization + self.both + self.duplicate + self.background
    }
}

impl Add for ErrorCounts {
    type Output = ErrorCounts;

    fn add(mut self, rhs: ErrorCounts) -> ErrorCounts {
        self += rhs;
        self
    }
}

impl AddAssign for ErrorCounts {
    fn add_assign(&mut self, rhs: ErrorCounts) {
        self.classification += rhs.classification;
        self.localization += rhs.localization;
        self.both += rhs.both;
        self.duplicate += rhs.duplicate;
        self.background += rhs.background;
        self.missed_gt += rhs.missed_gt;
        self.true_positives += rhs.true_positives;
    }
}

/// Outcome for one prediction: `None` for a true positive.
pub fn classify_predictions(
    preds: &DetectionSet,
    gt: &DetectionSet,
    cfg: &TideConfig,
) -> (Vec<Option<ErrorType>>, Vec<bool>) {
    let mut order: Vec<usize> = (0..preds.detections.len()).collect();
    order.sort_by(|&a, &b| {
        preds.detections[b]
            .score
            .total_cmp(&preds.detections[a].score)
    });
    let mut matched = vec![false; gt.detections.len()];
    let mut outcome = vec![None; preds.detections.len()];

    for i in order {
        let p = &preds.detections[i];
        let ious: Vec<f64> = gt
            .detections
            .iter()
            .map(|g| iou(&p.bbox, &g.bbox))
            .collect();
        let same = |g: usize| gt.detections[g].category == p.category;

        let tp = (0..ious.len())
            .filter(|&g| same(g) && !matched[g] && ious[g] >= cfg.t_fg)
            .max_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(b.cmp(&a)));
        if let Some(g) = tp {
            matched[g] = true;
            continue;
        }

        let max_where = |pred: &dyn Fn(usize) -> bool| {
            (0..ious.len())
                .filter(|&g| pred(g))
                .map(|g| ious[g])
                .fold(0.0, f64::max)
        };
        let same_cls = max_where(&|g| same(g));
        let other_cls = max_where(&|g| !same(g));

        outcome[i] = Some(if same_cls >= cfg.t_bg && same_cls < cfg.t_fg {
            ErrorType::Localization
        } else if other_cls >= cfg.t_fg {
            ErrorType::Classification
        } else if same_cls >= cfg.t_fg {
            ErrorType::Duplicate
        } else if same_cls.max(other_cls) < cfg.t_bg {
            ErrorType::Background
        } else {
            ErrorType::Both
        });
    }
    (outcome, matched)
}

/// Counts each prediction's error type (or true positive) and the GT boxes never matched.
pub fn tide_errors(preds: &DetectionSet, gt: &DetectionSet, cfg: &TideConfig) -> ErrorCounts {
    let (outcome, matched) = classify_predictions(preds, gt, cfg);
    let mut counts = ErrorCounts::default();
    for o in outcome {
        match o {
            Some(t) => counts.bump(t),
            None => counts.true_positives += 1,
        }
    }
    counts.missed_gt = matched.iter().filter(|m| !**m).count();
    counts
}
