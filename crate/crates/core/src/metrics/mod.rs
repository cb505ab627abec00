//! Detection and scene-graph evaluation.

pub mod coco;
pub mod report;
pub mod sgdet;
pub mod tide;

pub use coco::{eval_detection, iou_thresholds, DetectionMetrics};
pub use report::{
    evaluate, render_ablation, render_reports, EvalReport, DEFAULT_KS, DEFAULT_MAX_DETS,
};
pub use sgdet::{eval_sgdet, ConstraintMode, RecallTable, SGDET_IOU};
pub use tide::{classify_predictions, tide_errors, ErrorCounts, ErrorType, TideConfig};
