use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::coco::eval_detection;
use super::sgdet::{eval_sgdet, ConstraintMode, RecallTable};
use super::tide::{tide_errors, ErrorCounts, TideConfig};
use crate::error::Result;
use crate::types::{DetectionSet, LocalizedSceneGraph};

pub const DEFAULT_MAX_DETS: [usize; 2] = [1, 10];
pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_maxdets: BTreeMap<usize, f64>,
    pub ar_maxdets: BTreeMap<usize, f64>,
    pub recall_at: RecallTable,
    pub error_counts: ErrorCounts,
}

impl EvalReport {
    pub fn ap(&self, max_dets: usize) -> f64 {
        self.ap_maxdets.get(&max_dets).copied().unwrap_or(0.0)
    }

    pub fn ar(&self, max_dets: usize) -> f64 {
        self.ar_maxdets.get(&max_dets).copied().unwrap_or(0.0)
    }

    pub fn recall(&self, mode: ConstraintMode, k: usize) -> f64 {
        self.recall_at
            .get(&mode)
            .and_then(|r| r.get(&k))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Full report: box AP/AR, SGDET recall and the error taxonomy summed over frames.
pub fn evaluate(
    dets: &[DetectionSet],
    gt_dets: &[DetectionSet],
    graphs: &[LocalizedSceneGraph],
    gt_graphs: &[LocalizedSceneGraph],
    tide: &TideConfig,
) -> Result<EvalReport> {
    let det = eval_detection(dets, gt_dets, &DEFAULT_MAX_DETS)?;
    let recall_at = eval_sgdet(graphs, gt_graphs, &DEFAULT_KS)?;
    let error_counts = dets
        .iter()
        .zip(gt_dets)
        .map(|(p, g)| tide_errors(p, g, tide))
        .fold(ErrorCounts::default(), |a, b| a + b);
    Ok(EvalReport {
        ap_maxdets: det.ap,
        ar_maxdets: det.ar,
        recall_at,
        error_counts,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Detection, recall and error tables for named reports, values in percent.
pub fn render_reports(named: &[(&str, &EvalReport)]) -> String {
    let mut header = vec!["method".to_string()];
    for m in DEFAULT_MAX_DETS {
        header.push(format!("AP@{m}"));
    }
    for m in DEFAULT_MAX_DETS {
        header.push(format!("AR@{m}"));
    }
    let det_rows: Vec<Vec<String>> = named
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.to_string()];
            row.extend(DEFAULT_MAX_DETS.iter().map(|&m| pct(r.ap(m))));
            row.extend(DEFAULT_MAX_DETS.iter().map(|&m| pct(r.ar(m))));
            row
        })
        .collect();

    let mut rheader = vec!["method".to_string()];
    for mode in ConstraintMode::ALL {
        let tag = match mode {
            ConstraintMode::WithConstraint => "wc",
            ConstraintMode::NoConstraint => "nc",
        };
        for k in DEFAULT_KS {
            rheader.push(format!("R@{k} {tag}"));
        }
    }
    let rec_rows: Vec<Vec<String>> = named
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.to_string()];
            for mode in ConstraintMode::ALL {
                row.extend(DEFAULT_KS.iter().map(|&k| pct(r.recall(mode, k))));
            }
            row
        })
        .collect();

    let eheader: Vec<String> = [
        "method", "cls", "loc", "both", "dupl", "bkg", "missed", "tp",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let err_rows: Vec<Vec<String>> = named
        .iter()
        .map(|(name, r)| {
            let e = &r.error_counts;
            let mut row = vec![name.to_string()];
            row.extend(
                [
                    e.classification,
                    e.localization,
                    e.both,
                    e.duplicate,
                    e.background,
                    e.missed_gt,
                    e.true_positives,
                ]
                .iter()
                .map(usize::to_string),
            );
            row
        })
        .collect();

    format!(
        "detection\n{}\nscene graph detection\n{}\nerrors\n{}",
        table(&header, &det_rows),
        table(&rheader, &rec_rows),
        table(&eheader, &err_rows)
    )
}

/// Ablation table: one row per variant with stage marks and AP/AR.
pub fn render_ablation(rows: &[(bool, bool, bool, &EvalReport)]) -> String {
    let mut header: Vec<String> = ["CBM", "LRM", "IAA"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in DEFAULT_MAX_DETS {
        header.push(format!("AP@{m}"));
    }
    for m in DEFAULT_MAX_DETS {
        header.push(format!("AR@{m}"));
    }
    let mark = |b: bool| if b { "x".to_string() } else { "-".to_string() };
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|&(cbm, lrm, iaa, r)| {
            let mut row = vec![mark(cbm), mark(lrm), mark(iaa)];
            row.extend(DEFAULT_MAX_DETS.iter().map(|&m| pct(r.ap(m))));
            row.extend(DEFAULT_MAX_DETS.iter().map(|&m| pct(r.ar(m))));
            row
        })
        .collect();
    table(&header, &body)
}
