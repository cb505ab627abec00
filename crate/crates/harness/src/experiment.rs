//! Runs refinement over a whole video and scores it against the external baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trkt_core::attention::fuse_attention;
use trkt_core::dfm::{refine_frame, CbmConfig, RefineConfig, RefineTrace, StageOrder};
use trkt_core::io;
use trkt_core::metrics::{
    evaluate, render_ablation, render_reports, ConstraintMode, EvalReport, TideConfig,
};
use trkt_core::proposals::{ExtractConfig, WbfConfig};
use trkt_core::pseudo_sg::{ground_annotation, propagate};
use trkt_core::temporal::warp_attention;
use trkt_core::{AttentionStack, DetectionSet, LocalizedSceneGraph, Result, UnlocalizedSceneGraph};

use crate::dataset::{create_dir, frame_file, write_json, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub wbf: WbfConfig,
    #[serde(default)]
    pub cbm: CbmConfig,
    #[serde(default = "yes")]
    pub use_lrm: bool,
    #[serde(default = "yes")]
    pub use_cbm: bool,
    #[serde(default = "yes")]
    pub use_iaa: bool,
    #[serde(default = "relation_first")]
    pub stage_order: StageOrder,
    /// Also run the five-row toggle grid.
    #[serde(default = "yes")]
    pub ablation: bool,
    #[serde(default)]
    pub tide: TideConfig,
}

fn yes() -> bool {
    true
}

fn relation_first() -> StageOrder {
    StageOrder::RelationFirst
}

impl RunConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        let r = RefineConfig::default();
        Self {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            extract: r.extract,
            wbf: r.wbf,
            cbm: r.cbm,
            use_lrm: r.use_lrm,
            use_cbm: r.use_cbm,
            use_iaa: r.use_iaa,
            stage_order: r.stage_order,
            ablation: true,
            tide: TideConfig::default(),
        }
    }

    pub fn refine(&self) -> RefineConfig {
        RefineConfig {
            extract: self.extract,
            wbf: self.wbf,
            cbm: self.cbm,
            use_lrm: self.use_lrm,
            use_cbm: self.use_cbm,
            use_iaa: self.use_iaa,
            stage_order: self.stage_order,
        }
    }
}

/// `(use_cbm, use_lrm, use_iaa)` rows of the ablation table.
pub const ABLATION_GRID: [(bool, bool, bool); 5] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (true, true, false),
    (true, true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_cbm: bool,
    pub use_lrm: bool,
    pub use_iaa: bool,
    pub report: EvalReport,
}

/// Refined minus baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub ap_maxdets: BTreeMap<usize, f64>,
    pub ar_maxdets: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<ConstraintMode, BTreeMap<usize, f64>>,
    pub error_counts: BTreeMap<String, i64>,
}

fn diff_maps(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    a.iter()
        .map(|(k, v)| (*k, v - b.get(k).copied().unwrap_or(0.0)))
        .collect()
}

impl ReportDelta {
    pub fn between(refined: &EvalReport, baseline: &EvalReport) -> Self {
        let counts = |r: &EvalReport| -> BTreeMap<String, i64> {
            match serde_json::to_value(r.error_counts) {
                Ok(serde_json::Value::Object(m)) => m
                    .into_iter()
                    .filter_map(|(k, v)| v.as_i64().map(|n| (k, n)))
                    .collect(),
                _ => BTreeMap::new(),
            }
        };
        let (cr, cb) = (counts(refined), counts(baseline));
        Self {
            ap_maxdets: diff_maps(&refined.ap_maxdets, &baseline.ap_maxdets),
            ar_maxdets: diff_maps(&refined.ar_maxdets, &baseline.ar_maxdets),
            recall_at: refined
                .recall_at
                .iter()
                .map(|(m, row)| {
                    (
                        *m,
                        diff_maps(row, baseline.recall_at.get(m).unwrap_or(&BTreeMap::new())),
                    )
                })
                .collect(),
            error_counts: cr
                .iter()
                .map(|(k, v)| (k.clone(), v - cb.get(k).copied().unwrap_or(0)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub video_id: String,
    pub frames: usize,
    pub baseline: EvalReport,
    pub refined: EvalReport,
    pub delta: ReportDelta,
    pub ablation: Vec<AblationRow>,
}

impl ExperimentReport {
    pub fn render(&self) -> String {
        let mut out = render_reports(&[("external", &self.baseline), ("refined", &self.refined)]);
        if !self.ablation.is_empty() {
            out.push('\n');
            let rows: Vec<_> = self
                .ablation
                .iter()
                .map(|r| (r.use_cbm, r.use_lrm, r.use_iaa, &r.report))
                .collect();
            out.push_str(&render_ablation(&rows));
        }
        out
    }
}

/// Per-frame products of one refinement pass.
#[derive(Debug, Clone)]
pub struct RefinedVideo {
    pub traces: Vec<RefineTrace>,
    pub graphs: Vec<LocalizedSceneGraph>,
}

impl RefinedVideo {
    pub fn final_detections(&self) -> Vec<DetectionSet> {
        self.traces.iter().map(|t| t.d_final.clone()).collect()
    }
}

/// Grounds the annotation on its frame, then re-grounds it on every frame.
pub fn pseudo_graphs(
    annotation: &UnlocalizedSceneGraph,
    dets: &[DetectionSet],
) -> Result<Vec<LocalizedSceneGraph>> {
    let anchor = dets
        .iter()
        .find(|d| d.frame.frame_index == annotation.annotated_frame_index)
        .ok_or_else(|| {
            trkt_core::Error::Validation(format!(
                "no detections for annotated frame {}",
                annotation.annotated_frame_index
            ))
        })?;
    let (base, _) = ground_annotation(annotation, anchor)?;
    propagate(&base, dets)
}

/// Fused attention per frame and the pseudo attention warped in from the previous frame.
fn attention_streams(data: &Dataset) -> Result<(Vec<AttentionStack>, Vec<Option<AttentionStack>>)> {
    let fused: Vec<AttentionStack> = data
        .frames
        .par_iter()
        .map(|f| fuse_attention(&f.object_attention, &f.relation_attention))
        .collect::<Result<_>>()?;
    let pseudo = data
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| match (&f.flow, t) {
            (Some(flow), t) if t > 0 => warp_attention(&fused[t - 1], flow).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok((fused, pseudo))
}

fn refine_with(
    data: &Dataset,
    fused: &[AttentionStack],
    pseudo: &[Option<AttentionStack>],
    cfg: &RefineConfig,
) -> Result<RefinedVideo> {
    let traces: Vec<RefineTrace> = data
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| refine_frame(&fused[t], pseudo[t].as_ref(), &f.logits, &f.external, cfg))
        .collect::<Result<_>>()?;
    let finals: Vec<DetectionSet> = traces.iter().map(|t| t.d_final.clone()).collect();
    let graphs = pseudo_graphs(&data.annotation, &finals)?;
    Ok(RefinedVideo { traces, graphs })
}

pub fn refine_video(data: &Dataset, cfg: &RefineConfig) -> Result<RefinedVideo> {
    cfg.validate()?;
    let (fused, pseudo) = attention_streams(data)?;
    refine_with(data, &fused, &pseudo, cfg)
}

/// Everything `run` computes, before anything is written.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub refined: RefinedVideo,
    pub baseline_graphs: Vec<LocalizedSceneGraph>,
}

pub fn run_on_dataset(data: &Dataset, cfg: &RunConfig) -> Result<Experiment> {
    let refine_cfg = cfg.refine();
    refine_cfg.validate()?;
    let gt_dets: Vec<DetectionSet> = data.frames.iter().map(|f| f.gt.clone()).collect();
    let gt_graphs: Vec<LocalizedSceneGraph> =
        data.frames.iter().map(|f| f.gt_graph.clone()).collect();
    let external: Vec<DetectionSet> = data.frames.iter().map(|f| f.external.clone()).collect();

    let baseline_graphs = pseudo_graphs(&data.annotation, &external)?;
    let baseline = evaluate(&external, &gt_dets, &baseline_graphs, &gt_graphs, &cfg.tide)?;

    let (fused, pseudo) = attention_streams(data)?;
    let score = |r: &RefinedVideo| {
        evaluate(
            &r.final_detections(),
            &gt_dets,
            &r.graphs,
            &gt_graphs,
            &cfg.tide,
        )
    };
    let refined = refine_with(data, &fused, &pseudo, &refine_cfg)?;
    let refined_report = score(&refined)?;

    let mut ablation = Vec::new();
    if cfg.ablation {
        for (use_cbm, use_lrm, use_iaa) in ABLATION_GRID {
            let row_cfg = RefineConfig {
                use_cbm,
                use_lrm,
                use_iaa,
                ..refine_cfg
            };
            let report = score(&refine_with(data, &fused, &pseudo, &row_cfg)?)?;
            ablation.push(AblationRow {
                use_cbm,
                use_lrm,
                use_iaa,
                report,
            });
        }
    }

    Ok(Experiment {
        report: ExperimentReport {
            video_id: data.manifest.video_id.clone(),
            frames: data.manifest.frames,
            delta: ReportDelta::between(&refined_report, &baseline),
            baseline,
            refined: refined_report,
            ablation,
        },
        refined,
        baseline_graphs,
    })
}

/// Writes the report and per-frame products under `dir`.
pub fn write_outputs(exp: &Experiment, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&exp.report, &dir.join("report.json"))?;
    let text = exp.report.render();
    std::fs::write(dir.join("report.txt"), text).map_err(|source| trkt_core::Error::Io {
        path: dir.join("report.txt"),
        source,
    })?;
    let frames = dir.join("frames");
    create_dir(&frames)?;
    for (t, trace) in exp.refined.traces.iter().enumerate() {
        io::save_detections(&trace.d_final, frame_file(&frames, t, "final.json"))?;
        write_json(trace, &frame_file(&frames, t, "trace.json"))?;
        io::save_localized_graph(
            &exp.refined.graphs[t],
            frame_file(&frames, t, "pseudo_graph.json"),
        )?;
        io::save_localized_graph(
            &exp.baseline_graphs[t],
            frame_file(&frames, t, "baseline_graph.json"),
        )?;
    }
    Ok(())
}

/// Loads `cfg.input_dir`, runs, and writes to `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    let data = Dataset::load(&cfg.input_dir)?;
    let exp = run_on_dataset(&data, cfg)?;
    write_outputs(&exp, &cfg.output_dir)?;
    Ok(exp.report)
}
