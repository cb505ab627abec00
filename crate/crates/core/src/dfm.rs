//! Dual-stream fusion of attention-derived knowledge with external detections.
//!
//! A refinement stage takes an attention stack `A` and incoming detections
//! `X` and produces
//!
//! ```text
//! D1 = wbf(f(A), X)            localization refinement
//! D2 = f(cbm(A, X))            confidence boosting
//! out = wbf(D1, D2)
//! ```
//!
//! [`refine_frame`] runs the stage on the fused attention of the current
//! frame and then again on the pseudo attention warped from the previous
//! frame, feeding the first stage's output into the second.

use serde::{Deserialize, Serialize};

use crate::attention::{normalize_map, sigmoid, HeadKind, LogitVector};
use crate::error::{Error, Result};
use crate::proposals::{extract_proposals, wbf, ExtractConfig, WbfConfig};
use crate::types::{AttentionStack, Detection, DetectionSet, DetectionSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbmConfig {
    /// Threshold on `sigmoid(logit)`; a category is boosted when strictly above it.
    pub phi: f64,
}

impl Default for CbmConfig {
    fn default() -> Self {
        Self { phi: 0.5 }
    }
}

impl CbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::Validation(format!(
                "phi {} must be in (0,1)",
                self.phi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    RelationFirst,
    MotionFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub extract: ExtractConfig,
    pub wbf: WbfConfig,
    pub cbm: CbmConfig,
    pub use_lrm: bool,
    pub use_cbm: bool,
    pub use_iaa: bool,
    pub stage_order: StageOrder,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            extract: ExtractConfig::default(),
            wbf: WbfConfig::default(),
            cbm: CbmConfig::default(),
            use_lrm: true,
            use_cbm: true,
            use_iaa: true,
            stage_order: StageOrder::RelationFirst,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.extract.validate()?;
        self.wbf.validate()?;
        self.cbm.validate()
    }

    pub fn pass_through(&self) -> bool {
        !self.use_lrm && !self.use_cbm
    }
}

/// Every intermediate detection set of one refined frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub d_e: DetectionSet,
    pub d_a: DetectionSet,
    pub d_1: DetectionSet,
    pub d_2: DetectionSet,
    pub d: DetectionSet,
    pub d_final: DetectionSet,
    pub boosted_categories: Vec<usize>,
}

impl RefineTrace {
    pub fn snapshots(&self) -> [&DetectionSet; 6] {
        [
            &self.d_e,
            &self.d_a,
            &self.d_1,
            &self.d_2,
            &self.d,
            &self.d_final,
        ]
    }
}

/// Localization refinement: `wbf(f(A), D_e)`.
pub fn lrm(
    a: &AttentionStack,
    d_e: &DetectionSet,
    extract_cfg: &ExtractConfig,
    wbf_cfg: &WbfConfig,
) -> Result<DetectionSet> {
    a.frame().ensure_same(&d_e.frame, "lrm")?;
    let d_a = extract_proposals(a, extract_cfg)?;
    wbf(&[&d_a, d_e], wbf_cfg, DetectionSource::Lrm)
}

/// Highest-score detection of a category; ties go to the raster-first box, then list order.
fn top_detection(d: &DetectionSet, category: usize) -> Option<&Detection> {
    d.of_category(category).reduce(|best, cand| {
        let better = cand.score > best.score
            || (cand.score == best.score
                && (cand.bbox.y1, cand.bbox.x1) < (best.bbox.y1, best.bbox.x1));
        if better {
            cand
        } else {
            best
        }
    })
}

/// Confidence boosting; also returns the categories that were boosted.
pub fn cbm_with_report(
    a: &AttentionStack,
    logits: &LogitVector,
    d_e: &DetectionSet,
    cfg: &CbmConfig,
) -> Result<(AttentionStack, Vec<usize>)> {
    cfg.validate()?;
    if logits.kind() != HeadKind::Object {
        return Err(Error::Validation(
            "confidence boosting needs object logits".into(),
        ));
    }
    if logits.len() != a.num_categories() {
        return Err(Error::Shape(format!(
            "{} logits for {} attention maps",
            logits.len(),
            a.num_categories()
        )));
    }
    a.frame().ensure_same(&d_e.frame, "cbm")?;

    let (h, w) = a.grid();
    let (sx, sy) = a.grid_scale();
    let plane = h * w;
    let mut data = a.data().to_vec();
    let mut boosted = Vec::new();

    for (index, &category) in a.categories().iter().enumerate() {
        if sigmoid(logits.values()[index]) <= cfg.phi {
            continue;
        }
        let Some(top) = top_detection(d_e, category) else {
            continue;
        };
        let mut map: Vec<f64> = a.map(index).iter().map(|&v| v as f64).collect();
        for r in 0..h {
            let cy = (r as f64 + 0.5) * sy;
            for c in 0..w {
                if top.bbox.contains_point((c as f64 + 0.5) * sx, cy) {
                    map[r * w + c] += top.score;
                }
            }
        }
        data[index * plane..(index + 1) * plane].copy_from_slice(&normalize_map(&map));
        boosted.push(category);
    }

    let out = AttentionStack::new(
        a.frame().clone(),
        a.categories().to_vec(),
        h,
        w,
        data,
        a.provenance(),
    )?;
    Ok((out, boosted))
}

/// Confidence boosting: adds the top external box's score inside that box to
/// each confidently-present category's map and renormalizes it.
pub fn cbm(
    a: &AttentionStack,
    logits: &LogitVector,
    d_e: &DetectionSet,
    cfg: &CbmConfig,
) -> Result<AttentionStack> {
    cbm_with_report(a, logits, d_e, cfg).map(|(s, _)| s)
}

struct StageOutput {
    d_a: DetectionSet,
    d_1: DetectionSet,
    d_2: DetectionSet,
    out: DetectionSet,
    boosted: Vec<usize>,
}

fn run_stage(
    a: &AttentionStack,
    logits: &LogitVector,
    input: &DetectionSet,
    cfg: &RefineConfig,
) -> Result<StageOutput> {
    a.frame().ensure_same(&input.frame, "refinement stage")?;
    let d_a = extract_proposals(a, &cfg.extract)?;
    let d_1 = if cfg.use_lrm {
        wbf(&[&d_a, input], &cfg.wbf, DetectionSource::Lrm)?
    } else {
        input.clone()
    };
    let (d_2, boosted) = if cfg.use_cbm {
        let (boosted_map, boosted) = cbm_with_report(a, logits, input, &cfg.cbm)?;
        (
            extract_proposals(&boosted_map, &cfg.extract)?.with_source(DetectionSource::Cbm),
            boosted,
        )
    } else {
        (
            DetectionSet::empty(input.frame.clone(), DetectionSource::Cbm),
            Vec::new(),
        )
    };
    let out = match (cfg.use_lrm, cfg.use_cbm) {
        (true, true) => wbf(&[&d_1, &d_2], &cfg.wbf, DetectionSource::Fused)?,
        (true, false) => d_1.clone().with_source(DetectionSource::Fused),
        // Boosted proposals alone would discard the incoming boxes.
        (false, true) => wbf(&[input, &d_2], &cfg.wbf, DetectionSource::Fused)?,
        (false, false) => input.clone(),
    };
    Ok(StageOutput {
        d_a,
        d_1,
        d_2,
        out,
        boosted,
    })
}

/// Full per-frame refinement.
///
/// `pa` is the pseudo attention for this frame; pass `None` on the first
/// frame of a video, which skips the motion stage. With `use_iaa` off the
/// motion stage is skipped as well.
pub fn refine_frame(
    a_fused: &AttentionStack,
    pa: Option<&AttentionStack>,
    logits: &LogitVector,
    d_e: &DetectionSet,
    cfg: &RefineConfig,
) -> Result<RefineTrace> {
    cfg.validate()?;
    a_fused.frame().ensure_same(&d_e.frame, "refine_frame")?;
    let pa = pa.filter(|_| cfg.use_iaa);
    if let Some(p) = pa {
        a_fused.frame().ensure_same(p.frame(), "pseudo attention")?;
        if p.grid() != a_fused.grid() || p.categories() != a_fused.categories() {
            return Err(Error::Shape(
                "pseudo attention does not match the fused stack layout".into(),
            ));
        }
    }

    let (first, second) = match (cfg.stage_order, pa) {
        (StageOrder::MotionFirst, Some(p)) => (p, Some(a_fused)),
        (_, p) => (a_fused, p),
    };

    let s1 = run_stage(first, logits, d_e, cfg)?;
    let mut boosted = s1.boosted.clone();
    let d_final = match second {
        Some(a2) => {
            let s2 = run_stage(a2, logits, &s1.out, cfg)?;
            boosted.extend(&s2.boosted);
            s2.out
        }
        None => s1.out.clone(),
    };
    boosted.sort_unstable();
    boosted.dedup();

    Ok(RefineTrace {
        d_e: d_e.clone(),
        d_a: s1.d_a,
        d_1: s1.d_1,
        d_2: s1.d_2,
        d: s1.out,
        d_final: d_final.with_source(DetectionSource::Final),
        boosted_categories: boosted,
    })
}
