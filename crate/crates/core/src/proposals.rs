//! Box geometry: IoU, threshold proposals from attention, and weighted box fusion.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttentionStack, BBox, Detection, DetectionSet, DetectionSource};

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub min_area_cells: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            connectivity: Connectivity::Four,
            min_area_cells: 4,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Validation(format!(
                "extract threshold {} must be in (0,1)",
                self.threshold
            )));
        }
        if self.min_area_cells == 0 {
            return Err(Error::Validation(
                "min_area_cells must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Clustering parameters. Cluster scores are always the member mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbfConfig {
    pub iou_threshold: f64,
    pub skip_below: f64,
}

impl Default for WbfConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.55,
            skip_below: 0.0,
        }
    }
}

impl WbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "wbf iou_threshold {} must be in (0,1]",
                self.iou_threshold
            )));
        }
        if !self.skip_below.is_finite() {
            return Err(Error::Validation("wbf skip_below must be finite".into()));
        }
        Ok(())
    }
}

/// Connected component in cell coordinates; `cols`/`rows` are half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Component {
    rows: (usize, usize),
    cols: (usize, usize),
    cells: usize,
}

/// Components of `mask` in raster order of their first cell.
fn components(mask: &[bool], h: usize, w: usize, connectivity: Connectivity) -> Vec<Component> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let neighbours: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Component {
            rows: (start / w, start / w + 1),
            cols: (start % w, start % w + 1),
            cells: 0,
        };
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            comp.cells += 1;
            comp.rows = (comp.rows.0.min(r), comp.rows.1.max(r + 1));
            comp.cols = (comp.cols.0.min(c), comp.cols.1.max(c + 1));
            for &(dr, dc) in neighbours {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Threshold proposals: one box per sufficiently large connected region of
/// cells at or above the threshold, scored by the mean attention over every
/// cell inside the box.
///
/// Output is ordered by stack category position, then by box top-left
/// corner (row, then column).
pub fn extract_proposals(stack: &AttentionStack, cfg: &ExtractConfig) -> Result<DetectionSet> {
    cfg.validate()?;
    let (h, w) = stack.grid();
    let (sx, sy) = stack.grid_scale();
    let frame = stack.frame();
    let threshold = cfg.threshold as f32;
    let mut detections = Vec::new();

    for (index, &category) in stack.categories().iter().enumerate() {
        let map = stack.map(index);
        let mask: Vec<bool> = map.iter().map(|&v| v >= threshold).collect();
        let mut comps: Vec<Component> = components(&mask, h, w, cfg.connectivity)
            .into_iter()
            .filter(|c| c.cells >= cfg.min_area_cells)
            .collect();
        comps.sort_by_key(|c| (c.rows.0, c.cols.0));
        for comp in comps {
            let mut sum = 0.0;
            for r in comp.rows.0..comp.rows.1 {
                sum += map[r * w + comp.cols.0..r * w + comp.cols.1]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let n = (comp.rows.1 - comp.rows.0) * (comp.cols.1 - comp.cols.0);
            let score = (sum / n as f64).clamp(0.0, 1.0);
            let bbox = BBox::new(
                comp.cols.0 as f64 * sx,
                comp.rows.0 as f64 * sy,
                comp.cols.1 as f64 * sx,
                comp.rows.1 as f64 * sy,
            )?
            .clamp_to(frame)?;
            detections.push(Detection::new(bbox, category, score)?);
        }
    }
    DetectionSet::new(frame.clone(), detections, DetectionSource::Internal)
}

fn raster_cmp(a: &BBox, b: &BBox) -> Ordering {
    a.y1.total_cmp(&b.y1).then(a.x1.total_cmp(&b.x1))
}

struct Cluster {
    weight: f64,
    weighted: [f64; 4],
    plain: [f64; 4],
    score_sum: f64,
    members: usize,
    fused: BBox,
}

impl Cluster {
    fn new(d: &Detection) -> Self {
        let mut c = Self {
            weight: 0.0,
            weighted: [0.0; 4],
            plain: [0.0; 4],
            score_sum: 0.0,
            members: 0,
            fused: d.bbox,
        };
        c.add(d);
        c
    }

    fn add(&mut self, d: &Detection) {
        let coords = d.bbox.to_array();
        for k in 0..4 {
            self.weighted[k] += d.score * coords[k];
            self.plain[k] += coords[k];
        }
        self.weight += d.score;
        self.score_sum += d.score;
        self.members += 1;
        let c = if self.weight > 0.0 {
            self.weighted.map(|v| v / self.weight)
        } else {
            self.plain.map(|v| v / self.members as f64)
        };
        self.fused = BBox {
            x1: c[0],
            y1: c[1],
            x2: c[2],
            y2: c[3],
        };
    }

    fn detection(&self, category: usize) -> Detection {
        Detection {
            bbox: self.fused,
            category,
            score: (self.score_sum / self.members as f64).clamp(0.0, 1.0),
        }
    }
}

/// Weighted box fusion across detection sets of one frame.
///
/// Per category, boxes are visited by score (descending; ties go to the
/// earlier set, then raster order of the box, then list order). Each box
/// joins the first cluster whose current fused box overlaps it with IoU at
/// or above the threshold, otherwise it opens a new cluster. A cluster's box
/// is the score-weighted mean of its members and its score the plain mean.
/// Output is grouped by category id, clusters in creation order.
pub fn wbf(
    sets: &[&DetectionSet],
    cfg: &WbfConfig,
    source: DetectionSource,
) -> Result<DetectionSet> {
    cfg.validate()?;
    let first = sets
        .first()
        .ok_or_else(|| Error::Validation("wbf needs at least one detection set".into()))?;
    for s in &sets[1..] {
        first.frame.ensure_same(&s.frame, "wbf inputs")?;
    }

    let mut by_category: BTreeMap<usize, Vec<(usize, usize, &Detection)>> = BTreeMap::new();
    for (si, set) in sets.iter().enumerate() {
        for (di, d) in set.detections.iter().enumerate() {
            if d.score < cfg.skip_below {
                continue;
            }
            by_category.entry(d.category).or_default().push((si, di, d));
        }
    }

    let mut out = Vec::new();
    for (category, mut entries) in by_category {
        entries.sort_by(|a, b| {
            b.2.score
                .total_cmp(&a.2.score)
                .then(a.0.cmp(&b.0))
                .then_with(|| raster_cmp(&a.2.bbox, &b.2.bbox))
                .then(a.1.cmp(&b.1))
        });
        let mut clusters: Vec<Cluster> = Vec::new();
        for (_, _, d) in entries {
            match clusters
                .iter_mut()
                .find(|c| iou(&c.fused, &d.bbox) >= cfg.iou_threshold)
            {
                Some(c) => c.add(d),
                None => clusters.push(Cluster::new(d)),
            }
        }
        for c in &clusters {
            // member boxes are in-frame, so clamping only absorbs rounding
            let mut d = c.detection(category);
            d.bbox = d.bbox.clamp_to(&first.frame)?;
            out.push(d);
        }
    }
    DetectionSet::new(first.frame.clone(), out, source)
}
