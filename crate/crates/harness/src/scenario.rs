//! Seeded synthetic videos standing in for real annotated clips.
//!
//! Every object moves on a straight line. Category attention is a plateau of
//! `attention_peak` over the box; a boundary cell is scaled by the fraction
//! of it the box covers, a one-cell linear ramp. The
//! external detector is the ground truth after seeded jitter, shrinkage,
//! score deflation and random misses.

use std::collections::BTreeSet;

use crate::dataset::{Dataset, FrameData, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trkt_core::attention::{HeadKind, LogitVector};
use trkt_core::pseudo_sg::{ground_annotation, propagate};
use trkt_core::{
    AttentionStack, BBox, CategoryVocabulary, Detection, DetectionSet, DetectionSource, Error,
    FlowField, FrameRef, Provenance, Result, Triplet, UnlocalizedSceneGraph,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoise {
    /// Uniform box translation in `[-shift_px, shift_px]` per axis.
    pub shift_px: f64,
    /// Width and height shrink by this fraction about the box center.
    pub shrink_frac: f64,
    /// Scores are multiplied by `1 - score_deflate`.
    pub score_deflate: f64,
    pub miss_prob: f64,
    /// Miss probability for an object on one of its blur frames.
    pub blur_miss_prob: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            shift_px: 0.0,
            shrink_frac: 0.0,
            score_deflate: 0.0,
            miss_prob: 0.0,
            blur_miss_prob: 0.0,
        }
    }
}

impl DetectorNoise {
    pub fn canonical() -> Self {
        Self {
            shift_px: 3.0,
            shrink_frac: 0.15,
            score_deflate: 0.5,
            miss_prob: 0.2,
            blur_miss_prob: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub category: usize,
    /// Box on frame 0, `[x1, y1, x2, y2]` in pixels.
    pub start_box: [f64; 4],
    /// Pixels per frame, `[vx, vy]`.
    pub velocity: [f64; 2],
    pub attention_peak: f64,
    #[serde(default)]
    pub blur_frames: BTreeSet<usize>,
}

impl ObjectSpec {
    pub fn box_at(&self, t: usize) -> [f64; 4] {
        let [x1, y1, x2, y2] = self.start_box;
        let (dx, dy) = (self.velocity[0] * t as f64, self.velocity[1] * t as f64);
        [x1 + dx, y1 + dy, x2 + dx, y2 + dy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationTemplate {
    pub annotated_frame_index: usize,
    pub triplets: Vec<Triplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_video_id")]
    pub video_id: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// `[rows, cols]` of the attention grid.
    pub grid: [usize; 2],
    pub vocabulary: CategoryVocabulary,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub detector_noise: DetectorNoise,
    #[serde(default = "default_relation_peak")]
    pub relation_peak: f64,
    pub annotation: AnnotationTemplate,
}

fn default_video_id() -> String {
    "synthetic".to_string()
}

fn default_relation_peak() -> f64 {
    0.15
}

pub const BLUR_ATTENUATION: f32 = 0.8;
pub const PRESENT_LOGIT: f64 = 4.0;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Validation(format!("{name} = {v} must be in [0,1]")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.vocabulary.validate()?;
        if self.frames == 0 {
            return Err(Error::Validation(
                "scenario needs at least one frame".into(),
            ));
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(Error::Validation("grid dimensions must be positive".into()));
        }
        FrameRef::new(self.video_id.clone(), 0, self.width, self.height)?;
        let n = &self.detector_noise;
        if !(n.shift_px >= 0.0 && n.shift_px.is_finite()) {
            return Err(Error::Validation(format!(
                "shift_px {} must be non-negative",
                n.shift_px
            )));
        }
        check_unit("shrink_frac", n.shrink_frac)?;
        if n.shrink_frac >= 1.0 {
            return Err(Error::Validation("shrink_frac must be below 1".into()));
        }
        check_unit("score_deflate", n.score_deflate)?;
        check_unit("miss_prob", n.miss_prob)?;
        check_unit("blur_miss_prob", n.blur_miss_prob)?;
        check_unit("relation_peak", self.relation_peak)?;
        for (i, o) in self.objects.iter().enumerate() {
            self.vocabulary.check_object(o.category)?;
            check_unit("attention_peak", o.attention_peak)?;
            if o.attention_peak == 0.0 {
                return Err(Error::Validation(format!(
                    "object {i} has zero attention peak"
                )));
            }
            for t in 0..self.frames {
                let [x1, y1, x2, y2] = o.box_at(t);
                let b = BBox::new(x1, y1, x2, y2)
                    .map_err(|e| Error::Validation(format!("object {i} frame {t}: {e}")))?;
                if !b.within(&FrameRef::new(
                    self.video_id.clone(),
                    t,
                    self.width,
                    self.height,
                )?) {
                    return Err(Error::Validation(format!(
                        "object {i} trajectory leaves the frame at frame {t}: {:?}",
                        o.box_at(t)
                    )));
                }
            }
        }
        if self.annotation.annotated_frame_index >= self.frames {
            return Err(Error::Validation(
                "annotated frame is outside the video".into(),
            ));
        }
        let ann = self.unlocalized_annotation()?;
        ann.validate(Some(&self.vocabulary))?;
        Ok(())
    }

    pub fn unlocalized_annotation(&self) -> Result<UnlocalizedSceneGraph> {
        UnlocalizedSceneGraph::new(
            self.video_id.clone(),
            self.annotation.annotated_frame_index,
            self.annotation.triplets.clone(),
        )
    }

    pub fn frame(&self, t: usize) -> FrameRef {
        FrameRef {
            video_id: self.video_id.clone(),
            frame_index: t,
            width: self.width,
            height: self.height,
        }
    }

    /// Randomized layout on a 128x96 frame with a 24x32 grid, canonical noise.
    pub fn canonical(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a70);
        let vocabulary = CategoryVocabulary::new(
            ["person", "cup", "table", "phone", "book", "chair"]
                .map(String::from)
                .to_vec(),
            [
                "holding",
                "looking_at",
                "sitting_on",
                "touching",
                "in_front_of",
            ]
            .map(String::from)
            .to_vec(),
        )
        .expect("static vocabulary");
        let (width, height, frames) = (128u32, 96u32, 8usize);
        let n_objects = rng.gen_range(3..=4);
        let mut objects = Vec::new();
        let mut categories: Vec<usize> = (0..6).collect();
        let mut tries = 0;
        while objects.len() < n_objects && tries < 1000 {
            tries += 1;
            let category = if objects.is_empty() {
                0
            } else {
                categories[rng.gen_range(0..categories.len())]
            };
            let w = rng.gen_range(16..=40) as f64;
            let h = rng.gen_range(16..=44) as f64;
            let vx = rng.gen_range(-3..=3) as f64;
            let vy = rng.gen_range(-2..=2) as f64;
            let span = (frames - 1) as f64;
            let lo_x = (-vx * span).max(0.0) + 1.0;
            let hi_x = width as f64 - w - (vx * span).max(0.0) - 1.0;
            let lo_y = (-vy * span).max(0.0) + 1.0;
            let hi_y = height as f64 - h - (vy * span).max(0.0) - 1.0;
            if hi_x <= lo_x || hi_y <= lo_y {
                continue;
            }
            let x1 = rng.gen_range(lo_x..hi_x).round();
            let y1 = rng.gen_range(lo_y..hi_y).round();
            let start_box = [x1, y1, x1 + w, y1 + h];
            let overlaps_too_much = objects.iter().any(|o: &ObjectSpec| {
                (0..frames).any(|t| {
                    let a = o.box_at(t);
                    let b = [
                        start_box[0] + vx * t as f64,
                        start_box[1] + vy * t as f64,
                        start_box[2] + vx * t as f64,
                        start_box[3] + vy * t as f64,
                    ];
                    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
                    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
                    iw * ih > 0.25 * (w * h).min((a[2] - a[0]) * (a[3] - a[1]))
                })
            });
            if overlaps_too_much {
                continue;
            }
            let blur_frames = (1..frames).filter(|_| rng.gen_bool(0.15)).collect();
            objects.push(ObjectSpec {
                category,
                start_box,
                velocity: [vx, vy],
                attention_peak: rng.gen_range(70..=100) as f64 / 100.0,
                blur_frames,
            });
            categories.retain(|&c| c != category);
        }
        let subject = objects[0].category;
        let triplets = objects[1..]
            .iter()
            .enumerate()
            .map(|(i, o)| Triplet {
                subject,
                object: o.category,
                predicate: i % 5,
            })
            .collect();
        Self {
            seed,
            video_id: format!("synth_{seed:03}"),
            frames,
            width,
            height,
            grid: [24, 32],
            vocabulary,
            objects,
            detector_noise: DetectorNoise::canonical(),
            relation_peak: default_relation_peak(),
            annotation: AnnotationTemplate {
                annotated_frame_index: 0,
                triplets,
            },
        }
    }
}

/// Fraction of `[lo, lo+1)` covered by `[a, b)`.
fn coverage(lo: f64, a: f64, b: f64) -> f64 {
    ((lo + 1.0).min(b) - lo.max(a)).max(0.0)
}

/// Cell value is `peak` times the fraction of the cell the box covers, so
/// the map ramps linearly from 0 to `peak` across the boundary cell.
fn plateau(map: &mut [f32], grid: [usize; 2], scale: (f64, f64), b: [f64; 4], peak: f64) {
    let [h, w] = grid;
    let (sx, sy) = scale;
    let (x1, y1, x2, y2) = (b[0] / sx, b[1] / sy, b[2] / sx, b[3] / sy);
    for r in y1.floor().max(0.0) as usize..(y2.ceil() as usize).min(h) {
        let cy = coverage(r as f64, y1, y2);
        for c in x1.floor().max(0.0) as usize..(x2.ceil() as usize).min(w) {
            let v = (peak * cy * coverage(c as f64, x1, x2)) as f32;
            let cell = &mut map[r * w + c];
            *cell = cell.max(v);
        }
    }
}

fn intersection(a: [f64; 4], b: [f64; 4]) -> Option<[f64; 4]> {
    let r = [
        a[0].max(b[0]),
        a[1].max(b[1]),
        a[2].min(b[2]),
        a[3].min(b[3]),
    ];
    (r[2] > r[0] && r[3] > r[1]).then_some(r)
}

fn perturb(
    rng: &mut ChaCha8Rng,
    b: [f64; 4],
    noise: &DetectorNoise,
    frame: &FrameRef,
) -> Option<BBox> {
    let (dx, dy) = if noise.shift_px > 0.0 {
        (
            rng.gen_range(-noise.shift_px..=noise.shift_px),
            rng.gen_range(-noise.shift_px..=noise.shift_px),
        )
    } else {
        (0.0, 0.0)
    };
    let (cx, cy) = ((b[0] + b[2]) / 2.0 + dx, (b[1] + b[3]) / 2.0 + dy);
    let k = 1.0 - noise.shrink_frac;
    let (hw, hh) = ((b[2] - b[0]) * k / 2.0, (b[3] - b[1]) * k / 2.0);
    BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)
        .ok()?
        .clamp_to(frame)
        .ok()
}

/// Generates every artifact of a scenario. Deterministic in `config.seed`.
pub fn synth_scenario(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [h, w] = config.grid;
    let plane = h * w;
    let scale = (
        config.width as f64 / w as f64,
        config.height as f64 / h as f64,
    );
    let n_obj = config.vocabulary.num_objects();
    let n_rel = config.vocabulary.num_relations();
    let annotation = config.unlocalized_annotation()?;

    let mut raw = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let frame = config.frame(t);
        let mut obj = vec![0.0f32; n_obj * plane];
        let mut rel = vec![0.0f32; n_rel * plane];
        let mut present = vec![false; n_obj];
        let mut gt = Vec::new();
        let mut external = Vec::new();

        for o in &config.objects {
            let b = o.box_at(t);
            present[o.category] = true;
            let mut peak = o.attention_peak;
            if o.blur_frames.contains(&t) {
                peak *= BLUR_ATTENUATION as f64;
            }
            plateau(
                &mut obj[o.category * plane..(o.category + 1) * plane],
                config.grid,
                scale,
                b,
                peak,
            );
            gt.push(Detection::new(
                BBox::new(b[0], b[1], b[2], b[3])?,
                o.category,
                1.0,
            )?);

            let miss = if o.blur_frames.contains(&t) {
                config.detector_noise.blur_miss_prob
            } else {
                config.detector_noise.miss_prob
            };
            // draw every variate so the stream does not depend on outcomes
            let dropped = rng.gen::<f64>() < miss;
            let base = rng.gen_range(0.6..=1.0);
            let noisy = perturb(&mut rng, b, &config.detector_noise, &frame);
            if let (false, Some(nb)) = (dropped, noisy) {
                external.push(Detection::new(
                    nb,
                    o.category,
                    base * (1.0 - config.detector_noise.score_deflate),
                )?);
            }
        }

        for tr in &annotation.triplets {
            let find = |cat: usize, skip: Option<usize>| {
                config
                    .objects
                    .iter()
                    .enumerate()
                    .find(|(i, o)| o.category == cat && Some(*i) != skip)
                    .map(|(i, _)| i)
            };
            let Some(si) = find(tr.subject, None) else {
                continue;
            };
            let Some(oi) = find(tr.object, (tr.subject == tr.object).then_some(si)) else {
                continue;
            };
            let dilate = |b: [f64; 4]| {
                [
                    b[0] - scale.0,
                    b[1] - scale.1,
                    b[2] + scale.0,
                    b[3] + scale.1,
                ]
            };
            let (sb, ob) = (config.objects[si].box_at(t), config.objects[oi].box_at(t));
            if let Some(region) = intersection(dilate(sb), dilate(ob)) {
                let p = tr.predicate;
                plateau(
                    &mut rel[p * plane..(p + 1) * plane],
                    config.grid,
                    scale,
                    region,
                    config.relation_peak,
                );
            }
        }

        let logits = LogitVector::new(
            present
                .iter()
                .map(|&p| if p { PRESENT_LOGIT } else { -PRESENT_LOGIT })
                .collect(),
            HeadKind::Object,
        )?;
        let flow = (t > 0).then(|| flow_field(config, t, scale)).transpose()?;
        raw.push((
            AttentionStack::new(
                frame.clone(),
                (0..n_obj).collect(),
                h,
                w,
                obj,
                Provenance::Raw,
            )?,
            AttentionStack::new(
                frame.clone(),
                (0..n_rel).collect(),
                h,
                w,
                rel,
                Provenance::Raw,
            )?,
            logits,
            flow,
            DetectionSet::new(frame.clone(), external, DetectionSource::External)?,
            DetectionSet::new(frame, gt, DetectionSource::Gt)?,
        ));
    }

    let gt_sets: Vec<DetectionSet> = raw.iter().map(|r| r.5.clone()).collect();
    let (base, _) = ground_annotation(&annotation, &gt_sets[annotation.annotated_frame_index])?;
    let gt_graphs = propagate(&base, &gt_sets)?;

    let frames = raw
        .into_iter()
        .zip(gt_graphs)
        .map(
            |((object_attention, relation_attention, logits, flow, external, gt), gt_graph)| {
                FrameData {
                    object_attention,
                    relation_attention,
                    logits,
                    flow,
                    external,
                    gt,
                    gt_graph,
                }
            },
        )
        .collect();
    Ok(Dataset {
        manifest: Manifest {
            video_id: config.video_id.clone(),
            frames: config.frames,
            width: config.width,
            height: config.height,
            grid: config.grid,
        },
        vocabulary: config.vocabulary.clone(),
        annotation,
        frames,
    })
}

/// Backward flow into frame `t`: each cell takes `-velocity` (in cells) of
/// the object covering most of it, zero on background. Cells the object
/// uncovers since frame `t - 1` keep its motion, the way flow estimators
/// smooth foreground motion into disoccluded pixels.
fn flow_field(config: &ScenarioConfig, t: usize, scale: (f64, f64)) -> Result<FlowField> {
    let [h, w] = config.grid;
    let mut data = vec![0.0f32; h * w * 2];
    let cover = |b: [f64; 4], r: usize, c: usize| {
        coverage(c as f64, b[0] / scale.0, b[2] / scale.0)
            * coverage(r as f64, b[1] / scale.1, b[3] / scale.1)
    };
    for r in 0..h {
        for c in 0..w {
            let mut best = (0.0, 0.0);
            for o in &config.objects {
                let key = (cover(o.box_at(t), r, c), cover(o.box_at(t - 1), r, c));
                if (key.0 > 0.0 || key.1 > 0.0) && key >= best {
                    best = key;
                    data[(r * w + c) * 2] = (-o.velocity[0] / scale.0) as f32;
                    data[(r * w + c) * 2 + 1] = (-o.velocity[1] / scale.1) as f32;
                }
            }
        }
    }
    FlowField::new(config.frame(t), h, w, data)
}
