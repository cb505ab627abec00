//! Brute-force reference implementations shared by the property tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use trkt_core::{AttentionStack, BBox, DetectionSet};

pub fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Every restricted growth string of length `n` (one per set partition).
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for label in 0..=limit {
            prefix.push(label);
            rec(prefix, n, max.max(label), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(&mut Vec::new(), n, 0, &mut out);
    }
    out
}

fn fused_box(members: &[(BBox, f64)]) -> BBox {
    let w: f64 = members.iter().map(|m| m.1).sum();
    let coord = |f: fn(&BBox) -> f64| {
        if w > 0.0 {
            members.iter().map(|(b, s)| s * f(b)).sum::<f64>() / w
        } else {
            members.iter().map(|(b, _)| f(b)).sum::<f64>() / members.len() as f64
        }
    };
    BBox {
        x1: coord(|b| b.x1),
        y1: coord(|b| b.y1),
        x2: coord(|b| b.x2),
        y2: coord(|b| b.y2),
    }
}

/// Greedy weighted box fusion found by enumerating every partition and
/// keeping the one consistent with the first-fit rule; fused boxes are
/// recomputed from the member lists at each step.
pub fn wbf_oracle(
    sets: &[&DetectionSet],
    iou_threshold: f64,
    skip_below: f64,
) -> Vec<(usize, BBox, f64)> {
    let mut by_cat: BTreeMap<usize, Vec<(usize, usize, BBox, f64)>> = BTreeMap::new();
    for (si, s) in sets.iter().enumerate() {
        for (di, d) in s.detections.iter().enumerate() {
            if d.score >= skip_below {
                by_cat
                    .entry(d.category)
                    .or_default()
                    .push((si, di, d.bbox, d.score));
            }
        }
    }
    let mut out = Vec::new();
    for (cat, mut items) in by_cat {
        items.sort_by(|a, b| {
            b.3.partial_cmp(&a.3)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.2.y1.partial_cmp(&b.2.y1).unwrap())
                .then(a.2.x1.partial_cmp(&b.2.x1).unwrap())
                .then(a.1.cmp(&b.1))
        });
        let n = items.len();
        let mut found = None;
        'outer: for labels in partitions(n) {
            for i in 0..n {
                let clusters = labels[..i].iter().copied().max().map_or(0, |m| m + 1);
                let mut expected = clusters;
                for c in 0..clusters {
                    let members: Vec<(BBox, f64)> = (0..i)
                        .filter(|&j| labels[j] == c)
                        .map(|j| (items[j].2, items[j].3))
                        .collect();
                    if iou_ref(&fused_box(&members), &items[i].2) >= iou_threshold {
                        expected = c;
                        break;
                    }
                }
                if labels[i] != expected {
                    continue 'outer;
                }
            }
            assert!(found.is_none(), "two partitions satisfy the greedy rule");
            found = Some(labels);
        }
        let labels = found.expect("one partition satisfies the greedy rule");
        let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
        for c in 0..clusters {
            let members: Vec<(BBox, f64)> = (0..n)
                .filter(|&j| labels[j] == c)
                .map(|j| (items[j].2, items[j].3))
                .collect();
            let score = members.iter().map(|m| m.1).sum::<f64>() / members.len() as f64;
            out.push((cat, fused_box(&members), score));
        }
    }
    out
}

/// Exhaustive block SAD search with the documented tie order; no pruning.
pub fn block_flow_oracle(
    prev: &AttentionStack,
    cur: &AttentionStack,
    block: usize,
    radius: i64,
) -> Vec<(i64, i64)> {
    let (h, w) = cur.grid();
    let read = |s: &AttentionStack, c: usize, r: i64, q: i64| {
        if r < 0 || q < 0 || r >= h as i64 || q >= w as i64 {
            0.0
        } else {
            s.get(c, r as usize, q as usize) as f64
        }
    };
    let mut out = vec![(0, 0); h * w];
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let mut scored = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let mut sad = 0.0;
                    for c in 0..cur.num_categories() {
                        for r in by..(by + block).min(h) {
                            for q in bx..(bx + block).min(w) {
                                sad += (read(cur, c, r as i64, q as i64)
                                    - read(prev, c, r as i64 + dy, q as i64 + dx))
                                .abs();
                            }
                        }
                    }
                    scored.push((sad, dx, dy));
                }
            }
            let min = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let (_, dx, dy) = scored
                .into_iter()
                .filter(|s| s.0 == min)
                .min_by_key(|&(_, dx, dy)| (dx.abs() + dy.abs(), dy, dx))
                .unwrap();
            for r in by..(by + block).min(h) {
                for q in bx..(bx + block).min(w) {
                    out[r * w + q] = (dx, dy);
                }
            }
        }
    }
    out
}

/// Greedy-by-score matching expressed as a lexicographic optimum: among all
/// partial one-to-one assignments with IoU at or above `threshold`, the one
/// whose per-prediction sequence of (IoU, lower GT index first) is largest,
/// unmatched ranking lowest.
pub fn exhaustive_match(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> Vec<Option<f64>> {
    type Pick = Option<(f64, usize)>;
    fn better(a: &[Pick], b: &[Pick]) -> bool {
        for (x, y) in a.iter().zip(b) {
            let key = |p: &Pick| p.map_or((-1.0, 0i64), |(v, g)| (v, -(g as i64)));
            let (kx, ky) = (key(x), key(y));
            if kx != ky {
                return kx.0 > ky.0 || (kx.0 == ky.0 && kx.1 > ky.1);
            }
        }
        false
    }
    fn rec(
        i: usize,
        ious: &[Vec<f64>],
        used: &mut Vec<bool>,
        thr: f64,
        cur: &mut Vec<Pick>,
        best: &mut Option<Vec<Pick>>,
    ) {
        if i == ious.len() {
            if best.as_ref().is_none_or(|b| better(cur, b)) {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push(None);
        rec(i + 1, ious, used, thr, cur, best);
        cur.pop();
        for g in 0..used.len() {
            if !used[g] && ious[i][g] >= thr {
                used[g] = true;
                cur.push(Some((ious[i][g], g)));
                rec(i + 1, ious, used, thr, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = None;
    rec(
        0,
        ious,
        &mut vec![false; n_gt],
        threshold,
        &mut Vec::new(),
        &mut best,
    );
    best.unwrap()
        .into_iter()
        .map(|p| p.map(|(v, _)| v))
        .collect()
}

/// AP/AR for one maxDets value built directly from the definition:
/// interpolated precision at recall level r is the best precision reached
/// at any rank whose recall is at least r.
pub fn coco_oracle(preds: &[DetectionSet], gts: &[DetectionSet], max_dets: usize) -> (f64, f64) {
    let mut cats: Vec<usize> = gts
        .iter()
        .flat_map(|g| g.detections.iter().map(|d| d.category))
        .collect();
    cats.sort_unstable();
    cats.dedup();
    let (mut ap_sum, mut ar_sum, mut n) = (0.0, 0.0, 0);
    for &c in &cats {
        for ti in 0..10 {
            let t = (50 + 5 * ti) as f64 / 100.0;
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            let mut total_gt = 0;
            for (fi, (p, g)) in preds.iter().zip(gts).enumerate() {
                let mut dets: Vec<(usize, &trkt_core::Detection)> = p
                    .detections
                    .iter()
                    .filter(|d| d.category == c)
                    .enumerate()
                    .collect();
                dets.sort_by(|a, b| {
                    b.1.score
                        .partial_cmp(&a.1.score)
                        .unwrap()
                        .then(a.0.cmp(&b.0))
                });
                dets.truncate(max_dets);
                let gt_boxes: Vec<BBox> = g
                    .detections
                    .iter()
                    .filter(|d| d.category == c)
                    .map(|d| d.bbox)
                    .collect();
                total_gt += gt_boxes.len();
                let ious: Vec<Vec<f64>> = dets
                    .iter()
                    .map(|(_, d)| gt_boxes.iter().map(|b| iou_ref(&d.bbox, b)).collect())
                    .collect();
                let m = exhaustive_match(&ious, gt_boxes.len(), t);
                for (rank, ((_, d), hit)) in dets.iter().zip(m).enumerate() {
                    ranked.push((d.score, fi, rank, hit.is_some()));
                }
            }
            ranked.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut points = Vec::new();
            let mut tp = 0;
            for (i, r) in ranked.iter().enumerate() {
                tp += r.3 as usize;
                points.push((tp as f64 / total_gt as f64, tp as f64 / (i + 1) as f64));
            }
            let mut ap = 0.0;
            for k in 0..=100 {
                let level = k as f64 / 100.0;
                ap += points
                    .iter()
                    .filter(|p| p.0 >= level)
                    .map(|p| p.1)
                    .fold(0.0, f64::max);
            }
            ap_sum += ap / 101.0;
            ar_sum += points.last().map_or(0.0, |p| p.0);
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (ap_sum / n as f64, ar_sum / n as f64)
    }
}

/// Error buckets in the order (classification, localization, both,
/// duplicate, background, missed, true positives). True positives come from
/// the exhaustive matcher over same-class pairs.
pub fn tide_oracle(preds: &DetectionSet, gt: &DetectionSet, t_fg: f64, t_bg: f64) -> [usize; 7] {
    let mut order: Vec<&trkt_core::Detection> = preds.detections.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|p| {
            gt.detections
                .iter()
                .map(|g| {
                    if g.category == p.category {
                        iou_ref(&p.bbox, &g.bbox)
                    } else {
                        -1.0
                    }
                })
                .collect()
        })
        .collect();
    let hits = exhaustive_match(&ious, gt.detections.len(), t_fg);
    let mut counts = [0usize; 7];
    for (p, hit) in order.iter().zip(hits) {
        if hit.is_some() {
            counts[6] += 1;
            continue;
        }
        let overlaps: Vec<(bool, f64)> = gt
            .detections
            .iter()
            .map(|g| (g.category == p.category, iou_ref(&p.bbox, &g.bbox)))
            .collect();
        let loc = overlaps
            .iter()
            .any(|&(same, v)| same && v >= t_bg && v < t_fg)
            && !overlaps.iter().any(|&(same, v)| same && v >= t_fg);
        let cls = overlaps.iter().any(|&(same, v)| !same && v >= t_fg);
        let dup = overlaps.iter().any(|&(same, v)| same && v >= t_fg);
        let bkg = overlaps.iter().all(|&(_, v)| v < t_bg);
        let bucket = if loc {
            1
        } else if cls {
            0
        } else if dup {
            3
        } else if bkg {
            4
        } else {
            2
        };
        counts[bucket] += 1;
    }
    counts[5] = gt.detections.len() - counts[6];
    counts
}
