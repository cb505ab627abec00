//! Inter-frame attention augmentation.
//!
//! The previous frame's fused attention is pulled forward along backward
//! optical flow with bilinear sampling; samples that fall off the grid read
//! as zero.

use crate::error::{Error, Result};
use crate::types::{AttentionStack, FlowField, FrameRef, Provenance};

/// Bilinear read of one `h x w` plane with zero padding.
fn sample_bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = y0 + dy;
        if yy < 0 || yy >= h as i64 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = x0 + dx;
            if xx < 0 || xx >= w as i64 {
                continue;
            }
            acc += wy * wx * plane[yy as usize * w + xx as usize] as f64;
        }
    }
    acc
}

/// Warps `prev` into the flow's frame: `out[c][q] = prev[c](q + flow[q])`.
///
/// The result carries the flow's frame and is tagged `pseudo`.
pub fn warp_attention(prev: &AttentionStack, flow: &FlowField) -> Result<AttentionStack> {
    if prev.grid() != flow.grid() {
        return Err(Error::Shape(format!(
            "attention grid {:?} vs flow grid {:?}",
            prev.grid(),
            flow.grid()
        )));
    }
    let (h, w) = prev.grid();
    let mut data = Vec::with_capacity(prev.data().len());
    for c in 0..prev.num_categories() {
        let plane = prev.map(c);
        for row in 0..h {
            for col in 0..w {
                let (dx, dy) = flow.at(row, col);
                let v =
                    sample_bilinear(plane, h, w, col as f64 + dx as f64, row as f64 + dy as f64);
                data.push((v as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(AttentionStack::from_trusted(
        flow.frame().clone(),
        prev.categories().to_vec(),
        h,
        w,
        data,
        Provenance::Pseudo,
    ))
}

/// Constant backward flow `(dx, dy)` over an `h x w` grid.
pub fn make_translation_flow(
    frame: FrameRef,
    grid: (usize, usize),
    dx: f32,
    dy: f32,
) -> Result<FlowField> {
    let (h, w) = grid;
    let data = std::iter::repeat_n([dx, dy], h * w).flatten().collect();
    FlowField::new(frame, h, w, data)
}

/// Integer candidates in `[-radius, radius]^2`, ordered by the tie-break
/// rule: smallest `|dx|+|dy|`, then smallest `dy`, then smallest `dx`.
fn candidates(radius: i64) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .collect();
    out.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    out
}

/// Block-matching stand-in for an external flow model.
///
/// The grid is tiled by `block x block` cells (edge tiles may be smaller).
/// Each tile gets the integer displacement `d` that minimizes the sum over
/// categories of `|cur[q] - prev[q + d]|`, with off-grid reads as zero.
pub fn estimate_block_flow(
    prev: &AttentionStack,
    cur: &AttentionStack,
    block: usize,
    radius: usize,
) -> Result<FlowField> {
    if prev.grid() != cur.grid() || prev.num_categories() != cur.num_categories() {
        return Err(Error::Shape(format!(
            "stacks differ: {}x{:?} vs {}x{:?}",
            prev.num_categories(),
            prev.grid(),
            cur.num_categories(),
            cur.grid()
        )));
    }
    if block == 0 {
        return Err(Error::Validation("block size must be at least 1".into()));
    }
    let (h, w) = cur.grid();
    let cands = candidates(radius as i64);
    let mut data = vec![0.0f32; h * w * 2];

    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let rows = by..(by + block).min(h);
            let cols = bx..(bx + block).min(w);
            let mut best = (f64::INFINITY, 0i64, 0i64);
            for &(dx, dy) in &cands {
                let mut sad = 0.0;
                for c in 0..cur.num_categories() {
                    let (pm, cm) = (prev.map(c), cur.map(c));
                    for r in rows.clone() {
                        for q in cols.clone() {
                            let (sy, sx) = (r as i64 + dy, q as i64 + dx);
                            let p = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                                pm[sy as usize * w + sx as usize] as f64
                            } else {
                                0.0
                            };
                            sad += (cm[r * w + q] as f64 - p).abs();
                        }
                    }
                    if sad >= best.0 {
                        break;
                    }
                }
                if sad < best.0 {
                    best = (sad, dx, dy);
                }
            }
            for r in rows.clone() {
                for q in cols.clone() {
                    let i = (r * w + q) * 2;
                    data[i] = best.1 as f32;
                    data[i + 1] = best.2 as f32;
                }
            }
        }
    }
    FlowField::new(cur.frame().clone(), h, w, data)
}
