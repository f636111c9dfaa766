use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::FlowError;
use crate::frame::{Frame, CHANNELS};
use crate::tokens::TokenMap;

use super::field::{FlowField, Resolution, ValidityMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Integer block matching. The returned field lives on `dst` and points into
/// `src`: `dst(p) ~ src(p + F(p))`, so `estimate(f_{t-1}, f_t)` gives `F_{t->t-1}`.
///
/// Cost is the mean squared RGB difference over the `patch x patch`
/// neighbourhood, restricted to pixels inside both frames. Candidates whose
/// centre leaves `src` are skipped. Ties go to the smaller displacement, then
/// lexicographic `(dy, dx)`.
pub fn estimate_flow_block_matching(
    src: &Frame,
    dst: &Frame,
    patch: usize,
    radius: usize,
) -> Result<FlowField, FlowError> {
    if src.dims() != dst.dims() {
        return Err(FlowError::SizeMismatch(src.dims(), dst.dims()));
    }
    if patch % 2 == 0 {
        return Err(FlowError::EvenPatch(patch));
    }
    let (h, w) = dst.dims();
    let r = radius as i64;
    let half = (patch / 2) as i64;
    let mut candidates: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect();
    candidates.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w * 2);
            for x in 0..w {
                let mut best = (f64::INFINITY, 0i64, 0i64);
                for &(dy, dx) in &candidates {
                    let (cy, cx) = (y as i64 + dy, x as i64 + dx);
                    if cy < 0 || cx < 0 || cy >= h as i64 || cx >= w as i64 {
                        continue;
                    }
                    let cost = patch_cost(src, dst, (y as i64, x as i64), (dy, dx), half);
                    if cost < best.0 {
                        best = (cost, dy, dx);
                    }
                }
                row.push(best.2 as f32);
                row.push(best.1 as f32);
            }
            row
        })
        .collect();
    Ok(FlowField::new(h, w, Resolution::Pixel, rows.concat()).expect("finite integer flow"))
}

fn patch_cost(src: &Frame, dst: &Frame, p: (i64, i64), d: (i64, i64), half: i64) -> f64 {
    let (h, w) = (dst.height() as i64, dst.width() as i64);
    let mut sum = 0.0;
    let mut n = 0usize;
    for oy in -half..=half {
        for ox in -half..=half {
            let (py, px) = (p.0 + oy, p.1 + ox);
            let (qy, qx) = (py + d.0, px + d.1);
            if py < 0 || px < 0 || py >= h || px >= w || qy < 0 || qx < 0 || qy >= h || qx >= w {
                continue;
            }
            let a = dst.pixel(py as usize, px as usize);
            let b = src.pixel(qy as usize, qx as usize);
            for c in 0..CHANNELS {
                let e = (a[c] - b[c]) as f64;
                sum += e * e;
            }
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Averages pixel blocks down to a `token_h x token_w` lattice and rescales
/// displacements into token units. Token cell `j` covers pixel rows
/// `[floor(j h / token_h), floor((j + 1) h / token_h))`, likewise for columns.
pub fn downsample_flow(pixel_flow: &FlowField, token_h: usize, token_w: usize) -> Result<FlowField, FlowError> {
    let (h, w) = pixel_flow.dims();
    if token_h == 0 || token_w == 0 || token_h > h || token_w > w {
        return Err(FlowError::DegenerateTarget { from: (h, w), to: (token_h, token_w) });
    }
    let sx = token_w as f64 / w as f64;
    let sy = token_h as f64 / h as f64;
    let mut data = Vec::with_capacity(token_h * token_w * 2);
    for ty in 0..token_h {
        let (y0, y1) = (ty * h / token_h, (ty + 1) * h / token_h);
        for tx in 0..token_w {
            let (x0, x1) = (tx * w / token_w, (tx + 1) * w / token_w);
            let (mut ax, mut ay) = (0.0f64, 0.0f64);
            for y in y0..y1 {
                for x in x0..x1 {
                    let [dx, dy] = pixel_flow.at(y, x);
                    ax += dx as f64;
                    ay += dy as f64;
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            data.push((ax / n * sx) as f32);
            data.push((ay / n * sy) as f32);
        }
    }
    Ok(FlowField::new(token_h, token_w, Resolution::Token, data).expect("finite"))
}

/// Samples `src` (`h x w x c`, row-major) at `p + F(p)` for every `p`.
///
/// Returns the warped data and a mask flagging samples inside the convex hull
/// of the lattice `[0, w-1] x [0, h-1]`. Bilinear taps that fall outside the
/// lattice contribute zero; fully outside samples are zero vectors.
pub fn warp_channels(
    src: &[f32],
    h: usize,
    w: usize,
    c: usize,
    flow: &FlowField,
    mode: Interpolation,
) -> Result<(Vec<f32>, ValidityMask), FlowError> {
    if flow.dims() != (h, w) {
        return Err(FlowError::ResolutionMismatch(flow.dims(), (h, w)));
    }
    let mut out = vec![0.0f32; h * w * c];
    let mut valid = vec![0u8; h * w];
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            let [dx, dy] = flow.at(y, x);
            let sx = x as f64 + dx as f64;
            let sy = y as f64 + dy as f64;
            let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64;
            valid[y * w + x] = inside as u8;
            let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            match mode {
                Interpolation::Nearest => {
                    let (nx, ny) = (sx.round(), sy.round());
                    if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
                        let i = (ny as usize * w + nx as usize) * c;
                        dst.copy_from_slice(&src[i..i + c]);
                    }
                }
                Interpolation::Bilinear => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let taps = [
                        (y0, x0, (1.0 - fx) * (1.0 - fy)),
                        (y0, x0 + 1.0, fx * (1.0 - fy)),
                        (y0 + 1.0, x0, (1.0 - fx) * fy),
                        (y0 + 1.0, x0 + 1.0, fx * fy),
                    ];
                    for (ty, tx, wt) in taps {
                        if wt == 0.0 || ty < 0.0 || tx < 0.0 || ty >= h as f64 || tx >= w as f64 {
                            continue;
                        }
                        let i = (ty as usize * w + tx as usize) * c;
                        for (a, &s) in acc.iter_mut().zip(&src[i..i + c]) {
                            *a += wt * s as f64;
                        }
                    }
                    for (o, &a) in dst.iter_mut().zip(&acc) {
                        *o = a as f32;
                    }
                }
            }
        }
    }
    Ok((out, ValidityMask::new(h, w, valid).expect("binary")))
}

/// Backward-warps previous-frame tokens with a token-level `F_{t->t-1}`.
/// The mask flags in-bounds samples.
pub fn warp_tokens(
    flow: &FlowField,
    prev: &TokenMap,
    mode: Interpolation,
) -> Result<(TokenMap, ValidityMask), FlowError> {
    if flow.dims() != (prev.h(), prev.w()) {
        return Err(FlowError::ResolutionMismatch(flow.dims(), (prev.h(), prev.w())));
    }
    let (data, mask) = warp_channels(prev.data(), prev.h(), prev.w(), prev.d(), flow, mode)?;
    let tm = TokenMap::new(prev.h(), prev.w(), prev.d(), data).expect("finite warp");
    Ok((tm, mask))
}

/// Backward-warps a frame with a pixel-level `F_{t->t-1}`.
pub fn warp_frame(flow: &FlowField, prev: &Frame, mode: Interpolation) -> Result<(Frame, ValidityMask), FlowError> {
    let (h, w) = prev.dims();
    let (data, mask) = warp_channels(prev.data(), h, w, CHANNELS, flow, mode)?;
    Ok((Frame::new(h, w, data).expect("finite warp"), mask))
}

/// Forward–backward consistency: `p` is valid iff
/// `|F(p) + B(p + F(p))|^2 < alpha (|F(p)|^2 + |B(p + F(p))|^2) + beta`,
/// with `B` sampled bilinearly. Lookups outside the lattice are invalid.
///
/// `forward` is `F_{t->t-1}` on frame `t`; `backward` is `F_{t-1->t}` on frame `t-1`.
pub fn fb_consistency_mask(
    forward: &FlowField,
    backward: &FlowField,
    alpha: f64,
    beta: f64,
) -> Result<ValidityMask, FlowError> {
    if forward.dims() != backward.dims() {
        return Err(FlowError::ResolutionMismatch(forward.dims(), backward.dims()));
    }
    let (h, w) = forward.dims();
    let (sampled, inside) = warp_channels(backward.data(), h, w, 2, forward, Interpolation::Bilinear)?;
    Ok(ValidityMask::from_fn(h, w, |y, x| {
        if !inside.is_valid(y, x) {
            return false;
        }
        let [fx, fy] = forward.at(y, x);
        let (fx, fy) = (fx as f64, fy as f64);
        let i = (y * w + x) * 2;
        let (bx, by) = (sampled[i] as f64, sampled[i + 1] as f64);
        let res = (fx + bx).powi(2) + (fy + by).powi(2);
        res < alpha * (fx * fx + fy * fy + bx * bx + by * by) + beta
    }))
}
