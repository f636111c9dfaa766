//! Compositing, losses and their analytic gradients.
//!
//! Pixel `(y, x)` samples the image plane at `(x, y)`. Each Gaussian has
//! weight `w = opacity * k(m)` with `m` the squared Mahalanobis distance, and
//! `C = sum_i c_i w_i prod_{j<i} (1 - w_j) + bg prod_j (1 - w_j)`.
//!
//! The kernel is a Gaussian truncated at 3 sigma with a linear correction so
//! that both `k` and `k'` vanish at the cutoff:
//! `k(m) = (exp(-m/2) - e (1 + (9 - m)/2)) / (1 - 5.5 e)`, `e = exp(-4.5)`.
//! It is monotone, `k(0) = 1`, and differs from the plain Gaussian by at most
//! about 6e-2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{deform_traced, Gaussian2D, GaussianScene, GAUSSIAN_PARAMS};
use crate::error::SplatError;
use crate::frame::Frame;

/// Squared Mahalanobis cutoff (3 sigma).
pub const CUTOFF_SQ: f64 = 9.0;

fn tail() -> f64 {
    (-0.5 * CUTOFF_SQ).exp()
}

fn norm() -> f64 {
    1.0 - tail() * (1.0 + 0.5 * CUTOFF_SQ)
}

/// Kernel value at squared distance `m`.
pub fn kernel(m: f64) -> f64 {
    if m >= CUTOFF_SQ {
        return 0.0;
    }
    ((-0.5 * m).exp() - tail() * (1.0 + 0.5 * (CUTOFF_SQ - m))) / norm()
}

fn kernel_grad(m: f64) -> f64 {
    if m >= CUTOFF_SQ {
        return 0.0;
    }
    0.5 * (tail() - (-0.5 * m).exp()) / norm()
}

#[derive(Clone, Copy)]
struct Prepared {
    mu: [f64; 2],
    inv2: [f64; 2],
    cos: f64,
    sin: f64,
    reach: f64,
    color: [f64; 3],
    opacity: f64,
}

impl Prepared {
    fn new(g: &Gaussian2D) -> Self {
        Self {
            mu: g.mu,
            inv2: [1.0 / (g.scale[0] * g.scale[0]), 1.0 / (g.scale[1] * g.scale[1])],
            cos: g.rotation.cos(),
            sin: g.rotation.sin(),
            reach: CUTOFF_SQ.sqrt() * g.scale[0].max(g.scale[1]),
            color: g.color,
            opacity: g.opacity,
        }
    }

    /// `(m, u0, u1)` for a pixel inside the support.
    #[inline]
    fn local(&self, px: f64, py: f64) -> Option<(f64, f64, f64)> {
        let (dx, dy) = (px - self.mu[0], py - self.mu[1]);
        if dx.abs() > self.reach || dy.abs() > self.reach {
            return None;
        }
        let u0 = self.cos * dx + self.sin * dy;
        let u1 = -self.sin * dx + self.cos * dy;
        let m = u0 * u0 * self.inv2[0] + u1 * u1 * self.inv2[1];
        (m < CUTOFF_SQ).then_some((m, u0, u1))
    }
}

fn prepare(gs: &[Gaussian2D]) -> Vec<Prepared> {
    gs.iter().map(Prepared::new).collect()
}

fn composite_row(preps: &[Prepared], bg: [f64; 3], y: usize, out: &mut [f64]) {
    for (x, px) in out.chunks_mut(3).enumerate() {
        let mut acc = [0.0; 3];
        let mut trans = 1.0;
        for p in preps {
            if let Some((m, _, _)) = p.local(x as f64, y as f64) {
                let w = p.opacity * kernel(m);
                for c in 0..3 {
                    acc[c] += p.color[c] * w * trans;
                }
                trans *= 1.0 - w;
            }
        }
        for c in 0..3 {
            px[c] = acc[c] + bg[c] * trans;
        }
    }
}

/// Interleaved RGB render in f64.
pub fn render_f64(gaussians: &[Gaussian2D], background: [f64; 3], height: usize, width: usize) -> Vec<f64> {
    let preps = prepare(gaussians);
    let mut out = vec![0.0; height * width * 3];
    out.par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| composite_row(&preps, background, y, row));
    out
}

pub fn render(gaussians: &[Gaussian2D], background: [f64; 3], height: usize, width: usize) -> Frame {
    let data = render_f64(gaussians, background, height, width).into_iter().map(|v| v as f32).collect();
    Frame::new(height, width, data).expect("finite render")
}

/// Renders the deformed scene at normalized time `t`.
pub fn render_scene(scene: &GaussianScene, t: f64) -> Frame {
    render(&super::deform(scene, t), scene.background, scene.height, scene.width)
}

fn tv_terms(h: usize, w: usize) -> usize {
    3 * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
}

fn tv_of(img: &[f64], h: usize, w: usize) -> f64 {
    let n = tv_terms(h, w);
    if n == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img[(y * w + x) * 3 + c];
                if x + 1 < w {
                    s += (img[(y * w + x + 1) * 3 + c] - v).powi(2);
                }
                if y + 1 < h {
                    s += (img[((y + 1) * w + x) * 3 + c] - v).powi(2);
                }
            }
        }
    }
    s / n as f64
}

/// Mean of squared horizontal and vertical neighbour differences over all
/// channels; 0 when the image has no neighbours.
pub fn tv_loss(image: &Frame) -> f64 {
    let (h, w) = image.dims();
    let img: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    tv_of(&img, h, w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_tv: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::L1, lambda_tv: 1e-3 }
    }
}

/// A frame to fit at normalized time `t`.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub t: f64,
    pub frame: &'a Frame,
}

fn check_targets(scene: &GaussianScene, targets: &[Target<'_>]) -> Result<(), SplatError> {
    if targets.is_empty() {
        return Err(SplatError::InvalidConfig("no target frames".into()));
    }
    for t in targets {
        if t.frame.dims() != (scene.height, scene.width) {
            return Err(SplatError::ShapeMismatch(format!(
                "target {:?} vs scene {:?}",
                t.frame.dims(),
                (scene.height, scene.width)
            )));
        }
    }
    Ok(())
}

/// Data term and its gradient with respect to the rendered image.
fn data_term(img: &[f64], target: &Frame, kind: LossKind, scale: f64, grad: &mut [f64]) -> f64 {
    let n = img.len() as f64;
    let mut s = 0.0;
    for ((g, &r), &f) in grad.iter_mut().zip(img).zip(target.data()) {
        let d = r - f as f64;
        match kind {
            LossKind::L1 => {
                s += d.abs();
                *g += scale * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n;
            }
            LossKind::L2 => {
                s += d * d;
                *g += scale * 2.0 * d / n;
            }
        }
    }
    s / n
}

fn tv_grad(img: &[f64], h: usize, w: usize, scale: f64, grad: &mut [f64]) {
    let n = tv_terms(h, w);
    if n == 0 {
        return;
    }
    let k = scale * 2.0 / n as f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let a = (y * w + x) * 3 + c;
                if x + 1 < w {
                    let b = (y * w + x + 1) * 3 + c;
                    let d = img[b] - img[a];
                    grad[b] += k * d;
                    grad[a] -= k * d;
                }
                if y + 1 < h {
                    let b = ((y + 1) * w + x) * 3 + c;
                    let d = img[b] - img[a];
                    grad[b] += k * d;
                    grad[a] -= k * d;
                }
            }
        }
    }
}

/// Mean over targets of `data(render(t), frame) + lambda_tv * tv(render(t))`.
pub fn loss(scene: &GaussianScene, targets: &[Target<'_>], cfg: &LossConfig) -> Result<f64, SplatError> {
    check_targets(scene, targets)?;
    let mut total = 0.0;
    for tg in targets {
        let gs = super::deform(scene, tg.t);
        let img = render_f64(&gs, scene.background, scene.height, scene.width);
        let mut scratch = vec![0.0; img.len()];
        total += data_term(&img, tg.frame, cfg.kind, 0.0, &mut scratch)
            + cfg.lambda_tv * tv_of(&img, scene.height, scene.width);
    }
    Ok(total / targets.len() as f64)
}

/// Backward pass of one row: accumulates gradients of the deformed
/// Gaussians (layout of [`Gaussian2D::to_array`]).
fn row_grad(preps: &[Prepared], bg: [f64; 3], y: usize, width: usize, dimg: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; preps.len() * GAUSSIAN_PARAMS];
    let mut hits: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::with_capacity(preps.len());
    for x in 0..width {
        let gc = &dimg[(y * width + x) * 3..(y * width + x) * 3 + 3];
        if gc.iter().all(|&v| v == 0.0) {
            continue;
        }
        hits.clear();
        let mut trans = 1.0;
        for (i, p) in preps.iter().enumerate() {
            if let Some((m, u0, u1)) = p.local(x as f64, y as f64) {
                let w = p.opacity * kernel(m);
                hits.push((i, w, trans, m, u0, u1));
                trans *= 1.0 - w;
            }
        }
        let mut behind = bg;
        for &(i, w, t_i, m, u0, u1) in hits.iter().rev() {
            let p = &preps[i];
            let gi = &mut g[i * GAUSSIAN_PARAMS..(i + 1) * GAUSSIAN_PARAMS];
            let mut dw = 0.0;
            for c in 0..3 {
                dw += gc[c] * t_i * (p.color[c] - behind[c]);
                gi[5 + c] += gc[c] * w * t_i;
                behind[c] = w * p.color[c] + (1.0 - w) * behind[c];
            }
            gi[8] += dw * kernel(m);
            let dm = dw * p.opacity * kernel_grad(m);
            if dm == 0.0 {
                continue;
            }
            let du0 = 2.0 * u0 * p.inv2[0];
            let du1 = 2.0 * u1 * p.inv2[1];
            gi[0] += dm * (-du0 * p.cos + du1 * p.sin);
            gi[1] += dm * (-du0 * p.sin - du1 * p.cos);
            // d(u^2 / s^2)/ds = -2 u^2 / s^3
            gi[2] += dm * (-2.0 * u0 * u0 * p.inv2[0] * p.inv2[0].sqrt());
            gi[3] += dm * (-2.0 * u1 * u1 * p.inv2[1] * p.inv2[1].sqrt());
            gi[4] += dm * (du0 * u1 - du1 * u0);
        }
    }
    g
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Loss (as [`loss`]) and its gradient with respect to
/// [`GaussianScene::params`]. With `deterministic` the per-row partial sums
/// are added in row order; otherwise they are reduced in parallel.
pub fn loss_and_grad(
    scene: &GaussianScene,
    targets: &[Target<'_>],
    cfg: &LossConfig,
    deterministic: bool,
) -> Result<(f64, Vec<f64>), SplatError> {
    check_targets(scene, targets)?;
    let (h, w) = (scene.height, scene.width);
    let n = scene.gaussians.len();
    let inv_k = 1.0 / targets.len() as f64;
    let mut grad = vec![0.0; scene.num_params()];
    let net_offsets = {
        let base = n * GAUSSIAN_PARAMS;
        let a = scene.deformation.position.num_params();
        let b = scene.deformation.rotation.num_params();
        [base, base + a, base + a + b]
    };
    let mut total = 0.0;

    for tg in targets {
        let (gs, traces) = deform_traced(scene, tg.t);
        let preps = prepare(&gs);
        let mut img = vec![0.0; h * w * 3];
        img.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| composite_row(&preps, scene.background, y, row));
        let mut dimg = vec![0.0; img.len()];
        let data = data_term(&img, tg.frame, cfg.kind, inv_k, &mut dimg);
        let tv = if cfg.lambda_tv != 0.0 {
            tv_grad(&img, h, w, inv_k * cfg.lambda_tv, &mut dimg);
            cfg.lambda_tv * tv_of(&img, h, w)
        } else {
            0.0
        };
        total += data + tv;

        let row = |y: usize| row_grad(&preps, scene.background, y, w, &dimg);
        let gd = if deterministic {
            let rows: Vec<Vec<f64>> = (0..h).into_par_iter().map(row).collect();
            let mut acc = vec![0.0; n * GAUSSIAN_PARAMS];
            rows.iter().for_each(|r| add_into(&mut acc, r));
            acc
        } else {
            (0..h).into_par_iter().map(row).reduce(
                || vec![0.0; n * GAUSSIAN_PARAMS],
                |mut a, b| {
                    add_into(&mut a, &b);
                    a
                },
            )
        };

        let def = &scene.deformation;
        for (i, tr) in traces.iter().enumerate() {
            let gi = &gd[i * GAUSSIAN_PARAMS..(i + 1) * GAUSSIAN_PARAMS];
            let base = i * GAUSSIAN_PARAMS;
            let ds = [
                if tr.scale_live[0] { gi[2] } else { 0.0 },
                if tr.scale_live[1] { gi[3] } else { 0.0 },
            ];
            grad[base] += gi[0];
            grad[base + 1] += gi[1];
            grad[base + 2] += ds[0];
            grad[base + 3] += ds[1];
            for k in 4..GAUSSIAN_PARAMS {
                grad[base + k] += gi[k];
            }
            let outs: [&[f64]; 3] = [&gi[0..2], &gi[4..5], &ds];
            if outs.iter().all(|o| o.iter().all(|&v| v == 0.0)) {
                continue;
            }
            let mut dz = vec![0.0; def.feature_dim()];
            for (k, net) in def.nets().into_iter().enumerate() {
                let lo = net_offsets[k];
                let d = net.backward(&tr.acts[k], outs[k], &mut grad[lo..lo + net.num_params()]);
                add_into(&mut dz, &d);
            }
            for axis in 0..2 {
                grad[base + axis] += dz.iter().zip(&tr.dz_dmu[axis]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok((total * inv_k, grad))
}
