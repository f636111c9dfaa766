//! Time-deformable 2D Gaussian scenes.
//!
//! Canonical Gaussians live in image-plane pixel units and are composited
//! front to back in list order. Three small networks map a feature of
//! normalized time and canonical position to offsets of position, rotation
//! and scale. Everything is differentiable by hand so scenes can be fitted to
//! frame sequences directly.

mod io;
mod mlp;
mod optim;
mod render;


use serde::{Deserialize, Serialize};

use crate::frame::Frame;
use crate::rng::{self, Rng};

pub use io::{load_scene, save_scene, SceneFile, SCENE_SCHEMA};
pub use mlp::{Dense, Mlp};
pub use optim::{optimize, LossKind, OptimizeOutput, OptimizerConfig};
pub use render::{
    kernel, loss, loss_and_grad, render, render_f64, render_scene, tv_loss, LossConfig, Target, CUTOFF_SQ,
};

/// Lower bound applied to deformed scales.
pub const SCALE_FLOOR: f64 = 1e-4;
/// Parameters per Gaussian in the flattened layout.
pub const GAUSSIAN_PARAMS: usize = 9;
pub const HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    /// `[x, y]` in pixels.
    pub mu: [f64; 2],
    /// Standard deviations along the rotated axes, in pixels.
    pub scale: [f64; 2],
    pub rotation: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Gaussian2D {
    pub fn is_valid(&self) -> bool {
        let finite = self.mu.iter().chain(&self.scale).chain(&self.color).all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.opacity.is_finite();
        finite && self.scale.iter().all(|&s| s > 0.0) && self.opacity > 0.0 && self.opacity < 1.0
    }

    /// `[mu_x, mu_y, s_x, s_y, rotation, r, g, b, opacity]`.
    pub fn to_array(&self) -> [f64; GAUSSIAN_PARAMS] {
        [
            self.mu[0],
            self.mu[1],
            self.scale[0],
            self.scale[1],
            self.rotation,
            self.color[0],
            self.color[1],
            self.color[2],
            self.opacity,
        ]
    }

    pub fn from_array(p: &[f64]) -> Self {
        Self {
            mu: [p[0], p[1]],
            scale: [p[2], p[3]],
            rotation: p[4],
            color: [p[5], p[6], p[7]],
            opacity: p[8],
        }
    }
}

/// Offsets `dx = phi_x(z)`, `dr = phi_r(z)`, `ds = phi_s(z)`. The feature
/// `z` holds `sin/cos(2^k pi t)` for `k < time_freqs`, followed by the same
/// encoding of the canonical position normalized by the frame size.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub time_freqs: usize,
    pub pos_freqs: usize,
    pub position: Mlp,
    pub rotation: Mlp,
    pub scale: Mlp,
}

impl DeformationField {
    pub fn new(rng: &mut Rng) -> Self {
        Self::with_freqs(4, 4, rng)
    }

    pub fn with_freqs(time_freqs: usize, pos_freqs: usize, rng: &mut Rng) -> Self {
        let d = 2 * time_freqs + 4 * pos_freqs;
        Self {
            time_freqs,
            pos_freqs,
            position: Mlp::new(&[d, HIDDEN, HIDDEN, 2], rng),
            rotation: Mlp::new(&[d, HIDDEN, HIDDEN, 1], rng),
            scale: Mlp::new(&[d, HIDDEN, HIDDEN, 2], rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.time_freqs + 4 * self.pos_freqs
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.position, &self.rotation, &self.scale]
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|m| m.num_params()).sum()
    }

    /// Replaces the zero output layers with `N(0, std^2)` weights.
    pub fn randomize_outputs(&mut self, std: f64, rng: &mut Rng) {
        for m in [&mut self.position, &mut self.rotation, &mut self.scale] {
            let last = m.layers.last_mut().expect("layers");
            last.weight.iter_mut().for_each(|w| *w = std * rng::normal(rng));
        }
    }

    /// Feature `z` and its derivative with respect to the canonical position
    /// (`dz/dmu_x`, `dz/dmu_y`).
    pub fn encode(&self, t: f64, mu: [f64; 2], height: usize, width: usize) -> (Vec<f64>, [Vec<f64>; 2]) {
        let d = self.feature_dim();
        let mut z = Vec::with_capacity(d);
        let mut dx = vec![0.0; d];
        let mut dy = vec![0.0; d];
        for k in 0..self.time_freqs {
            let f = (1u64 << k) as f64 * std::f64::consts::PI;
            z.push((f * t).sin());
            z.push((f * t).cos());
        }
        for (axis, (coord, extent)) in [(mu[0], width), (mu[1], height)].into_iter().enumerate() {
            let inv = 1.0 / extent.max(1) as f64;
            for k in 0..self.pos_freqs {
                let f = (1u64 << k) as f64 * std::f64::consts::PI;
                let a = f * coord * inv;
                let target = if axis == 0 { &mut dx } else { &mut dy };
                target[z.len()] = a.cos() * f * inv;
                target[z.len() + 1] = -a.sin() * f * inv;
                z.push(a.sin());
                z.push(a.cos());
            }
        }
        (z, [dx, dy])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub height: usize,
    pub width: usize,
    pub gaussians: Vec<Gaussian2D>,
    pub deformation: DeformationField,
    pub background: [f64; 3],
}

impl GaussianScene {
    /// Random canonical Gaussians with a zero-initialized deformation.
    pub fn random(count: usize, height: usize, width: usize, seed: u64) -> Self {
        use rand::Rng as _;
        let mut r = rng::derived(seed, 0x6a55);
        let gaussians = (0..count)
            .map(|_| Gaussian2D {
                mu: [r.gen_range(2.0..width as f64 - 2.0), r.gen_range(2.0..height as f64 - 2.0)],
                scale: [r.gen_range(1.5..4.0), r.gen_range(1.5..4.0)],
                rotation: r.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                color: [r.gen_range(0.1..0.9), r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)],
                opacity: r.gen_range(0.5..0.95),
            })
            .collect();
        let deformation = DeformationField::new(&mut rng::derived(seed, 0xdef));
        Self { height, width, gaussians, deformation, background: [0.1, 0.1, 0.1] }
    }

    /// A regular `per_side x per_side` lattice of isotropic Gaussians colored
    /// from `frame`, with a zero-initialized deformation.
    pub fn from_frame(frame: &Frame, per_side: usize, seed: u64) -> Self {
        let (h, w) = frame.dims();
        let n = per_side.max(1);
        let (sx, sy) = (w as f64 / n as f64, h as f64 / n as f64);
        let mut gaussians = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let mu = [(i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy];
                let px = frame.pixel((mu[1] as usize).min(h - 1), (mu[0] as usize).min(w - 1));
                gaussians.push(Gaussian2D {
                    mu,
                    scale: [0.6 * sx, 0.6 * sy],
                    rotation: 0.0,
                    color: px.map(|c| (c as f64).clamp(0.0, 1.0)),
                    opacity: 0.9,
                });
            }
        }
        let mut bg = [0.0; 3];
        for y in 0..h {
            for x in 0..w {
                let p = frame.pixel(y, x);
                (0..3).for_each(|c| bg[c] += p[c] as f64 / (h * w) as f64);
            }
        }
        let deformation = DeformationField::new(&mut rng::derived(seed, 0xdef));
        Self { height: h, width: w, gaussians, deformation, background: bg.map(|c| c.clamp(0.0, 1.0)) }
    }

    pub fn validate(&self) -> Result<(), crate::error::SplatError> {
        use crate::error::SplatError::InvalidConfig;
        if self.gaussians.is_empty() {
            return Err(InvalidConfig("scene has no gaussians".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(InvalidConfig("scene has an empty canvas".into()));
        }
        if let Some(i) = self.gaussians.iter().position(|g| !g.is_valid()) {
            return Err(InvalidConfig(format!("gaussian {i} is degenerate")));
        }
        let d = self.deformation.feature_dim();
        for net in self.deformation.nets() {
            if net.inputs() != d {
                return Err(InvalidConfig("deformation input size does not match its encoding".into()));
            }
        }
        let outs: Vec<usize> = self.deformation.nets().iter().map(|n| n.outputs()).collect();
        if outs != [2, 1, 2] {
            return Err(InvalidConfig(format!("deformation output sizes {outs:?}, expected [2, 1, 2]")));
        }
        Ok(())
    }

    /// Flattened parameters: every Gaussian as [`Gaussian2D::to_array`], then
    /// the position, rotation and scale networks.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.gaussians.iter().flat_map(|g| g.to_array()).collect();
        for net in self.deformation.nets() {
            p.extend(net.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let n = self.gaussians.len() * GAUSSIAN_PARAMS;
        for (g, chunk) in self.gaussians.iter_mut().zip(p[..n].chunks(GAUSSIAN_PARAMS)) {
            *g = Gaussian2D::from_array(chunk);
        }
        let mut off = n;
        for net in [&mut self.deformation.position, &mut self.deformation.rotation, &mut self.deformation.scale] {
            let k = net.num_params();
            net.set_params(&p[off..off + k]);
            off += k;
        }
    }

    pub fn num_params(&self) -> usize {
        self.gaussians.len() * GAUSSIAN_PARAMS + self.deformation.num_params()
    }
}

/// Per-Gaussian record of one deformation evaluation, kept for backprop.
pub(crate) struct DeformTrace {
    pub acts: [Vec<Vec<f64>>; 3],
    pub dz_dmu: [Vec<f64>; 2],
    /// Whether each deformed scale axis is above the floor.
    pub scale_live: [bool; 2],
}

pub(crate) fn deform_traced(scene: &GaussianScene, t: f64) -> (Vec<Gaussian2D>, Vec<DeformTrace>) {
    let t = t.clamp(0.0, 1.0);
    let def = &scene.deformation;
    let mut out = Vec::with_capacity(scene.gaussians.len());
    let mut traces = Vec::with_capacity(scene.gaussians.len());
    for g in &scene.gaussians {
        let (z, dz_dmu) = def.encode(t, g.mu, scene.height, scene.width);
        let acts = [def.position.trace(&z), def.rotation.trace(&z), def.scale.trace(&z)];
        let dx = acts[0].last().expect("output");
        let dr = acts[1].last().expect("output");
        let ds = acts[2].last().expect("output");
        let raw = [g.scale[0] + ds[0], g.scale[1] + ds[1]];
        out.push(Gaussian2D {
            mu: [g.mu[0] + dx[0], g.mu[1] + dx[1]],
            scale: raw.map(|s| s.max(SCALE_FLOOR)),
            rotation: g.rotation + dr[0],
            color: g.color,
            opacity: g.opacity,
        });
        traces.push(DeformTrace { acts, dz_dmu, scale_live: raw.map(|s| s > SCALE_FLOOR) });
    }
    (out, traces)
}

/// Deformed Gaussians at normalized time `t` (clamped to `[0, 1]`). Scales
/// are floored at [`SCALE_FLOOR`]; colors and opacities are unchanged.
pub fn deform(scene: &GaussianScene, t: f64) -> Vec<Gaussian2D> {
    deform_traced(scene, t).0
}

/// Normalized time of frame index `t` in a sequence of `times` frames.
pub fn normalized_time(t: usize, times: usize) -> f64 {
    if times <= 1 {
        0.0
    } else {
        t as f64 / (times - 1) as f64
    }
}
