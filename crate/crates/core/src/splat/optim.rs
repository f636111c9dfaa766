//! Adam on reparameterized scene parameters.
//!
//! Scales are optimized as logarithms and opacities as logits so both stay in
//! range; colors are clipped to `[0, 1]` after each step. Learning rates
//! decay exponentially to `final_lr_fraction` of their initial value.

use serde::{Deserialize, Serialize};

pub use super::render::LossKind;
use super::render::{loss, loss_and_grad, LossConfig, Target};
use super::{GaussianScene, GAUSSIAN_PARAMS};
use crate::error::SplatError;

const LOGIT_LIMIT: f64 = 12.0;
const LOG_SCALE_MIN: f64 = -6.9; // ~1e-3 px

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Position, scale, rotation and opacity.
    pub lr_geometry: f64,
    pub lr_color: f64,
    pub lr_deformation: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub final_lr_fraction: f64,
    pub loss: LossConfig,
    pub deterministic: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr_geometry: 1e-2,
            lr_color: 5e-3,
            lr_deformation: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_lr_fraction: 0.1,
            loss: LossConfig::default(),
            deterministic: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), SplatError> {
        let bad = |m: &str| Err(SplatError::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        for lr in [self.lr_geometry, self.lr_color, self.lr_deformation] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad("learning rates must be finite and non-negative");
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam moments need beta in [0, 1) and eps > 0");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        if !(self.loss.lambda_tv.is_finite() && self.loss.lambda_tv >= 0.0) {
            return bad("lambda_tv must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOutput {
    pub scene: GaussianScene,
    /// Loss before every update, followed by the final loss.
    pub losses: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_raw(scene: &GaussianScene) -> Vec<f64> {
    let mut p = scene.params();
    for chunk in p[..scene.gaussians.len() * GAUSSIAN_PARAMS].chunks_mut(GAUSSIAN_PARAMS) {
        chunk[2] = chunk[2].ln();
        chunk[3] = chunk[3].ln();
        chunk[8] = logit(chunk[8]).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    }
    p
}

fn from_raw(raw: &[f64], scene: &mut GaussianScene) {
    let mut p = raw.to_vec();
    for chunk in p[..scene.gaussians.len() * GAUSSIAN_PARAMS].chunks_mut(GAUSSIAN_PARAMS) {
        chunk[2] = chunk[2].exp();
        chunk[3] = chunk[3].exp();
        chunk[8] = sigmoid(chunk[8]);
    }
    scene.set_params(&p);
}

/// Fits `scene` to `targets` and returns the fitted scene with its loss history.
pub fn optimize(
    scene: &GaussianScene,
    targets: &[Target<'_>],
    cfg: &OptimizerConfig,
) -> Result<OptimizeOutput, SplatError> {
    cfg.validate()?;
    scene.validate()?;
    let n_gauss = scene.gaussians.len() * GAUSSIAN_PARAMS;
    let mut current = scene.clone();
    let mut raw = to_raw(scene);
    let lrs: Vec<f64> = (0..raw.len())
        .map(|i| {
            if i >= n_gauss {
                cfg.lr_deformation
            } else if (5..8).contains(&(i % GAUSSIAN_PARAMS)) {
                cfg.lr_color
            } else {
                cfg.lr_geometry
            }
        })
        .collect();
    let mut m = vec![0.0; raw.len()];
    let mut v = vec![0.0; raw.len()];
    let mut losses = Vec::with_capacity(cfg.iterations + 1);

    for it in 0..cfg.iterations {
        let (l, mut g) = loss_and_grad(&current, targets, &cfg.loss, cfg.deterministic)?;
        if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(SplatError::DivergenceDetected { iteration: it });
        }
        losses.push(l);
        for (gi, gauss) in g[..n_gauss].chunks_mut(GAUSSIAN_PARAMS).zip(&current.gaussians) {
            gi[2] *= gauss.scale[0];
            gi[3] *= gauss.scale[1];
            gi[8] *= gauss.opacity * (1.0 - gauss.opacity);
        }
        let k = (it + 1) as i32;
        let decay = cfg.final_lr_fraction.powf(it as f64 / cfg.iterations as f64);
        let (c1, c2) = (1.0 - cfg.beta1.powi(k), 1.0 - cfg.beta2.powi(k));
        for i in 0..raw.len() {
            if lrs[i] == 0.0 {
                continue;
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            raw[i] -= lrs[i] * decay * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        for chunk in raw[..n_gauss].chunks_mut(GAUSSIAN_PARAMS) {
            chunk[2] = chunk[2].max(LOG_SCALE_MIN);
            chunk[3] = chunk[3].max(LOG_SCALE_MIN);
            for c in &mut chunk[5..8] {
                *c = c.clamp(0.0, 1.0);
            }
            chunk[8] = chunk[8].clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
        }
        from_raw(&raw, &mut current);
        tracing::trace!(iteration = it, loss = l, "splat step");
    }
    let last = loss(&current, targets, &cfg.loss)?;
    if !last.is_finite() {
        return Err(SplatError::DivergenceDetected { iteration: cfg.iterations });
    }
    losses.push(last);
    Ok(OptimizeOutput { scene: current, losses })
}
