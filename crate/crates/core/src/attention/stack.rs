//! Toy multi-layer block stack: one attention sub-layer, residual, RMS norm.

use rayon::prelude::*;

use crate::error::AttentionError;
use crate::tokens::TokenMap;

use super::params::{layer_gate, AttentionParams, LayerRange, TextTokens};
use super::rope::RopeSpec;
use super::stga::{build_joint_kv, stga};

const RMS_EPS: f64 = 1e-6;

/// Runs `depth` layers over the member frames of one sub-grid.
///
/// Gated layers let every member attend to the joint keys/values of all
/// members; other layers use each frame's own keys/values. All members of a
/// layer read the same layer input.
pub fn run_block_stack(
    members: &[TokenMap],
    text: &TextTokens,
    depth: usize,
    vital: LayerRange,
    layers: &[AttentionParams],
    rope: &RopeSpec,
) -> Result<Vec<TokenMap>, AttentionError> {
    if depth == 0 {
        return Err(AttentionError::InvalidParams("depth must be at least 1".into()));
    }
    if layers.len() < depth {
        return Err(AttentionError::InvalidParams(format!("{} layer parameter sets for depth {depth}", layers.len())));
    }
    if vital.start >= vital.end {
        return Err(AttentionError::InvalidLayerRange { start: vital.start, end: vital.end });
    }
    if members.is_empty() {
        return Err(AttentionError::ShapeMismatch("no member frames".into()));
    }
    let mut state: Vec<TokenMap> = members.to_vec();
    for (l, params) in layers.iter().take(depth).enumerate() {
        let joint = if layer_gate(l, vital) {
            let refs: Vec<&TokenMap> = state.iter().collect();
            Some(build_joint_kv(&refs, params)?)
        } else {
            None
        };
        state = state
            .par_iter()
            .map(|x| {
                let attn = match &joint {
                    Some(kv) => stga(x, kv, text, params, rope)?,
                    None => stga(x, &build_joint_kv(&[x], params)?, text, params, rope)?,
                };
                Ok(residual_norm(x, &attn, params))
            })
            .collect::<Result<_, AttentionError>>()?;
    }
    Ok(state)
}

/// `rms_norm(x + attn W_o)` per token.
pub fn residual_norm(x: &TokenMap, attn: &TokenMap, params: &AttentionParams) -> TokenMap {
    let d = x.d();
    let mut out = x.clone();
    let mut proj = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for i in 0..x.len() {
        buf.iter_mut().zip(attn.row(i)).for_each(|(b, &a)| *b = a as f64);
        params.image.wo.apply_f64(&buf, &mut proj);
        let y: Vec<f64> = x.row(i).iter().zip(&proj).map(|(&a, &p)| a as f64 + p).collect();
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / d as f64 + RMS_EPS).sqrt();
        for (o, v) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&y) {
            *o = (v / rms) as f32;
        }
    }
    out
}
