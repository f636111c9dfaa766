//! Optical flow: fields, block matching, downsampling, warping and
//! forward–backward validity masks.

mod field;
mod ops;

pub use field::{FlowField, Resolution, ValidityMask};
pub use ops::{
    downsample_flow, estimate_flow_block_matching, fb_consistency_mask, warp_channels, warp_frame, warp_tokens,
    Interpolation,
};

/// `F_{t->t-1}` (on frame `t`) together with `F_{t-1->t}` (on frame `t-1`).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    pub forward: FlowField,
    pub backward: FlowField,
}

impl FlowPair {
    pub fn zeros(h: usize, w: usize, resolution: Resolution) -> Self {
        Self { forward: FlowField::zeros(h, w, resolution), backward: FlowField::zeros(h, w, resolution) }
    }
}
