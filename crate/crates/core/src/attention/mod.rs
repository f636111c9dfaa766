//! Spatio-temporal sub-grid attention.
//!
//! Every frame of a sub-grid queries the concatenated keys and values of all
//! four member frames (plus the shared text tokens). Image queries and keys
//! carry 2D axial RoPE over intra-frame `(row, col)`; all members share the
//! same coordinate frame.

mod params;
mod rope;
mod stack;
mod stga;

pub use params::{
    layer_gate, load_weights, random_stack, save_weights, AttentionParams, LayerRange, Matrix, StreamWeights,
    TextTokens,
};
pub use rope::{rope_embed, Position, RopeSpec};
pub use stack::{residual_norm, run_block_stack};
pub use stga::{build_joint_kv, softmax_in_place, stga, stga_with_probs, token_positions, JointKv};
