//! Grid-based spatio-temporal token propagation for multi-view video editing.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`grid`]: camera–time grid, sub-grids and traversal plans.
//! * [`attention`]: joint sub-grid attention with 2D axial RoPE and a toy block stack.
//! * [`flow`]: flow fields, block matching, token warping and forward–backward masks.
//! * [`ctp`]: token inheritance and flow-guided replacement along a plan.
//! * [`splat`]: time-deformable 2D Gaussians, rendering, gradients and fitting.
//! * [`synth`]: synthetic multi-view videos with analytic flow.
//! * [`metrics`]: warping error, PSNR and SSIM.
//! * [`pipeline`]: configuration and stage drivers used by the CLI.

pub mod attention;
pub mod ctp;
pub mod error;
pub mod flow;
pub mod frame;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod splat;
pub mod synth;
pub mod tokens;

pub use error::{AttentionError, CtpError, FlowError, GridError, IoError, MetricError, SplatError, SynthError};
pub use frame::Frame;
pub use grid::{CameraTimeGrid, Coord, SubGrid, TraversalPlan};
pub use tokens::TokenMap;

/// Any error surfaced by the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Ctp(#[from] CtpError),
    #[error(transparent)]
    Splat(#[from] SplatError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError::Io(e))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(IoError::Json(e))
    }
}
