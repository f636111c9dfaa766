use thiserror::Error;

use crate::grid::Coord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image {0}: {1}")]
    Image(String, String),
    #[error("format: {0}")]
    Format(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("grid cell ({v}, {t}) is missing")]
    MissingCell { v: usize, t: usize },
    #[error("grid cell ({v}, {t}) given more than once")]
    DuplicateCell { v: usize, t: usize },
    #[error("grid cell ({v}, {t}) outside {views}x{times} grid")]
    CellOutOfRange { v: usize, t: usize, views: usize, times: usize },
    #[error("frame dimensions {found:?} differ from {expected:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("sub-grid anchored at ({v}, {t}) exceeds {views}x{times} grid")]
    OutOfBounds { v: usize, t: usize, views: usize, times: usize },
    #[error("degenerate grid {views}x{times}: need at least 2 views and 2 times")]
    DegenerateGrid { views: usize, times: usize },
    #[error("monocular traversal needs at least 4 frames, got {0}")]
    TooFewFrames(usize),
    #[error("unsupported stride {0}; monocular traversal uses stride 2")]
    UnsupportedStride(usize),
    #[error("grid must have at least one view and two times, got {views}x{times}")]
    InvalidShape { views: usize, times: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite attention logit")]
    NonFiniteLogit,
    #[error("invalid layer range [{start}, {end})")]
    InvalidLayerRange { start: usize, end: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("frame sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("resolution mismatch: {0:?} vs {1:?}")]
    ResolutionMismatch((usize, usize), (usize, usize)),
    #[error("cannot downsample {from:?} to {to:?}")]
    DegenerateTarget { from: (usize, usize), to: (usize, usize) },
    #[error("block-matching patch must be odd, got {0}")]
    EvenPatch(usize),
}

#[derive(Debug, Error)]
pub enum CtpError {
    #[error("step {step}: frame {coord:?} is in the overlap but has no cached tokens")]
    MissingCache { step: usize, coord: Coord },
    #[error("step {step} (anchor {anchor:?}): no flow for view {view}, time {time} -> {prev}", prev = time - 1)]
    MissingFlow { step: usize, anchor: Coord, view: usize, time: usize },
    #[error("step {step}: editor failed: {message}")]
    EditorFailure { step: usize, message: String },
    #[error("step {step}: {source}")]
    Flow { step: usize, source: FlowError },
    #[error("plan does not match grid: {0}")]
    PlanMismatch(String),
    #[error("token codec: {0}")]
    Codec(String),
    #[error("frame {0:?} was never produced by any step")]
    Unfinished(Coord),
}

#[derive(Debug, Error, PartialEq)]
pub enum SplatError {
    #[error("loss diverged at iteration {iteration}")]
    DivergenceDetected { iteration: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scene file: {0}")]
    Scene(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    SpecError(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("alignment: {0}")]
    AlignmentError(String),
}
