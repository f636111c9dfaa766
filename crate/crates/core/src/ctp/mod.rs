//! Context token propagation along a traversal plan.
//!
//! Each step encodes its member frames, inherits cached tokens for frames an
//! earlier step already produced, runs the editor, and then (for steps that
//! advance in time) replaces the new frames' tokens with flow-warped tokens
//! from the preceding time step wherever the forward–backward check passes.
//! Frames are decoded once no later step contains them.

mod editor;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{CtpError, FlowError};
use crate::flow::{
    downsample_flow, fb_consistency_mask, warp_tokens, FlowField, FlowPair, Interpolation, ValidityMask,
};
use crate::frame::Frame;
use crate::grid::{CameraTimeGrid, Coord, PlanStep, StepAxis, TraversalPlan};
use crate::tokens::{PatchCodec, TokenMap};

pub use editor::{ConstantShiftEditor, FrameEditor, IdentityEditor, StackEditor, StepContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditStatus {
    Pending,
    Fused,
    Finalized,
}

/// Token cache and per-frame status for one propagation run.
#[derive(Clone, Debug, Default)]
pub struct PropagationState {
    cache: BTreeMap<Coord, TokenMap>,
    status: BTreeMap<Coord, EditStatus>,
}

impl PropagationState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cached(&self, c: Coord) -> Option<&TokenMap> {
        self.cache.get(&c)
    }

    pub fn insert(&mut self, c: Coord, tokens: TokenMap) {
        self.cache.insert(c, tokens);
        self.status.insert(c, EditStatus::Fused);
    }

    pub fn status(&self, c: Coord) -> EditStatus {
        self.status.get(&c).copied().unwrap_or(EditStatus::Pending)
    }

    /// Marks `c` finalized and hands back its tokens; the cache entry is dropped.
    fn finalize(&mut self, c: Coord) -> Option<TokenMap> {
        self.status.insert(c, EditStatus::Finalized);
        self.cache.remove(&c)
    }
}

/// Replaces the working tokens of every overlap member with the cached tokens
/// from earlier steps. Returns the inherited coordinates in member order.
pub fn full_token_inheritance(
    state: &PropagationState,
    step_index: usize,
    step: &PlanStep,
    working: &mut [TokenMap],
) -> Result<Vec<Coord>, CtpError> {
    let mut inherited = Vec::with_capacity(step.overlap.len());
    for (i, &c) in step.members().iter().enumerate() {
        if !step.is_overlap(c) {
            continue;
        }
        let cached = state.cached(c).ok_or(CtpError::MissingCache { step: step_index, coord: c })?;
        working[i] = cached.clone();
        inherited.push(c);
    }
    Ok(inherited)
}

/// `M * warp(F, prev) + (1 - M) * current`, per token cell, mask broadcast over channels.
pub fn flow_guided_replacement(
    current: &TokenMap,
    prev: &TokenMap,
    flow: &FlowField,
    mask: &ValidityMask,
    interpolation: Interpolation,
) -> Result<TokenMap, FlowError> {
    let dims = (current.h(), current.w());
    if prev.shape() != current.shape() {
        return Err(FlowError::ResolutionMismatch((prev.h(), prev.w()), dims));
    }
    if mask.dims() != dims {
        return Err(FlowError::ResolutionMismatch(mask.dims(), dims));
    }
    let (warped, _) = warp_tokens(flow, prev, interpolation)?;
    Ok(blend(mask, &warped, current))
}

fn blend(mask: &ValidityMask, warped: &TokenMap, current: &TokenMap) -> TokenMap {
    let mut out = current.clone();
    for y in 0..current.h() {
        for x in 0..current.w() {
            if mask.is_valid(y, x) {
                out.token_mut(y, x).copy_from_slice(warped.token(y, x));
            }
        }
    }
    out
}

/// Supplies pixel-level flow pairs for `(view, t -> t-1)`.
pub trait FlowSupplier {
    fn flow(&self, view: usize, t: usize) -> Option<FlowPair>;
}

/// Flows held in memory, keyed by `(view, t)`.
#[derive(Clone, Debug, Default)]
pub struct FlowTable {
    pub pairs: HashMap<(usize, usize), FlowPair>,
}

impl FlowSupplier for FlowTable {
    fn flow(&self, view: usize, t: usize) -> Option<FlowPair> {
        self.pairs.get(&(view, t)).cloned()
    }
}

/// Zero flow everywhere.
pub struct ZeroFlows {
    pub h: usize,
    pub w: usize,
}

impl FlowSupplier for ZeroFlows {
    fn flow(&self, _view: usize, _t: usize) -> Option<FlowPair> {
        Some(FlowPair::zeros(self.h, self.w, crate::flow::Resolution::Pixel))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub inheritance: bool,
    pub replacement: bool,
    pub fb_alpha: f64,
    pub fb_beta: f64,
    pub interpolation: Interpolation,
    /// Keep the post-inheritance tokens of every step in the trace.
    #[serde(skip)]
    pub record_inherited: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            inheritance: true,
            replacement: true,
            fb_alpha: 0.01,
            fb_beta: 0.5,
            interpolation: Interpolation::Bilinear,
            record_inherited: false,
        }
    }
}

impl PropagationConfig {
    /// Every sub-grid edited on its own: no inheritance, no replacement.
    pub fn independent() -> Self {
        Self { inheritance: false, replacement: false, ..Self::default() }
    }
}

/// One line of the propagation trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub anchor: (usize, usize),
    pub inherited: Vec<(usize, usize)>,
    pub replaced: Vec<(usize, usize)>,
    /// Mean valid fraction of the replacement masks; null when nothing was replaced.
    pub mask_valid_fraction: Option<f64>,
    #[serde(skip)]
    pub inherited_tokens: Vec<(Coord, TokenMap)>,
}

impl StepTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[derive(Clone, Debug)]
pub struct PropagationOutput {
    pub grid: CameraTimeGrid,
    pub trace: Vec<StepTrace>,
}

/// Non-overlap members of a temporal step, in increasing time, each paired
/// with the member one time step earlier that seeds its replacement.
pub fn replacement_region(step: &PlanStep) -> Vec<(Coord, Coord)> {
    if step.axis != StepAxis::Temporal {
        return Vec::new();
    }
    let mut region: Vec<Coord> = step.members().iter().copied().filter(|c| !step.is_overlap(*c)).collect();
    region.sort_by_key(|c| (c.t, c.v));
    region
        .into_iter()
        .filter(|c| c.t > 0 && step.subgrid.contains(Coord::new(c.v, c.t - 1)))
        .map(|c| (c, Coord::new(c.v, c.t - 1)))
        .collect()
}

/// Runs the plan over the grid and returns the decoded, edited grid.
pub fn propagate(
    grid: &CameraTimeGrid,
    plan: &TraversalPlan,
    editor: &dyn FrameEditor,
    flows: &dyn FlowSupplier,
    codec: PatchCodec,
    config: &PropagationConfig,
) -> Result<PropagationOutput, CtpError> {
    propagate_streaming(grid, plan, editor, flows, codec, config, |_, _| Ok(()))
}

/// As [`propagate`], calling `on_final` for each frame as soon as it is finalized.
pub fn propagate_streaming(
    grid: &CameraTimeGrid,
    plan: &TraversalPlan,
    editor: &dyn FrameEditor,
    flows: &dyn FlowSupplier,
    codec: PatchCodec,
    config: &PropagationConfig,
    mut on_final: impl FnMut(Coord, &Frame) -> Result<(), CtpError>,
) -> Result<PropagationOutput, CtpError> {
    if plan.views != grid.views() || plan.times != grid.times() {
        return Err(CtpError::PlanMismatch(format!(
            "plan is {}x{}, grid is {}x{}",
            plan.views,
            plan.times,
            grid.views(),
            grid.times()
        )));
    }
    let (fh, fw) = grid.frame_dims();
    let (th, tw) = codec.token_dims(fh, fw).map_err(|e| CtpError::Codec(e.to_string()))?;

    let mut state = PropagationState::new();
    let mut finals: BTreeMap<Coord, Frame> = BTreeMap::new();
    let mut trace = Vec::with_capacity(plan.len());

    for (k, step) in plan.steps.iter().enumerate() {
        for &c in step.members() {
            if !grid.contains(c) {
                return Err(CtpError::PlanMismatch(format!("step {k} member {c:?} outside grid")));
            }
        }
        let mut working = step
            .members()
            .iter()
            .map(|&c| codec.encode(grid.get(c)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CtpError::Codec(e.to_string()))?;

        let inherited = if config.inheritance {
            full_token_inheritance(&state, k, step, &mut working)?
        } else {
            Vec::new()
        };
        let inherited_tokens = if config.record_inherited {
            inherited.iter().map(|&c| (c, working[step.subgrid.member_index(c).unwrap()].clone())).collect()
        } else {
            Vec::new()
        };

        let ctx = StepContext { index: k, anchor: step.anchor(), members: step.members() };
        let mut out = editor
            .edit(&ctx, working.clone())
            .map_err(|message| CtpError::EditorFailure { step: k, message })?;
        if out.len() != 4 || out.iter().zip(&working).any(|(a, b)| a.shape() != b.shape()) {
            return Err(CtpError::EditorFailure { step: k, message: "editor changed member count or shape".into() });
        }
        // inherited frames are context only; their tokens stay as cached
        for &c in &inherited {
            let i = step.subgrid.member_index(c).unwrap();
            out[i] = working[i].clone();
        }

        let mut replaced = Vec::new();
        let mut fractions = Vec::new();
        if config.replacement {
            for (target, source) in replacement_region(step) {
                let pair = flows
                    .flow(target.v, target.t)
                    .ok_or(CtpError::MissingFlow { step: k, anchor: step.anchor(), view: target.v, time: target.t })?;
                let fwd = downsample_flow(&pair.forward, th, tw).map_err(|source| CtpError::Flow { step: k, source })?;
                let bwd =
                    downsample_flow(&pair.backward, th, tw).map_err(|source| CtpError::Flow { step: k, source })?;
                let fb = fb_consistency_mask(&fwd, &bwd, config.fb_alpha, config.fb_beta)
                    .map_err(|source| CtpError::Flow { step: k, source })?;
                let si = step.subgrid.member_index(source).unwrap();
                let ti = step.subgrid.member_index(target).unwrap();
                let (warped, inside) =
                    warp_tokens(&fwd, &out[si], config.interpolation).map_err(|source| CtpError::Flow { step: k, source })?;
                let mask = fb.intersect(&inside);
                fractions.push(mask.valid_fraction());
                out[ti] = blend(&mask, &warped, &out[ti]);
                replaced.push(target);
            }
        }

        // overlap frames keep the tokens of the step that first produced them;
        // inheritance only decides whether those tokens were the step's context
        for (i, &c) in step.members().iter().enumerate() {
            if !step.is_overlap(c) {
                state.insert(c, out[i].clone());
            }
        }
        for &c in step.members() {
            if plan.last_use(c) == Some(k) {
                let tokens = state.finalize(c).ok_or(CtpError::Unfinished(c))?;
                let frame = codec.decode(&tokens).map_err(|e| CtpError::Codec(e.to_string()))?;
                on_final(c, &frame)?;
                finals.insert(c, frame);
            }
        }

        let st = StepTrace {
            step: k,
            anchor: (step.anchor().v, step.anchor().t),
            inherited: inherited.iter().map(|c| (c.v, c.t)).collect(),
            replaced: replaced.iter().map(|c| (c.v, c.t)).collect(),
            mask_valid_fraction: if fractions.is_empty() {
                None
            } else {
                Some(fractions.iter().sum::<f64>() / fractions.len() as f64)
            },
            inherited_tokens,
        };
        tracing::debug!(step = k, anchor = ?st.anchor, replaced = st.replaced.len(), "propagation step");
        trace.push(st);
    }

    let mut tagged = Vec::with_capacity(grid.views() * grid.times());
    for c in grid.coords() {
        let f = finals.remove(&c).ok_or(CtpError::Unfinished(c))?;
        tagged.push((c.v, c.t, f));
    }
    let out = CameraTimeGrid::build(tagged, grid.views(), grid.times()).map_err(|e| CtpError::PlanMismatch(e.to_string()))?;
    Ok(PropagationOutput { grid: out, trace })
}
