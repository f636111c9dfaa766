//! Run configuration and stage drivers: synth, edit, optimize, render, evaluate.
//!
//! A run directory holds:
//!
//! ```text
//! config.json            resolved configuration
//! input/                 synthesized input (full runs with a scene spec only)
//! edited/                edited frames + manifest.json
//! trace.jsonl            one line per plan step
//! scene.json, loss.csv   fitted Gaussian scene and its loss curve
//! render/                frames rendered from scene.json
//! metrics.json           evaluation report
//! ```

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{random_stack, LayerRange, RopeSpec, TextTokens};
use crate::ctp::{
    propagate, ConstantShiftEditor, FlowTable, FrameEditor, IdentityEditor, PropagationConfig, StackEditor, StepTrace,
};
use crate::flow::{estimate_flow_block_matching, fb_consistency_mask, FlowField, FlowPair, Resolution, ValidityMask};
use crate::frame::Frame;
use crate::grid::{
    asymmetric_traversal, monocular_traversal, resolve, write_grid_png, CameraTimeGrid, Coord, GridManifest,
    TraversalPlan,
};
use crate::metrics::{boundary_warping_error, fidelity_reports, warping_error, MetricReport, PairInputs};
use crate::splat::{self, load_scene, normalized_time, save_scene, GaussianScene, OptimizerConfig, Target};
use crate::synth::{generate, SceneSpec};
use crate::tokens::PatchCodec;
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraversalMode {
    #[default]
    Multiview,
    /// Every view is edited as its own single-row video.
    Monocular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditorConfig {
    Identity,
    ConstantShift {
        #[serde(default = "default_shift")]
        base: f32,
        #[serde(default)]
        jitter: f32,
    },
    MockStack {
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default = "default_heads")]
        heads: usize,
        /// Defaults to the first half of the stack.
        #[serde(default)]
        vital: Option<LayerRange>,
        #[serde(default = "default_strength")]
        strength: f32,
        #[serde(default = "default_text_len")]
        text_len: usize,
    },
}

fn default_shift() -> f32 {
    0.05
}
fn default_depth() -> usize {
    4
}
fn default_heads() -> usize {
    2
}
fn default_strength() -> f32 {
    0.5
}
fn default_text_len() -> usize {
    4
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig::ConstantShift { base: default_shift(), jitter: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    /// Manifest flows when present, block matching otherwise.
    #[default]
    Auto,
    Manifest,
    Estimate,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub source: FlowSource,
    pub patch: usize,
    pub radius: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { source: FlowSource::Auto, patch: 7, radius: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplatConfig {
    /// View whose edited frames the scene is fitted to.
    pub view: usize,
    /// Initial Gaussians form a `per_side x per_side` lattice.
    pub gaussians_per_side: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self { view: 0, gaussians_per_side: 6, optimizer: OptimizerConfig { iterations: 300, ..Default::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Grid manifest to edit. Ignored when `scene` is set.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    /// Synthesize the input into `output/input` first.
    pub scene: Option<SceneSpec>,
    pub traversal: TraversalMode,
    pub monocular_stride: usize,
    pub editor: EditorConfig,
    pub propagation: PropagationConfig,
    pub patch: usize,
    pub flow: FlowConfig,
    pub splat: SplatConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::from("run"),
            scene: None,
            traversal: TraversalMode::Multiview,
            monocular_stride: 2,
            editor: EditorConfig::default(),
            propagation: PropagationConfig::default(),
            patch: 2,
            flow: FlowConfig::default(),
            splat: SplatConfig::default(),
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.output.as_os_str().is_empty() {
            return Err(invalid("output directory is empty"));
        }
        if let Some(spec) = &self.scene {
            spec.validate()?;
        }
        if self.patch == 0 {
            return Err(invalid("patch must be positive"));
        }
        if self.monocular_stride != 2 {
            return Err(invalid(format!("monocular_stride {} unsupported (only 2)", self.monocular_stride)));
        }
        let p = &self.propagation;
        if !(p.fb_alpha.is_finite() && p.fb_alpha >= 0.0 && p.fb_beta.is_finite() && p.fb_beta >= 0.0) {
            return Err(invalid("fb_alpha and fb_beta must be finite and non-negative"));
        }
        if self.flow.patch == 0 || self.flow.patch % 2 == 0 {
            return Err(invalid("flow patch must be odd"));
        }
        match &self.editor {
            EditorConfig::Identity => {}
            EditorConfig::ConstantShift { base, jitter } => {
                if !(base.is_finite() && jitter.is_finite() && *jitter >= 0.0) {
                    return Err(invalid("constant_shift needs finite base and non-negative jitter"));
                }
            }
            EditorConfig::MockStack { depth, heads, vital, strength, .. } => {
                if *depth == 0 || *heads == 0 {
                    return Err(invalid("mock_stack needs depth and heads >= 1"));
                }
                let d = PatchCodec::new(self.patch).token_dim();
                if d % heads != 0 || (d / heads) % 2 != 0 {
                    return Err(invalid(format!("token width {d} must split into {heads} even-width heads")));
                }
                if let Some(v) = vital {
                    LayerRange::new(v.start, v.end)?;
                }
                if !strength.is_finite() {
                    return Err(invalid("mock_stack strength must be finite"));
                }
            }
        }
        if self.splat.gaussians_per_side == 0 {
            return Err(invalid("gaussians_per_side must be positive"));
        }
        self.splat.optimizer.validate()?;
        Ok(())
    }

    pub fn input_manifest(&self) -> Result<PathBuf, Error> {
        if self.scene.is_some() {
            return Ok(self.output.join("input").join("manifest.json"));
        }
        self.input.clone().ok_or_else(|| invalid("no input manifest and no scene to synthesize"))
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn build_editor(&self) -> Result<Box<dyn FrameEditor>, Error> {
        Ok(match &self.editor {
            EditorConfig::Identity => Box::new(IdentityEditor),
            EditorConfig::ConstantShift { base, jitter } => {
                Box::new(ConstantShiftEditor { base: *base, jitter: *jitter, seed: self.seed })
            }
            EditorConfig::MockStack { depth, heads, vital, strength, text_len } => {
                let d = PatchCodec::new(self.patch).token_dim();
                let d_k = d / heads;
                Box::new(StackEditor {
                    layers: random_stack(*depth, *heads, d_k, self.seed),
                    text: TextTokens::random(*text_len, d, self.seed ^ 0x7e47),
                    depth: *depth,
                    vital: vital.unwrap_or_else(|| LayerRange::default_for(*depth)),
                    rope: RopeSpec::for_head_dim(d_k)?,
                    strength: *strength,
                })
            }
        })
    }
}

/// An input grid with its base directory and manifest.
pub struct LoadedGrid {
    pub base: PathBuf,
    pub manifest: GridManifest,
    pub grid: CameraTimeGrid,
}

pub fn load_grid(manifest_path: &Path) -> Result<LoadedGrid, Error> {
    let manifest = GridManifest::read(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let grid = manifest.load_grid(&base)?;
    Ok(LoadedGrid { base, manifest, grid })
}

/// Flow pairs for every `(v, t)` with `t >= 1`, from `source`.
pub fn resolve_flows(input: &LoadedGrid, cfg: &FlowConfig) -> Result<BTreeMap<Coord, FlowPair>, Error> {
    let grid = &input.grid;
    let (h, w) = grid.frame_dims();
    let targets: Vec<Coord> = (0..grid.views()).flat_map(|v| (1..grid.times()).map(move |t| Coord::new(v, t))).collect();
    let use_manifest = match cfg.source {
        FlowSource::Manifest => {
            if input.manifest.flows.is_empty() {
                return Err(invalid("flow source is manifest but the manifest lists no flows"));
            }
            true
        }
        FlowSource::Auto => !input.manifest.flows.is_empty(),
        _ => false,
    };
    let mut out = BTreeMap::new();
    if use_manifest {
        for e in &input.manifest.flows {
            let forward = FlowField::load(&resolve(&input.base, &e.forward), Resolution::Pixel)?;
            let backward = FlowField::load(&resolve(&input.base, &e.backward), Resolution::Pixel)?;
            out.insert(Coord::new(e.v, e.t), FlowPair { forward, backward });
        }
        if let Some(c) = targets.iter().find(|c| !out.contains_key(c)) {
            return Err(invalid(format!("manifest has no flow for view {} time {}", c.v, c.t)));
        }
        return Ok(out);
    }
    if cfg.source == FlowSource::Zero {
        return Ok(targets.into_iter().map(|c| (c, FlowPair::zeros(h, w, Resolution::Pixel))).collect());
    }
    let est: Result<Vec<(Coord, FlowPair)>, Error> = targets
        .par_iter()
        .map(|&c| {
            let (prev, cur) = (grid.get(Coord::new(c.v, c.t - 1)), grid.get(c));
            let forward = estimate_flow_block_matching(prev, cur, cfg.patch, cfg.radius)?;
            let backward = estimate_flow_block_matching(cur, prev, cfg.patch, cfg.radius)?;
            Ok((c, FlowPair { forward, backward }))
        })
        .collect();
    Ok(est?.into_iter().collect())
}

/// Validity masks: manifest masks when present, forward–backward masks otherwise.
pub fn resolve_masks(
    input: &LoadedGrid,
    flows: &BTreeMap<Coord, FlowPair>,
    prop: &PropagationConfig,
) -> Result<BTreeMap<Coord, ValidityMask>, Error> {
    let mut out = BTreeMap::new();
    for e in &input.manifest.masks {
        out.insert(Coord::new(e.v, e.t), ValidityMask::load(&resolve(&input.base, &e.path))?);
    }
    for (c, pair) in flows {
        if !out.contains_key(c) {
            out.insert(*c, fb_consistency_mask(&pair.forward, &pair.backward, prop.fb_alpha, prop.fb_beta)?);
        }
    }
    Ok(out)
}

fn plan_for(cfg: &PipelineConfig, views: usize, times: usize) -> Result<TraversalPlan, Error> {
    Ok(match cfg.traversal {
        TraversalMode::Multiview => asymmetric_traversal(views, times)?,
        TraversalMode::Monocular => monocular_traversal(times, cfg.monocular_stride)?,
    })
}

fn single_view(grid: &CameraTimeGrid, v: usize) -> Result<CameraTimeGrid, Error> {
    let cells = grid.view_sequence(v).iter().enumerate().map(|(t, f)| (0, t, f.clone())).collect::<Vec<_>>();
    Ok(CameraTimeGrid::build(cells, 1, grid.times())?)
}

fn remap_view(trace: &mut StepTrace, v: usize) {
    trace.anchor.0 = v;
    trace.inherited.iter_mut().for_each(|c| c.0 = v);
    trace.replaced.iter_mut().for_each(|c| c.0 = v);
}

pub struct EditOutcome {
    pub grid: CameraTimeGrid,
    pub trace: Vec<StepTrace>,
}

/// Runs propagation over `input` with the configured editor and flows.
pub fn edit_grid(
    cfg: &PipelineConfig,
    grid: &CameraTimeGrid,
    flows: &BTreeMap<Coord, FlowPair>,
) -> Result<EditOutcome, Error> {
    let editor = cfg.build_editor()?;
    let codec = PatchCodec::new(cfg.patch);
    match cfg.traversal {
        TraversalMode::Multiview => {
            let plan = plan_for(cfg, grid.views(), grid.times())?;
            let table = FlowTable { pairs: flows.iter().map(|(c, p)| ((c.v, c.t), p.clone())).collect() };
            let out = propagate(grid, &plan, editor.as_ref(), &table, codec, &cfg.propagation)?;
            Ok(EditOutcome { grid: out.grid, trace: out.trace })
        }
        TraversalMode::Monocular => {
            let plan = plan_for(cfg, 1, grid.times())?;
            let mut frames = Vec::new();
            let mut trace = Vec::new();
            for v in 0..grid.views() {
                let row = single_view(grid, v)?;
                let table = FlowTable {
                    pairs: flows.iter().filter(|(c, _)| c.v == v).map(|(c, p)| ((0, c.t), p.clone())).collect(),
                };
                let out = propagate(&row, &plan, editor.as_ref(), &table, codec, &cfg.propagation)?;
                for (t, f) in out.grid.view_sequence(0).iter().enumerate() {
                    frames.push((v, t, f.clone()));
                }
                for mut s in out.trace {
                    remap_view(&mut s, v);
                    trace.push(s);
                }
            }
            Ok(EditOutcome { grid: CameraTimeGrid::build(frames, grid.views(), grid.times())?, trace })
        }
    }
}

/// Generates `spec` and writes it under `dir`.
pub fn cmd_synth(spec: &SceneSpec, dir: &Path) -> Result<GridManifest, Error> {
    let scene = generate(spec)?;
    scene.write(dir)
}

#[derive(Clone, Debug, Serialize)]
pub struct EditSummary {
    pub steps: usize,
    pub frames: usize,
}

pub fn cmd_edit(cfg: &PipelineConfig) -> Result<EditSummary, Error> {
    cfg.write(&cfg.output)?;
    let input = load_grid(&cfg.input_manifest()?)?;
    let flows = resolve_flows(&input, &cfg.flow)?;
    let out = edit_grid(cfg, &input.grid, &flows)?;
    write_grid_png(&out.grid, &cfg.output.join("edited"))?.write(&cfg.output.join("edited").join("manifest.json"))?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("trace.jsonl"))?);
    for s in &out.trace {
        writeln!(log, "{}", s.to_json_line())?;
    }
    log.flush()?;
    tracing::info!(steps = out.trace.len(), "edit finished");
    Ok(EditSummary { steps: out.trace.len(), frames: out.grid.views() * out.grid.times() })
}

fn edited_grid(cfg: &PipelineConfig) -> Result<LoadedGrid, Error> {
    load_grid(&cfg.output.join("edited").join("manifest.json"))
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeSummary {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn cmd_optimize(cfg: &PipelineConfig) -> Result<OptimizeSummary, Error> {
    let edited = edited_grid(cfg)?;
    let grid = &edited.grid;
    let v = cfg.splat.view;
    if v >= grid.views() {
        return Err(invalid(format!("splat view {v} but the grid has {} views", grid.views())));
    }
    let frames = grid.view_sequence(v);
    let times = grid.times();
    let targets: Vec<Target> =
        frames.iter().enumerate().map(|(t, f)| Target { t: normalized_time(t, times), frame: f }).collect();
    let init = GaussianScene::from_frame(&frames[0], cfg.splat.gaussians_per_side, cfg.seed);
    let out = splat::optimize(&init, &targets, &cfg.splat.optimizer)?;
    save_scene(&out.scene, &cfg.output.join("scene.json"))?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:e}\n"));
    }
    std::fs::write(cfg.output.join("loss.csv"), csv)?;
    tracing::info!(final_loss = out.losses.last().copied(), "optimize finished");
    Ok(OptimizeSummary {
        iterations: cfg.splat.optimizer.iterations,
        initial_loss: out.losses[0],
        final_loss: *out.losses.last().expect("losses"),
    })
}

/// Renders `times` evenly spaced frames of a scene file into `dir`.
pub fn cmd_render(scene_path: &Path, times: usize, dir: &Path) -> Result<Vec<PathBuf>, Error> {
    if times == 0 {
        return Err(invalid("render needs at least one time"));
    }
    let scene = load_scene(scene_path)?;
    std::fs::create_dir_all(dir)?;
    let frames: Vec<Frame> =
        (0..times).into_par_iter().map(|t| splat::render_scene(&scene, normalized_time(t, times))).collect();
    let mut paths = Vec::with_capacity(times);
    for (t, f) in frames.iter().enumerate() {
        let p = dir.join(format!("frame_t{t}.png"));
        f.write_png(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Metric report; perceptual fields are reserved and always null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub warp_error_local: MetricReport,
    /// Null when the plan has no boundary pairs.
    pub warp_error_global: Option<MetricReport>,
    /// Scene renders against the edited frames of the fitted view.
    pub psnr: Option<MetricReport>,
    pub ssim: Option<MetricReport>,
    pub lpips: Option<MetricReport>,
    pub clip: Option<MetricReport>,
    pub met3r: Option<MetricReport>,
}

/// Warping errors of `grid` under input-derived flows and masks.
pub fn consistency_reports(
    cfg: &PipelineConfig,
    grid: &CameraTimeGrid,
    flows: &BTreeMap<Coord, FlowPair>,
    masks: &BTreeMap<Coord, ValidityMask>,
) -> Result<(MetricReport, Option<MetricReport>), Error> {
    let pairs: PairInputs = flows.iter().map(|(c, p)| (*c, (p.forward.clone(), masks[c].clone()))).collect();
    let local = warping_error(grid, &pairs)?;
    let global = match cfg.traversal {
        TraversalMode::Multiview => boundary_warping_error(&plan_for(cfg, grid.views(), grid.times())?, grid, &pairs)?,
        TraversalMode::Monocular => {
            let plan = plan_for(cfg, 1, grid.times())?;
            let mut per_frame = Vec::new();
            for v in 0..grid.views() {
                let row = single_view(grid, v)?;
                let row_pairs: PairInputs =
                    pairs.iter().filter(|(c, _)| c.v == v).map(|(c, p)| (Coord::new(0, c.t), p.clone())).collect();
                if let Some(r) = boundary_warping_error(&plan, &row, &row_pairs)? {
                    per_frame.extend(r.per_frame.into_iter().map(|mut f| {
                        f.v = v;
                        f
                    }));
                }
            }
            (!per_frame.is_empty()).then(|| {
                let mean = per_frame.iter().map(|f| f.value.get()).sum::<f64>() / per_frame.len() as f64;
                MetricReport {
                    metric: "warp_error_global".into(),
                    value: crate::metrics::MetricValue::of(mean),
                    scale: local.scale.clone(),
                    per_frame,
                }
            })
        }
    };
    Ok((local, global))
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluationReport, Error> {
    let input = load_grid(&cfg.input_manifest()?)?;
    let edited = edited_grid(cfg)?;
    if edited.grid.views() != input.grid.views() || edited.grid.times() != input.grid.times() {
        return Err(crate::MetricError::AlignmentError("edited grid does not match the input grid".into()).into());
    }
    let flows = resolve_flows(&input, &cfg.flow)?;
    let masks = resolve_masks(&input, &flows, &cfg.propagation)?;
    let (local, global) = consistency_reports(cfg, &edited.grid, &flows, &masks)?;

    let scene_path = cfg.output.join("scene.json");
    let (psnr, ssim) = if scene_path.exists() {
        let scene = load_scene(&scene_path)?;
        let v = cfg.splat.view.min(edited.grid.views() - 1);
        let times = edited.grid.times();
        let renders: Vec<Frame> = (0..times).map(|t| splat::render_scene(&scene, normalized_time(t, times))).collect();
        let pairs: Vec<(Coord, &Frame, &Frame)> = renders
            .iter()
            .enumerate()
            .map(|(t, r)| (Coord::new(v, t), r, edited.grid.get(Coord::new(v, t))))
            .collect();
        let (p, s) = fidelity_reports(&pairs)?;
        (Some(p), Some(s))
    } else {
        (None, None)
    };
    let report = EvaluationReport {
        warp_error_local: local,
        warp_error_global: global,
        psnr,
        ssim,
        lpips: None,
        clip: None,
        met3r: None,
    };
    std::fs::write(cfg.output.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// synth (when a scene spec is given) -> edit -> optimize -> render -> evaluate.
pub fn run_all(cfg: &PipelineConfig) -> Result<EvaluationReport, Error> {
    cfg.validate()?;
    cfg.write(&cfg.output)?;
    if let Some(spec) = &cfg.scene {
        cmd_synth(spec, &cfg.output.join("input"))?;
    }
    cmd_edit(cfg)?;
    cmd_optimize(cfg)?;
    let times = edited_grid(cfg)?.grid.times();
    cmd_render(&cfg.output.join("scene.json"), times, &cfg.output.join("render"))?;
    cmd_evaluate(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_cfg(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            output: dir.to_path_buf(),
            scene: Some(SceneSpec::static_scene(2, 3, 8, 8, 1)),
            editor: EditorConfig::Identity,
            splat: SplatConfig {
                gaussians_per_side: 2,
                optimizer: OptimizerConfig { iterations: 5, ..Default::default() },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
        let minimal = PipelineConfig::from_json(r#"{"output":"x","editor":{"kind":"mock_stack"}}"#).unwrap();
        assert_eq!(minimal.editor, EditorConfig::MockStack { depth: 4, heads: 2, vital: None, strength: 0.5, text_len: 4 });
    }

    #[test]
    fn invalid_configs_fail_validation() {
        for text in [
            r#"{"patch":0}"#,
            r#"{"flow":{"patch":4}}"#,
            r#"{"editor":{"kind":"mock_stack","heads":5}}"#,
            r#"{"editor":{"kind":"mock_stack","vital":{"start":3,"end":3}}}"#,
            r#"{"splat":{"optimizer":{"iterations":0}}}"#,
            r#"{"propagation":{"fb_alpha":-1}}"#,
            r#"{"unknown":1}"#,
            r#"{"monocular_stride":3}"#,
            r#"{"scene":{"views":0,"times":2,"height":4,"width":4}}"#,
        ] {
            assert!(matches!(PipelineConfig::from_json(text), Err(Error::Config(_)) | Err(Error::Synth(_)) | Err(Error::Splat(_)) | Err(Error::Attention(_))), "{text}");
        }
    }

    #[test]
    fn identity_edit_keeps_frames_and_static_scene_scores_zero() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = static_cfg(dir.path());
        let report = run_all(&cfg).unwrap();
        for v in 0..2 {
            for t in 0..3 {
                let name = format!("frame_v{v}_t{t}.png");
                let a = std::fs::read(dir.path().join("input").join(&name)).unwrap();
                let b = std::fs::read(dir.path().join("edited").join(&name)).unwrap();
                assert_eq!(a, b, "{name}");
            }
        }
        assert_eq!(report.warp_error_local.value(), 0.0);
        assert_eq!(report.warp_error_global.as_ref().unwrap().value(), 0.0);
        assert!(report.psnr.is_some());
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert!(json["lpips"].is_null());
        let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
        assert_eq!(trace.lines().count(), 2);
        assert!(dir.path().join("render").join("frame_t2.png").exists());
        let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 1 + 6);
    }

    #[test]
    fn monocular_mode_edits_each_view() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = static_cfg(dir.path());
        cfg.scene = Some(SceneSpec::random(2, 5, 8, 8, 1, 1.0, 3));
        cfg.traversal = TraversalMode::Monocular;
        cfg.editor = EditorConfig::ConstantShift { base: 0.1, jitter: 0.0 };
        let report = run_all(&cfg).unwrap();
        let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
        // T = 5: the window at 0, then the tail window at 1, for each view
        let anchors: Vec<String> = trace
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["anchor"].to_string())
            .collect();
        assert_eq!(anchors, ["[0,0]", "[0,1]", "[1,0]", "[1,1]"]);
        assert!(report.warp_error_global.is_some());
    }

    #[test]
    fn missing_input_is_a_config_error() {
        let cfg = PipelineConfig { output: PathBuf::from("/nonexistent/out"), ..Default::default() };
        assert!(matches!(cfg.input_manifest(), Err(Error::Config(_))));
    }
}
