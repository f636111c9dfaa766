//! Synthetic multi-view scenes with closed-form optical flow.
//!
//! A static procedural background is overlaid with hard-edged sprites
//! (textured rectangles and radially shaded discs) that translate over time.
//! Views see the same planar scene shifted horizontally by `v * disparity`.
//! Every pixel belongs to exactly one object, so flows and occlusion follow
//! directly from object identity.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctp::{FlowSupplier, FlowTable};
use crate::error::SynthError;
use crate::flow::{FlowField, FlowPair, Resolution, ValidityMask};
use crate::frame::Frame;
use crate::grid::{write_grid_png, CameraTimeGrid, Coord, FlowEntry, GridManifest, MaskEntry};
use crate::metrics::PairInputs;
use crate::rng;

/// Largest per-frame displacement allowed on either axis (the default
/// block-matching search radius).
pub const MAX_MOTION: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub views: usize,
    pub times: usize,
    pub height: usize,
    pub width: usize,
    /// Horizontal shift in px between neighbouring views.
    #[serde(default)]
    pub disparity: f32,
    #[serde(default)]
    pub sprites: Vec<SpriteSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpriteSpec {
    pub shape: Shape,
    /// Position `[x, y]` at `t = 0`.
    pub center: [f32; 2],
    #[serde(default)]
    pub motion: Motion,
    pub color: [f32; 3],
    /// Relative texture amplitude.
    #[serde(default = "default_texture")]
    pub texture: f32,
}

fn default_texture() -> f32 {
    0.15
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { half_width: f32, half_height: f32 },
    Disc { radius: f32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Static,
    /// `[dx, dy]` px per frame.
    Linear { velocity: [f32; 2] },
    /// `amplitude * sin(2 pi t / period + phase)` per axis.
    Sinusoidal { amplitude: [f32; 2], period: f32, phase: f32 },
}

impl Motion {
    pub fn offset(&self, t: usize) -> [f64; 2] {
        let t = t as f64;
        match *self {
            Motion::Static => [0.0, 0.0],
            Motion::Linear { velocity } => [velocity[0] as f64 * t, velocity[1] as f64 * t],
            Motion::Sinusoidal { amplitude, period, phase } => {
                let s = (std::f64::consts::TAU * t / period as f64 + phase as f64).sin();
                [amplitude[0] as f64 * s, amplitude[1] as f64 * s]
            }
        }
    }
}

impl SceneSpec {
    /// No sprites: every view is a constant sequence.
    pub fn static_scene(views: usize, times: usize, height: usize, width: usize, seed: u64) -> Self {
        Self { views, times, height, width, disparity: 1.0, sprites: vec![], seed }
    }

    /// `count` random sprites moving linearly with speed up to `max_speed` px/frame.
    pub fn random(
        views: usize,
        times: usize,
        height: usize,
        width: usize,
        count: usize,
        max_speed: f32,
        seed: u64,
    ) -> Self {
        use rand::Rng;
        let mut r = rng::derived(seed, 0x5eed);
        let sprites = (0..count)
            .map(|i| {
                let size = (height.min(width) as f32 / 6.0).max(2.0);
                let shape = if i % 2 == 0 {
                    Shape::Rect { half_width: r.gen_range(size * 0.6..size), half_height: r.gen_range(size * 0.6..size) }
                } else {
                    Shape::Disc { radius: r.gen_range(size * 0.6..size) }
                };
                SpriteSpec {
                    shape,
                    center: [r.gen_range(0.2..0.8) * width as f32, r.gen_range(0.2..0.8) * height as f32],
                    motion: Motion::Linear {
                        velocity: [r.gen_range(-max_speed..=max_speed), r.gen_range(-max_speed..=max_speed)],
                    },
                    color: [r.gen_range(0.2..0.8), r.gen_range(0.2..0.8), r.gen_range(0.2..0.8)],
                    texture: default_texture(),
                }
            })
            .collect();
        Self { views, times, height, width, disparity: 1.0, sprites, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::SpecError(m));
        if self.views == 0 || self.times < 2 || self.height == 0 || self.width == 0 {
            return bad(format!("empty extent {}x{} frames of {}x{}", self.views, self.times, self.height, self.width));
        }
        if !self.disparity.is_finite() || self.disparity.abs() as f64 > MAX_MOTION {
            return bad(format!("disparity {} outside [-{MAX_MOTION}, {MAX_MOTION}]", self.disparity));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            let size_ok = match s.shape {
                Shape::Rect { half_width, half_height } => half_width > 0.0 && half_height > 0.0,
                Shape::Disc { radius } => radius > 0.0,
            };
            if !size_ok {
                return bad(format!("sprite {i}: non-positive size"));
            }
            if !s.center.iter().all(|v| v.is_finite()) || !(0.0..=0.5).contains(&s.texture) {
                return bad(format!("sprite {i}: bad center or texture"));
            }
            if !s.color.iter().all(|c| (0.0..=1.0).contains(c)) {
                return bad(format!("sprite {i}: color outside [0, 1]"));
            }
            if let Motion::Sinusoidal { period, .. } = s.motion {
                if !(period > 0.0) {
                    return bad(format!("sprite {i}: period must be positive"));
                }
            }
            for t in 1..self.times {
                let (a, b) = (s.motion.offset(t - 1), s.motion.offset(t));
                let step = (b[0] - a[0]).abs().max((b[1] - a[1]).abs());
                if !step.is_finite() || step > MAX_MOTION {
                    return bad(format!("sprite {i}: moves {step:.2} px between t={} and t={t}", t - 1));
                }
            }
        }
        Ok(())
    }
}

/// Seeded appearance parameters that are not part of the spec.
struct Appearance {
    /// Per channel: `(amplitude, kx, ky, phase)` terms.
    background: [[(f64, f64, f64, f64); 3]; 3],
    /// Per sprite: `(k, phase_u, phase_v)`.
    sprite_tex: Vec<(f64, f64, f64)>,
}

impl Appearance {
    fn new(spec: &SceneSpec) -> Self {
        use rand::Rng;
        let mut r = rng::derived(spec.seed, 0xb6);
        let mut background = [[(0.0, 0.0, 0.0, 0.0); 3]; 3];
        for ch in background.iter_mut() {
            for term in ch.iter_mut() {
                *term = (
                    r.gen_range(0.03..0.08),
                    r.gen_range(-0.3..0.3),
                    r.gen_range(-0.3..0.3),
                    r.gen_range(0.0..std::f64::consts::TAU),
                );
            }
        }
        let sprite_tex = spec
            .sprites
            .iter()
            .map(|_| (r.gen_range(0.15..0.4), r.gen_range(0.0..std::f64::consts::TAU), r.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        Self { background, sprite_tex }
    }
}

/// Generated scene: frames, analytic flow pairs and validity masks for
/// every `(v, t)` with `t >= 1`. A pixel of frame `t` is valid when its
/// source point lies in the lattice hull and every bilinear tap with nonzero
/// weight shows the same object in frame `t-1`.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub spec: SceneSpec,
    pub grid: CameraTimeGrid,
    pub flows: BTreeMap<Coord, FlowPair>,
    pub valid: BTreeMap<Coord, ValidityMask>,
}

struct Renderer<'a> {
    spec: &'a SceneSpec,
    look: Appearance,
}

impl Renderer<'_> {
    fn center(&self, i: usize, t: usize) -> [f64; 2] {
        let s = &self.spec.sprites[i];
        let o = s.motion.offset(t);
        [s.center[0] as f64 + o[0], s.center[1] as f64 + o[1]]
    }

    /// Object id at world point (0 = background, `i + 1` = sprite `i`); top sprite wins.
    fn object_at(&self, wx: f64, wy: f64, t: usize) -> usize {
        for i in (0..self.spec.sprites.len()).rev() {
            let [cx, cy] = self.center(i, t);
            let (u, v) = (wx - cx, wy - cy);
            let inside = match self.spec.sprites[i].shape {
                Shape::Rect { half_width, half_height } => u.abs() < half_width as f64 && v.abs() < half_height as f64,
                Shape::Disc { radius } => u * u + v * v < (radius as f64).powi(2),
            };
            if inside {
                return i + 1;
            }
        }
        0
    }

    fn world(&self, v: usize, x: usize, y: usize) -> (f64, f64) {
        (x as f64 + v as f64 * self.spec.disparity as f64, y as f64)
    }

    fn id_map(&self, v: usize, t: usize) -> Vec<usize> {
        let (h, w) = (self.spec.height, self.spec.width);
        (0..h * w)
            .map(|i| {
                let (wx, wy) = self.world(v, i % w, i / w);
                self.object_at(wx, wy, t)
            })
            .collect()
    }

    fn shade(&self, id: usize, wx: f64, wy: f64, t: usize) -> [f32; 3] {
        if id == 0 {
            let mut out = [0.0f32; 3];
            for (o, terms) in out.iter_mut().zip(&self.look.background) {
                let v: f64 = terms.iter().map(|&(a, kx, ky, ph)| a * (kx * wx + ky * wy + ph).sin()).sum();
                *o = (0.5 + v) as f32;
            }
            return out;
        }
        let i = id - 1;
        let s = &self.spec.sprites[i];
        let [cx, cy] = self.center(i, t);
        let (u, v) = (wx - cx, wy - cy);
        let factor = match s.shape {
            Shape::Rect { .. } => {
                let (k, pu, pv) = self.look.sprite_tex[i];
                1.0 + s.texture as f64 * (k * u + pu).sin() * (k * v + pv).cos()
            }
            Shape::Disc { radius } => {
                let sigma = (radius as f64 / 2.0).max(2.0);
                1.0 - s.texture as f64 + s.texture as f64 * (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()
            }
        };
        s.color.map(|c| (c as f64 * factor).clamp(0.0, 1.0) as f32)
    }

    fn frame(&self, v: usize, t: usize, ids: &[usize]) -> Frame {
        let w = self.spec.width;
        Frame::from_fn(self.spec.height, w, |y, x| {
            let (wx, wy) = self.world(v, x, y);
            self.shade(ids[y * w + x], wx, wy, t)
        })
    }

    /// Displacement field on frame `at` pointing into frame `to`.
    fn flow(&self, ids: &[usize], at: usize, to: usize) -> FlowField {
        let w = self.spec.width;
        FlowField::from_fn(self.spec.height, w, Resolution::Pixel, |y, x| match ids[y * w + x] {
            0 => [0.0, 0.0],
            id => {
                let (a, b) = (self.center(id - 1, at), self.center(id - 1, to));
                [(b[0] - a[0]) as f32, (b[1] - a[1]) as f32]
            }
        })
    }
}

/// Mirrors the bilinear tap selection of the warp: the sample is in the hull
/// and every tap with nonzero weight carries the object seen at `p`.
fn source_consistent(ids_cur: &[usize], ids_prev: &[usize], flow: &FlowField) -> ValidityMask {
    let (h, w) = flow.dims();
    ValidityMask::from_fn(h, w, |y, x| {
        let [dx, dy] = flow.at(y, x);
        let sx = x as f64 + dx as f64;
        let sy = y as f64 + dy as f64;
        if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64) {
            return false;
        }
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let taps = [
            (y0, x0, (1.0 - fx) * (1.0 - fy)),
            (y0, x0 + 1.0, fx * (1.0 - fy)),
            (y0 + 1.0, x0, (1.0 - fx) * fy),
            (y0 + 1.0, x0 + 1.0, fx * fy),
        ];
        let id = ids_cur[y * w + x];
        taps.iter().all(|&(ty, tx, wt)| wt == 0.0 || ids_prev[ty as usize * w + tx as usize] == id)
    })
}

pub fn generate(spec: &SceneSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let r = Renderer { spec, look: Appearance::new(spec) };
    let coords: Vec<Coord> =
        (0..spec.views).flat_map(|v| (0..spec.times).map(move |t| Coord::new(v, t))).collect();
    let ids: Vec<Vec<usize>> = coords.par_iter().map(|c| r.id_map(c.v, c.t)).collect();
    let id_of = |c: Coord| &ids[c.v * spec.times + c.t];

    let frames: Vec<(usize, usize, Frame)> =
        coords.par_iter().map(|&c| (c.v, c.t, r.frame(c.v, c.t, id_of(c)))).collect();
    let grid = CameraTimeGrid::build(frames, spec.views, spec.times)
        .map_err(|e| SynthError::SpecError(e.to_string()))?;

    let pairs: Vec<(Coord, FlowPair, ValidityMask)> = coords
        .par_iter()
        .filter(|c| c.t >= 1)
        .map(|&c| {
            let prev = Coord::new(c.v, c.t - 1);
            let forward = r.flow(id_of(c), c.t, c.t - 1);
            let backward = r.flow(id_of(prev), c.t - 1, c.t);
            let valid = source_consistent(id_of(c), id_of(prev), &forward);
            (c, FlowPair { forward, backward }, valid)
        })
        .collect();
    let mut flows = BTreeMap::new();
    let mut valid = BTreeMap::new();
    for (c, f, m) in pairs {
        flows.insert(c, f);
        valid.insert(c, m);
    }
    Ok(SynthScene { spec: spec.clone(), grid, flows, valid })
}

impl SynthScene {
    pub fn occlusion(&self, c: Coord) -> Option<ValidityMask> {
        self.valid.get(&c).map(ValidityMask::complement)
    }

    /// Forward flows with validity masks, as consumed by the warping-error metrics.
    pub fn pair_inputs(&self) -> PairInputs {
        self.flows.iter().map(|(c, f)| (*c, (f.forward.clone(), self.valid[c].clone()))).collect()
    }

    pub fn flow_table(&self) -> FlowTable {
        FlowTable { pairs: self.flows.iter().map(|(c, f)| ((c.v, c.t), f.clone())).collect() }
    }

    /// Writes frames (PNG), flows, masks, the spec and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<GridManifest, crate::Error> {
        let mut manifest = write_grid_png(&self.grid, dir)?;
        for (c, pair) in &self.flows {
            let fwd = format!("flow_v{}_t{}_fwd.stfl", c.v, c.t);
            let bwd = format!("flow_v{}_t{}_bwd.stfl", c.v, c.t);
            pair.forward.save(&dir.join(&fwd))?;
            pair.backward.save(&dir.join(&bwd))?;
            manifest.flows.push(FlowEntry { v: c.v, t: c.t, forward: fwd, backward: bwd });
            let mask = format!("mask_v{}_t{}.stmk", c.v, c.t);
            self.valid[c].save(&dir.join(&mask))?;
            manifest.masks.push(MaskEntry { v: c.v, t: c.t, path: mask });
        }
        std::fs::write(dir.join("scene_spec.json"), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        manifest.write(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

impl FlowSupplier for SynthScene {
    fn flow(&self, view: usize, t: usize) -> Option<FlowPair> {
        self.flows.get(&Coord::new(view, t)).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{fb_consistency_mask, warp_frame, Interpolation};
    use proptest::prelude::*;

    fn sprite(shape: Shape, center: [f32; 2], velocity: [f32; 2]) -> SpriteSpec {
        SpriteSpec { shape, center, motion: Motion::Linear { velocity }, color: [0.7, 0.3, 0.5], texture: 0.15 }
    }

    #[test]
    fn static_scene_has_zero_flow_and_constant_views() {
        let s = generate(&SceneSpec::static_scene(2, 3, 10, 12, 4)).unwrap();
        for v in 0..2 {
            let seq = s.grid.view_sequence(v);
            assert!(seq.iter().all(|f| f == &seq[0]));
        }
        assert!(s.flows.values().all(|p| p.forward.is_zero() && p.backward.is_zero()));
        assert!(s.valid.values().all(|m| m.count_valid() == 10 * 12));
    }

    #[test]
    fn translating_sprite_flow_is_negated_velocity() {
        let mut spec = SceneSpec::static_scene(1, 3, 20, 24, 1);
        spec.sprites.push(sprite(Shape::Rect { half_width: 3.0, half_height: 3.0 }, [8.0, 10.0], [2.0, 0.0]));
        let s = generate(&spec).unwrap();
        let f = &s.flows[&Coord::new(0, 1)].forward;
        // sprite now centered at x = 10
        assert_eq!(f.at(10, 10), [-2.0, 0.0]);
        assert_eq!(f.at(9, 12), [-2.0, 0.0]);
        assert_eq!(f.at(2, 2), [0.0, 0.0]);
        assert_eq!(f.at(10, 20), [0.0, 0.0]);
        let b = &s.flows[&Coord::new(0, 1)].backward;
        assert_eq!(b.at(10, 8), [2.0, 0.0]);
    }

    /// Visibility oracle for integer motion: pixel `p` of frame `t` shows object
    /// `o`; it is valid iff `p + F(p)` is on the lattice and shows `o` at `t-1`.
    #[test]
    fn crossing_sprites_occlusion_matches_visibility_oracle() {
        let mut spec = SceneSpec::static_scene(1, 4, 24, 32, 2);
        spec.sprites.push(sprite(Shape::Rect { half_width: 4.0, half_height: 4.0 }, [6.0, 12.0], [3.0, 0.0]));
        spec.sprites.push(sprite(Shape::Disc { radius: 4.5 }, [26.0, 12.0], [-3.0, 0.0]));
        let s = generate(&spec).unwrap();
        let visible = |x: i64, y: i64, t: usize| -> usize {
            let mut id = 0;
            let rect_x = 6.0 + 3.0 * t as f64;
            if ((x as f64) - rect_x).abs() < 4.0 && ((y as f64) - 12.0).abs() < 4.0 {
                id = 1;
            }
            let disc_x = 26.0 - 3.0 * t as f64;
            if ((x as f64) - disc_x).powi(2) + ((y as f64) - 12.0).powi(2) < 4.5 * 4.5 {
                id = 2;
            }
            id
        };
        let mut occluded_total = 0;
        for t in 1..4 {
            let occ = s.occlusion(Coord::new(0, t)).unwrap();
            for y in 0..24i64 {
                for x in 0..32i64 {
                    let id = visible(x, y, t);
                    let dx = match id {
                        0 => 0,
                        1 => -3,
                        _ => 3,
                    };
                    let (sx, sy) = (x + dx, y);
                    let ok = (0..32).contains(&sx) && visible(sx, sy, t - 1) == id;
                    assert_eq!(occ.is_valid(y as usize, x as usize), !ok, "t={t} ({y},{x})");
                    occluded_total += !ok as usize;
                }
            }
        }
        assert!(occluded_total > 0);
    }

    #[test]
    fn disparity_shifts_views() {
        let mut spec = SceneSpec::static_scene(2, 2, 8, 16, 9);
        spec.disparity = 2.0;
        let s = generate(&spec).unwrap();
        let (a, b) = (s.grid.get(Coord::new(0, 0)), s.grid.get(Coord::new(1, 0)));
        for y in 0..8 {
            for x in 0..14 {
                assert_eq!(b.pixel(y, x), a.pixel(y, x + 2));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SceneSpec::static_scene(1, 3, 8, 8, 0);
        spec.sprites.push(sprite(Shape::Disc { radius: 2.0 }, [4.0, 4.0], [5.0, 0.0]));
        assert!(matches!(generate(&spec), Err(SynthError::SpecError(_))));
        spec.sprites[0].motion = Motion::Sinusoidal { amplitude: [1.0, 1.0], period: 0.0, phase: 0.0 };
        assert!(generate(&spec).is_err());
        spec.sprites[0].motion = Motion::Static;
        spec.sprites[0].shape = Shape::Rect { half_width: 0.0, half_height: 1.0 };
        assert!(generate(&spec).is_err());
        assert!(generate(&SceneSpec::static_scene(0, 3, 8, 8, 0)).is_err());
        let json = r#"{"views":1,"times":2,"height":4,"width":4,"bogus":1}"#;
        assert!(serde_json::from_str::<SceneSpec>(json).is_err());
    }

    #[test]
    fn write_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate(&SceneSpec::random(2, 3, 12, 12, 2, 1.5, 5)).unwrap();
        let m = s.write(dir.path()).unwrap();
        assert_eq!(m.frames.len(), 6);
        assert_eq!(m.flows.len(), 4);
        let back = GridManifest::read(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
        let fwd = FlowField::load(&dir.path().join(&m.flows[0].forward), Resolution::Pixel).unwrap();
        assert_eq!(fwd, s.flows[&Coord::new(m.flows[0].v, m.flows[0].t)].forward);
        let grid = back.load_grid(dir.path()).unwrap();
        assert_eq!(grid.get(Coord::new(1, 2)).to_rgb8(), s.grid.get(Coord::new(1, 2)).to_rgb8());
    }

    fn arb_spec() -> impl Strategy<Value = SceneSpec> {
        (1usize..3, 2usize..4, 12usize..24, 12usize..24, 0usize..4, 0.0f32..3.0, any::<u64>())
            .prop_map(|(v, t, h, w, n, speed, seed)| SceneSpec::random(v, t, h, w, n, speed, seed))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generation_is_deterministic(spec in arb_spec()) {
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            for c in a.grid.coords() {
                prop_assert_eq!(a.grid.get(c).data(), b.grid.get(c).data());
            }
            prop_assert_eq!(a.valid, b.valid);
        }

        #[test]
        fn analytic_flow_is_warp_and_fb_consistent(spec in arb_spec()) {
            let s = generate(&spec).unwrap();
            for (c, pair) in &s.flows {
                let valid = &s.valid[c];
                let fb = fb_consistency_mask(&pair.forward, &pair.backward, 0.01, 0.5).unwrap();
                let prev = s.grid.get(Coord::new(c.v, c.t - 1));
                let (warped, _) = warp_frame(&pair.forward, prev, Interpolation::Bilinear).unwrap();
                let cur = s.grid.get(*c);
                let (h, w) = cur.dims();
                for y in 0..h {
                    for x in 0..w {
                        if !valid.is_valid(y, x) {
                            continue;
                        }
                        prop_assert!(fb.is_valid(y, x), "fb invalid at {:?} ({},{})", c, y, x);
                        let (a, b) = (cur.pixel(y, x), warped.pixel(y, x));
                        for k in 0..3 {
                            prop_assert!((a[k] - b[k]).abs() < 1e-2, "{} vs {}", a[k], b[k]);
                        }
                    }
                }
            }
        }
    }
}
