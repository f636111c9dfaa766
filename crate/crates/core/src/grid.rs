//! Camera–time grid, 2×2 sub-grids and the traversal plans that order them.
//!
//! Cells are addressed `(v, t)`: `v` is the camera (slow axis), `t` the time step.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GridError, IoError};
use crate::frame::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub v: usize,
    pub t: usize,
}

impl Coord {
    pub const fn new(v: usize, t: usize) -> Self {
        Self { v, t }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraTimeGrid {
    views: usize,
    times: usize,
    frames: Vec<Frame>,
}

impl CameraTimeGrid {
    /// Places each tagged frame at its `(v, t)` cell.
    pub fn build(
        tagged: impl IntoIterator<Item = (usize, usize, Frame)>,
        views: usize,
        times: usize,
    ) -> Result<Self, GridError> {
        if views < 1 || times < 2 {
            return Err(GridError::InvalidShape { views, times });
        }
        let mut slots: Vec<Option<Frame>> = vec![None; views * times];
        let mut dims: Option<(usize, usize)> = None;
        for (v, t, frame) in tagged {
            if v >= views || t >= times {
                return Err(GridError::CellOutOfRange { v, t, views, times });
            }
            match dims {
                None => dims = Some(frame.dims()),
                Some(d) if d != frame.dims() => {
                    return Err(GridError::DimensionMismatch { expected: d, found: frame.dims() })
                }
                _ => {}
            }
            let slot = &mut slots[v * times + t];
            if slot.is_some() {
                return Err(GridError::DuplicateCell { v, t });
            }
            *slot = Some(frame);
        }
        let mut frames = Vec::with_capacity(views * times);
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(f) => frames.push(f),
                None => return Err(GridError::MissingCell { v: i / times, t: i % times }),
            }
        }
        Ok(Self { views, times, frames })
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn get(&self, c: Coord) -> &Frame {
        &self.frames[c.v * self.times + c.t]
    }

    pub fn get_mut(&mut self, c: Coord) -> &mut Frame {
        &mut self.frames[c.v * self.times + c.t]
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.v < self.views && c.t < self.times
    }

    /// All coordinates, `v` major.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.views).flat_map(move |v| (0..self.times).map(move |t| Coord::new(v, t)))
    }

    pub fn view_sequence(&self, v: usize) -> &[Frame] {
        &self.frames[v * self.times..(v + 1) * self.times]
    }

    pub fn map_frames(&self, mut f: impl FnMut(Coord, &Frame) -> Frame) -> Self {
        let frames = self.coords().map(|c| f(c, self.get(c))).collect();
        Self { views: self.views, times: self.times, frames }
    }
}

/// A 2×2 block of adjacent views and neighbouring times, or four consecutive
/// frames of one view in the monocular case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGrid {
    pub anchor: Coord,
    pub members: [Coord; 4],
    pub kind: SubGridKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubGridKind {
    /// `[(v,t), (v+1,t), (v,t+1), (v+1,t+1)]`
    CameraTime,
    /// `[(0,t), (0,t+1), (0,t+2), (0,t+3)]`
    Temporal,
}

impl SubGrid {
    fn camera_time(v: usize, t: usize) -> Self {
        Self {
            anchor: Coord::new(v, t),
            members: [
                Coord::new(v, t),
                Coord::new(v + 1, t),
                Coord::new(v, t + 1),
                Coord::new(v + 1, t + 1),
            ],
            kind: SubGridKind::CameraTime,
        }
    }

    fn temporal(t: usize) -> Self {
        Self {
            anchor: Coord::new(0, t),
            members: [Coord::new(0, t), Coord::new(0, t + 1), Coord::new(0, t + 2), Coord::new(0, t + 3)],
            kind: SubGridKind::Temporal,
        }
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.members.contains(&c)
    }

    pub fn member_index(&self, c: Coord) -> Option<usize> {
        self.members.iter().position(|&m| m == c)
    }

    /// Largest time index in the sub-grid.
    pub fn last_time(&self) -> usize {
        self.members.iter().map(|m| m.t).max().unwrap_or(0)
    }
}

pub fn make_subgrid(grid: &CameraTimeGrid, v: usize, t: usize) -> Result<SubGrid, GridError> {
    make_subgrid_for(grid.views(), grid.times(), v, t)
}

pub fn make_subgrid_for(views: usize, times: usize, v: usize, t: usize) -> Result<SubGrid, GridError> {
    if v + 1 >= views || t + 1 >= times {
        return Err(GridError::OutOfBounds { v, t, views, times });
    }
    Ok(SubGrid::camera_time(v, t))
}

pub fn make_temporal_subgrid(times: usize, t: usize) -> Result<SubGrid, GridError> {
    if t + 3 >= times {
        return Err(GridError::OutOfBounds { v: 0, t, views: 1, times });
    }
    Ok(SubGrid::temporal(t))
}

/// How a step relates to the step before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAxis {
    First,
    /// Same camera row, later anchor time.
    Temporal,
    /// Moved to a different camera row.
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub subgrid: SubGrid,
    /// Members already covered by some earlier step, in member order.
    pub overlap: Vec<Coord>,
    pub axis: StepAxis,
}

impl PlanStep {
    pub fn anchor(&self) -> Coord {
        self.subgrid.anchor
    }

    pub fn members(&self) -> &[Coord; 4] {
        &self.subgrid.members
    }

    pub fn is_overlap(&self, c: Coord) -> bool {
        self.overlap.contains(&c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalPlan {
    pub views: usize,
    pub times: usize,
    pub steps: Vec<PlanStep>,
}

impl TraversalPlan {
    /// Builds a plan from an ordered list of sub-grids, computing overlap and
    /// step axes. No connectivity check is made here; see [`Self::validate`].
    pub fn from_subgrids(views: usize, times: usize, subgrids: Vec<SubGrid>) -> Self {
        let mut seen = BTreeSet::new();
        let mut steps = Vec::with_capacity(subgrids.len());
        let mut prev: Option<SubGrid> = None;
        for sg in subgrids {
            let overlap = sg.members.iter().copied().filter(|m| seen.contains(m)).collect();
            let axis = match prev {
                None => StepAxis::First,
                Some(p) if p.anchor.v == sg.anchor.v && p.anchor.t < sg.anchor.t => StepAxis::Temporal,
                Some(_) => StepAxis::Spatial,
            };
            seen.extend(sg.members);
            steps.push(PlanStep { subgrid: sg, overlap, axis });
            prev = Some(sg);
        }
        Self { views, times, steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn anchors(&self) -> Vec<Coord> {
        self.steps.iter().map(|s| s.anchor()).collect()
    }

    /// Index of the last step containing `c`, if any.
    pub fn last_use(&self, c: Coord) -> Option<usize> {
        self.steps.iter().rposition(|s| s.subgrid.contains(c))
    }

    /// Checks coverage and the connected overlap chain.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (k, step) in self.steps.iter().enumerate() {
            if k > 0 && step.overlap.is_empty() {
                return Err(format!("step {k} shares no frame with earlier steps"));
            }
            seen.extend(step.subgrid.members);
        }
        for v in 0..self.views {
            for t in 0..self.times {
                if !seen.contains(&Coord::new(v, t)) {
                    return Err(format!("cell ({v}, {t}) not covered"));
                }
            }
        }
        Ok(())
    }
}

/// Even camera rows (and the last pair `V-2`) sweep every time step; odd rows
/// only bridge views at `t = 0`.
pub fn asymmetric_traversal(views: usize, times: usize) -> Result<TraversalPlan, GridError> {
    if views < 2 || times < 2 {
        return Err(GridError::DegenerateGrid { views, times });
    }
    let mut subgrids = Vec::new();
    for v in 0..=views - 2 {
        if v % 2 == 0 || v == views - 2 {
            for t in 0..=times - 2 {
                subgrids.push(SubGrid::camera_time(v, t));
            }
        } else {
            subgrids.push(SubGrid::camera_time(v, 0));
        }
    }
    Ok(TraversalPlan::from_subgrids(views, times, subgrids))
}

/// Raster order over every sub-grid; used for ablations only.
pub fn raster_traversal(views: usize, times: usize) -> Result<TraversalPlan, GridError> {
    if views < 2 || times < 2 {
        return Err(GridError::DegenerateGrid { views, times });
    }
    let subgrids = (0..views - 1)
        .flat_map(|v| (0..times - 1).map(move |t| SubGrid::camera_time(v, t)))
        .collect();
    Ok(TraversalPlan::from_subgrids(views, times, subgrids))
}

/// Four-frame windows at `t = 0, 2, 4, ...`, consecutive windows sharing two
/// frames. When `times` is odd a final window anchored at `times - 4` covers the
/// last frame.
pub fn monocular_traversal(times: usize, stride: usize) -> Result<TraversalPlan, GridError> {
    if stride != 2 {
        return Err(GridError::UnsupportedStride(stride));
    }
    if times < 4 {
        return Err(GridError::TooFewFrames(times));
    }
    let mut anchors: Vec<usize> = (0..).step_by(stride).take_while(|t| t + 3 < times).collect();
    let last = *anchors.last().expect("times >= 4");
    if last + 3 < times - 1 {
        anchors.push(times - 4);
    }
    let subgrids = anchors.into_iter().map(SubGrid::temporal).collect();
    Ok(TraversalPlan::from_subgrids(1, times, subgrids))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub views: usize,
    pub times: usize,
    pub frames: Vec<FrameEntry>,
    /// Optional flow fields for `(v, t -> t-1)` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowEntry>,
    /// Optional validity (non-occlusion) masks for `(v, t -> t-1)` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<MaskEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub v: usize,
    pub t: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub v: usize,
    pub t: usize,
    /// `F_{t -> t-1}`, defined on frame `t`.
    pub forward: String,
    /// `F_{t-1 -> t}`, defined on frame `t-1`.
    pub backward: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub v: usize,
    pub t: usize,
    pub path: String,
}

impl GridManifest {
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Loads every frame, resolving relative paths against `base`.
    pub fn load_grid(&self, base: &Path) -> Result<CameraTimeGrid, crate::Error> {
        let mut tagged = Vec::with_capacity(self.frames.len());
        for e in &self.frames {
            tagged.push((e.v, e.t, Frame::load(&resolve(base, &e.path))?));
        }
        Ok(CameraTimeGrid::build(tagged, self.views, self.times)?)
    }
}

pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes every frame as `frame_v{v}_t{t}.png` under `dir` and returns the manifest.
pub fn write_grid_png(grid: &CameraTimeGrid, dir: &Path) -> Result<GridManifest, IoError> {
    std::fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    for c in grid.coords() {
        let name = format!("frame_v{}_t{}.png", c.v, c.t);
        grid.get(c).write_png(&dir.join(&name))?;
        frames.push(FrameEntry { v: c.v, t: c.t, path: name });
    }
    Ok(GridManifest { views: grid.views(), times: grid.times(), frames, flows: vec![], masks: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(h: usize, w: usize, val: f32) -> Frame {
        Frame::filled(h, w, [val; 3])
    }

    fn anchors(plan: &TraversalPlan) -> Vec<(usize, usize)> {
        plan.anchors().iter().map(|c| (c.v, c.t)).collect()
    }

    #[test]
    fn build_places_frames_at_tags() {
        let frames = vec![
            (1, 1, tiny(2, 2, 0.4)),
            (0, 0, tiny(2, 2, 0.1)),
            (1, 0, tiny(2, 2, 0.3)),
            (0, 1, tiny(2, 2, 0.2)),
        ];
        let g = CameraTimeGrid::build(frames, 2, 2).unwrap();
        assert_eq!(g.get(Coord::new(0, 0)).data()[0], 0.1);
        assert_eq!(g.get(Coord::new(0, 1)).data()[0], 0.2);
        assert_eq!(g.get(Coord::new(1, 0)).data()[0], 0.3);
        assert_eq!(g.get(Coord::new(1, 1)).data()[0], 0.4);
    }

    #[test]
    fn build_reports_missing_and_mismatched_cells() {
        let three = vec![(0, 0, tiny(2, 2, 0.0)), (0, 1, tiny(2, 2, 0.0)), (1, 0, tiny(2, 2, 0.0))];
        assert_eq!(CameraTimeGrid::build(three, 2, 2), Err(GridError::MissingCell { v: 1, t: 1 }));

        let mixed = vec![
            (0, 0, tiny(8, 8, 0.0)),
            (0, 1, tiny(8, 9, 0.0)),
            (1, 0, tiny(8, 8, 0.0)),
            (1, 1, tiny(8, 8, 0.0)),
        ];
        assert!(matches!(CameraTimeGrid::build(mixed, 2, 2), Err(GridError::DimensionMismatch { .. })));

        let dup = vec![(0, 0, tiny(1, 1, 0.0)), (0, 0, tiny(1, 1, 0.0))];
        assert_eq!(CameraTimeGrid::build(dup, 1, 2), Err(GridError::DuplicateCell { v: 0, t: 0 }));
    }

    #[test]
    fn subgrid_member_order() {
        let sg = make_subgrid_for(3, 3, 0, 0).unwrap();
        assert_eq!(sg.members, [Coord::new(0, 0), Coord::new(1, 0), Coord::new(0, 1), Coord::new(1, 1)]);
        let sg = make_subgrid_for(3, 3, 1, 1).unwrap();
        assert_eq!(sg.members, [Coord::new(1, 1), Coord::new(2, 1), Coord::new(1, 2), Coord::new(2, 2)]);
        assert!(matches!(make_subgrid_for(3, 3, 2, 0), Err(GridError::OutOfBounds { .. })));
    }

    #[test]
    fn asymmetric_small_cases() {
        assert_eq!(anchors(&asymmetric_traversal(3, 3).unwrap()), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(
            anchors(&asymmetric_traversal(4, 3).unwrap()),
            vec![(0, 0), (0, 1), (1, 0), (2, 0), (2, 1)]
        );
        assert_eq!(anchors(&asymmetric_traversal(2, 2).unwrap()), vec![(0, 0)]);
        assert!(matches!(asymmetric_traversal(1, 3), Err(GridError::DegenerateGrid { .. })));
        assert!(matches!(asymmetric_traversal(3, 1), Err(GridError::DegenerateGrid { .. })));
    }

    #[test]
    fn overlap_and_axes() {
        let plan = asymmetric_traversal(3, 3).unwrap();
        let s = &plan.steps;
        assert!(s[0].overlap.is_empty());
        assert_eq!(s[0].axis, StepAxis::First);
        assert_eq!(s[1].overlap, vec![Coord::new(0, 1), Coord::new(1, 1)]);
        assert_eq!(s[1].axis, StepAxis::Temporal);
        assert_eq!(s[2].overlap, vec![Coord::new(1, 0), Coord::new(1, 1)]);
        assert_eq!(s[2].axis, StepAxis::Spatial);
        assert_eq!(s[3].overlap, vec![Coord::new(1, 1), Coord::new(2, 1), Coord::new(1, 2)]);
        assert_eq!(s[3].axis, StepAxis::Temporal);
    }

    #[test]
    fn monocular_cases() {
        let p = monocular_traversal(6, 2).unwrap();
        assert_eq!(anchors(&p), vec![(0, 0), (0, 2)]);
        assert_eq!(p.steps[1].overlap, vec![Coord::new(0, 2), Coord::new(0, 3)]);
        assert_eq!(anchors(&monocular_traversal(4, 2).unwrap()), vec![(0, 0)]);
        assert_eq!(monocular_traversal(3, 2), Err(GridError::TooFewFrames(3)));
        assert_eq!(monocular_traversal(8, 3), Err(GridError::UnsupportedStride(3)));
        let odd = monocular_traversal(7, 2).unwrap();
        assert_eq!(anchors(&odd), vec![(0, 0), (0, 2), (0, 3)]);
        odd.validate().unwrap();
    }

    #[test]
    fn last_use_tracks_final_step() {
        let plan = asymmetric_traversal(3, 3).unwrap();
        assert_eq!(plan.last_use(Coord::new(0, 0)), Some(0));
        assert_eq!(plan.last_use(Coord::new(1, 1)), Some(3));
        assert_eq!(plan.last_use(Coord::new(0, 2)), Some(1));
    }

    #[test]
    fn manifest_schema() {
        let m: GridManifest = serde_json::from_str(
            r#"{"views": 1, "times": 2, "frames": [{"v":0,"t":0,"path":"a.png"},{"v":0,"t":1,"path":"b.png"}]}"#,
        )
        .unwrap();
        assert_eq!(m.frames[1].path, "b.png");
        assert!(m.flows.is_empty());
        let text = serde_json::to_string(&m).unwrap();
        assert!(!text.contains("flows"));
    }
}
