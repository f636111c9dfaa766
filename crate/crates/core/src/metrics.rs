//! Temporal consistency and fidelity metrics.
//!
//! Warping error for a pair `(t-1, t)` is the mean, over valid pixels, of the
//! squared RGB distance `sum_c (f_t - warp(F_{t->t-1}, f_{t-1}))^2`; the
//! headline value is the mean of the per-pair values. Values are reported in
//! units of 1e-3.

use std::collections::BTreeMap;

use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::flow::{warp_frame, FlowField, Interpolation, ValidityMask};
use crate::frame::{Frame, CHANNELS};
use crate::grid::{CameraTimeGrid, Coord, StepAxis, TraversalPlan};

pub const WARP_SCALE: f64 = 1e3;

/// Metric value; `+inf` serializes as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Finite(f64),
    Label(InfLabel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfLabel {
    Inf,
}

impl MetricValue {
    pub fn of(v: f64) -> Self {
        if v == f64::INFINITY {
            MetricValue::Label(InfLabel::Inf)
        } else {
            MetricValue::Finite(v)
        }
    }

    pub fn get(&self) -> f64 {
        match self {
            MetricValue::Finite(v) => *v,
            MetricValue::Label(InfLabel::Inf) => f64::INFINITY,
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MetricValue::Finite(v) => s.serialize_f64(*v),
            MetricValue::Label(_) => s.serialize_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameValue {
    pub v: usize,
    pub t: usize,
    pub value: MetricValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: MetricValue,
    pub scale: String,
    pub per_frame: Vec<FrameValue>,
}

impl MetricReport {
    fn from_breakdown(metric: &str, scale: &str, per_frame: Vec<FrameValue>) -> Self {
        let n = per_frame.len().max(1) as f64;
        let value = per_frame.iter().map(|f| f.value.get()).sum::<f64>() / n;
        Self { metric: metric.into(), value: MetricValue::of(value), scale: scale.into(), per_frame }
    }

    pub fn value(&self) -> f64 {
        self.value.get()
    }
}

/// Flow `F_{t->t-1}` and validity mask for each `(v, t)` with `t >= 1`.
pub type PairInputs = BTreeMap<Coord, (FlowField, ValidityMask)>;

/// Mean over valid pixels of the squared RGB residual. `None` when no pixel is valid.
pub fn pair_warping_error(
    prev: &Frame,
    cur: &Frame,
    flow: &FlowField,
    mask: &ValidityMask,
) -> Result<Option<f64>, MetricError> {
    if prev.dims() != cur.dims() {
        return Err(MetricError::ShapeMismatch(prev.dims(), cur.dims()));
    }
    if flow.dims() != cur.dims() || mask.dims() != cur.dims() {
        return Err(MetricError::AlignmentError(format!(
            "flow {:?} / mask {:?} vs frame {:?}",
            flow.dims(),
            mask.dims(),
            cur.dims()
        )));
    }
    let (warped, inside) =
        warp_frame(flow, prev, Interpolation::Bilinear).map_err(|e| MetricError::AlignmentError(e.to_string()))?;
    let (h, w) = cur.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !(mask.is_valid(y, x) && inside.is_valid(y, x)) {
                continue;
            }
            let (a, b) = (cur.pixel(y, x), warped.pixel(y, x));
            sum += (0..CHANNELS).map(|c| ((a[c] - b[c]) as f64).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

fn warping_error_over(
    metric: &str,
    grid: &CameraTimeGrid,
    pairs: &PairInputs,
    targets: impl IntoIterator<Item = Coord>,
) -> Result<MetricReport, MetricError> {
    let mut per_frame = Vec::new();
    for c in targets {
        if c.t == 0 || !grid.contains(c) {
            return Err(MetricError::AlignmentError(format!("no previous frame for {c:?}")));
        }
        let (flow, mask) =
            pairs.get(&c).ok_or_else(|| MetricError::AlignmentError(format!("no flow for {c:?}")))?;
        let prev = grid.get(Coord::new(c.v, c.t - 1));
        if let Some(e) = pair_warping_error(prev, grid.get(c), flow, mask)? {
            per_frame.push(FrameValue { v: c.v, t: c.t, value: MetricValue::of(e * WARP_SCALE) });
        }
    }
    Ok(MetricReport::from_breakdown(metric, "1e-3", per_frame))
}

/// Warping error over every consecutive pair of every view ("local").
pub fn warping_error(grid: &CameraTimeGrid, pairs: &PairInputs) -> Result<MetricReport, MetricError> {
    let targets: Vec<Coord> = (0..grid.views()).flat_map(|v| (1..grid.times()).map(move |t| Coord::new(v, t))).collect();
    warping_error_over("warp_error_local", grid, pairs, targets)
}

/// Pairs that straddle a sub-grid boundary: for each step that advances in
/// time, the left-boundary (already produced) frame and its successor in the
/// new step. Keyed by the later frame.
pub fn boundary_pairs(plan: &TraversalPlan) -> Vec<Coord> {
    let mut out = std::collections::BTreeSet::new();
    for step in &plan.steps {
        if step.axis != StepAxis::Temporal {
            continue;
        }
        for &c in step.members() {
            if step.is_overlap(c) || c.t == 0 {
                continue;
            }
            if step.is_overlap(Coord::new(c.v, c.t - 1)) {
                out.insert(c);
            }
        }
    }
    out.into_iter().collect()
}

/// Warping error restricted to [`boundary_pairs`] ("global"). `None` when the
/// plan has no boundary pairs.
pub fn boundary_warping_error(
    plan: &TraversalPlan,
    grid: &CameraTimeGrid,
    pairs: &PairInputs,
) -> Result<Option<MetricReport>, MetricError> {
    let targets = boundary_pairs(plan);
    if targets.is_empty() {
        return Ok(None);
    }
    warping_error_over("warp_error_global", grid, pairs, targets).map(Some)
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::ShapeMismatch(a.dims(), b.dims()));
    }
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n)
}

/// Peak 1.0. Identical frames give `+inf`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all 8x8 windows (stride 1) and channels, dynamic range 1.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64, MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::ShapeMismatch(a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..CHANNELS {
        for y0 in 0..=h - wh {
            for x0 in 0..=w - ww {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let p = a.pixel(y, x)[c] as f64;
                        let q = b.pixel(y, x)[c] as f64;
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean PSNR / SSIM over corresponding frames.
pub fn fidelity_reports(
    pairs: &[(Coord, &Frame, &Frame)],
) -> Result<(MetricReport, MetricReport), MetricError> {
    let mut p = Vec::with_capacity(pairs.len());
    let mut s = Vec::with_capacity(pairs.len());
    for &(c, a, b) in pairs {
        p.push(FrameValue { v: c.v, t: c.t, value: MetricValue::of(psnr(a, b)?) });
        s.push(FrameValue { v: c.v, t: c.t, value: MetricValue::of(ssim(a, b)?) });
    }
    Ok((MetricReport::from_breakdown("psnr", "dB", p), MetricReport::from_breakdown("ssim", "1", s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Resolution;
    use crate::grid::asymmetric_traversal;

    fn noise(h: usize, w: usize, seed: u64) -> Frame {
        let mut r = crate::rng::seeded(seed);
        Frame::from_fn(h, w, |_, _| {
            let mut g = || rand::Rng::gen_range(&mut r, 0.1f32..0.9);
            [g(), g(), g()]
        })
    }

    fn static_pairs(views: usize, times: usize, h: usize, w: usize) -> PairInputs {
        let mut p = PairInputs::new();
        for v in 0..views {
            for t in 1..times {
                p.insert(Coord::new(v, t), (FlowField::zeros(h, w, Resolution::Pixel), ValidityMask::all_valid(h, w)));
            }
        }
        p
    }

    #[test]
    fn static_video_has_zero_warp_error() {
        let f = noise(8, 8, 1);
        let cells: Vec<_> = (0..2).flat_map(|v| (0..3).map(move |t| (v, t))).map(|(v, t)| (v, t, f.clone())).collect();
        let grid = CameraTimeGrid::build(cells, 2, 3).unwrap();
        let r = warping_error(&grid, &static_pairs(2, 3, 8, 8)).unwrap();
        assert_eq!(r.value(), 0.0);
        assert_eq!(r.per_frame.len(), 4);
    }

    #[test]
    fn constant_residual_gives_three_delta_squared() {
        let prev = noise(6, 7, 2);
        let flow = FlowField::from_fn(6, 7, Resolution::Pixel, |y, x| [if x > 0 { -1.0 } else { 0.0 }, if y % 2 == 1 { -0.5 } else { 0.0 }]);
        let delta = 0.05f32;
        // loop oracle: explicit bilinear sample per pixel, then add delta
        let cur = Frame::from_fn(6, 7, |y, x| {
            let [dx, dy] = flow.at(y, x);
            let (sx, sy) = (x as f64 + dx as f64, y as f64 + dy as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let get = |yy: usize, xx: usize, c: usize| if yy < 6 && xx < 7 { prev.pixel(yy, xx)[c] as f64 } else { 0.0 };
            let mut out = [0.0f32; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let v = get(y0, x0, c) * (1.0 - fx) * (1.0 - fy)
                    + get(y0, x0 + 1, c) * fx * (1.0 - fy)
                    + get(y0 + 1, x0, c) * (1.0 - fx) * fy
                    + get(y0 + 1, x0 + 1, c) * fx * fy;
                *o = v as f32 + delta;
            }
            out
        });
        let e = pair_warping_error(&prev, &cur, &flow, &ValidityMask::all_valid(6, 7)).unwrap().unwrap();
        assert!((e - 3.0 * (delta as f64).powi(2)).abs() < 1e-6, "{e}");
    }

    #[test]
    fn invalid_everywhere_gives_no_value() {
        let f = noise(4, 4, 1);
        let r = pair_warping_error(&f, &f, &FlowField::zeros(4, 4, Resolution::Pixel), &ValidityMask::all_invalid(4, 4))
            .unwrap();
        assert_eq!(r, None);
    }

    #[test]
    fn warp_error_alignment_errors() {
        let f = noise(4, 4, 1);
        let grid = CameraTimeGrid::build(vec![(0, 0, f.clone()), (0, 1, f.clone())], 1, 2).unwrap();
        assert!(matches!(warping_error(&grid, &PairInputs::new()), Err(MetricError::AlignmentError(_))));
        let mut bad = PairInputs::new();
        bad.insert(Coord::new(0, 1), (FlowField::zeros(3, 4, Resolution::Pixel), ValidityMask::all_valid(3, 4)));
        assert!(warping_error(&grid, &bad).is_err());
    }

    #[test]
    fn boundary_pairs_enumeration() {
        assert_eq!(boundary_pairs(&asymmetric_traversal(2, 2).unwrap()), vec![]);
        assert_eq!(
            boundary_pairs(&asymmetric_traversal(2, 3).unwrap()),
            vec![Coord::new(0, 2), Coord::new(1, 2)]
        );
        assert_eq!(
            boundary_pairs(&asymmetric_traversal(3, 3).unwrap()),
            vec![Coord::new(0, 2), Coord::new(1, 2), Coord::new(2, 2)]
        );
        let f = noise(4, 4, 1);
        let grid = CameraTimeGrid::build(vec![(0, 0, f.clone()), (0, 1, f.clone()), (1, 0, f.clone()), (1, 1, f)], 2, 2)
            .unwrap();
        let plan = asymmetric_traversal(2, 2).unwrap();
        assert_eq!(boundary_warping_error(&plan, &grid, &static_pairs(2, 2, 4, 4)).unwrap(), None);
    }

    #[test]
    fn psnr_closed_form_and_identity() {
        let a = Frame::filled(4, 4, [0.3, 0.4, 0.5]);
        let b = Frame::from_fn(4, 4, |_, _| [0.4, 0.5, 0.6]);
        let m = mse(&a, &b).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert!((m - 0.01).abs() < 1e-7);
        assert!((p - 20.0).abs() < 1e-5, "{p}");
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let json = serde_json::to_string(&MetricValue::of(f64::INFINITY)).unwrap();
        assert_eq!(json, "\"inf\"");
        assert_eq!(serde_json::from_str::<MetricValue>(&json).unwrap().get(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(12, 10, 1);
        let b = noise(12, 10, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 0.5);
        assert!(ssim(&a, &Frame::filled(3, 3, [0.0; 3])).is_err());
    }

    #[test]
    fn metrics_match_scalar_loop_reference() {
        let a = noise(9, 11, 3);
        let b = noise(9, 11, 4);
        // psnr reference
        let mut se = 0.0f64;
        for y in 0..9 {
            for x in 0..11 {
                for c in 0..3 {
                    se += ((a.pixel(y, x)[c] - b.pixel(y, x)[c]) as f64).powi(2);
                }
            }
        }
        let p_ref = 10.0 * (1.0 / (se / (9.0 * 11.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - p_ref).abs() < 1e-9);

        // ssim reference with two-pass window statistics
        let mut acc = 0.0;
        let mut k = 0;
        for c in 0..3 {
            for y0 in 0..=1 {
                for x0 in 0..=3 {
                    let pa: Vec<f64> = (0..64).map(|i| a.pixel(y0 + i / 8, x0 + i % 8)[c] as f64).collect();
                    let pb: Vec<f64> = (0..64).map(|i| b.pixel(y0 + i / 8, x0 + i % 8)[c] as f64).collect();
                    let ma = pa.iter().sum::<f64>() / 64.0;
                    let mb = pb.iter().sum::<f64>() / 64.0;
                    let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 64.0;
                    let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 64.0;
                    let cv = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / 64.0;
                    acc += ((2.0 * ma * mb + 1e-4) * (2.0 * cv + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                    k += 1;
                }
            }
        }
        assert!((ssim(&a, &b).unwrap() - acc / k as f64).abs() < 1e-9);
    }

    #[test]
    fn warp_error_ignores_common_offset() {
        let prev = noise(8, 8, 5);
        let cur = noise(8, 8, 6);
        let flow = FlowField::constant(8, 8, Resolution::Pixel, [0.5, -0.25]);
        let mask = ValidityMask::all_valid(8, 8);
        let e0 = pair_warping_error(&prev, &cur, &flow, &mask).unwrap().unwrap();
        let shift = |f: &Frame| Frame::new(8, 8, f.data().iter().map(|v| v + 0.05).collect()).unwrap();
        let e1 = pair_warping_error(&shift(&prev), &shift(&cur), &flow, &mask).unwrap().unwrap();
        assert!((e0 - e1).abs() < 1e-6);
    }

    #[test]
    fn breakdown_mean_is_headline() {
        let per = vec![
            FrameValue { v: 0, t: 1, value: MetricValue::of(1.0) },
            FrameValue { v: 0, t: 2, value: MetricValue::of(2.5) },
        ];
        let r = MetricReport::from_breakdown("x", "1", per);
        assert!((r.value() - 1.75).abs() < 1e-12);
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(json["metric"], "x");
        assert_eq!(json["per_frame"][1]["t"], 2);
    }
}
