//! Projection weights, text tokens and the vital layer range.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AttentionError, IoError};
use crate::rng;

/// Row-major `rows x cols` matrix applied as `x W` (input dim = rows).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn random(rows: usize, cols: usize, r: &mut rng::Rng) -> Self {
        let scale = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| (rng::normal(r) * scale) as f32).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j] as f64
    }

    /// `out[j] = sum_i x[i] * W[i, j]`
    pub fn apply(&self, x: &[f32], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi as f64;
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w as f64;
            }
        }
    }

    pub fn apply_f64(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w as f64;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl StreamWeights {
    pub fn identity(d: usize) -> Self {
        Self { wq: Matrix::identity(d), wk: Matrix::identity(d), wv: Matrix::identity(d), wo: Matrix::identity(d) }
    }

    pub fn random(d: usize, r: &mut rng::Rng) -> Self {
        Self {
            wq: Matrix::random(d, d, r),
            wk: Matrix::random(d, d, r),
            wv: Matrix::random(d, d, r),
            wo: Matrix::random(d, d, r),
        }
    }

    fn matrices(&self) -> [(&'static str, &Matrix); 4] {
        [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)]
    }
}

/// Dual-stream attention parameters for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub d_k: usize,
    pub image: StreamWeights,
    pub text: StreamWeights,
}

impl AttentionParams {
    pub fn new(heads: usize, d_k: usize, image: StreamWeights, text: StreamWeights) -> Result<Self, AttentionError> {
        let p = Self { heads, d_k, image, text };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(heads: usize, d_k: usize) -> Self {
        let d = heads * d_k;
        Self { heads, d_k, image: StreamWeights::identity(d), text: StreamWeights::identity(d) }
    }

    pub fn random(heads: usize, d_k: usize, seed: u64) -> Self {
        let d = heads * d_k;
        let mut r = rng::seeded(seed);
        let image = StreamWeights::random(d, &mut r);
        let text = StreamWeights::random(d, &mut r);
        Self { heads, d_k, image, text }
    }

    pub fn d(&self) -> usize {
        self.heads * self.d_k
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.heads == 0 || self.d_k == 0 {
            return Err(AttentionError::InvalidParams("heads and d_k must be positive".into()));
        }
        let d = self.d();
        for s in [&self.image, &self.text] {
            for (name, m) in s.matrices() {
                if m.rows != d || m.cols != d || m.data.len() != d * d {
                    return Err(AttentionError::InvalidParams(format!(
                        "{name} is {}x{}, expected {d}x{d}",
                        m.rows, m.cols
                    )));
                }
                if !m.is_finite() {
                    return Err(AttentionError::InvalidParams(format!("{name} has non-finite weights")));
                }
            }
        }
        Ok(())
    }
}

/// Per-layer parameters for a stack, each layer seeded from `seed`.
pub fn random_stack(depth: usize, heads: usize, d_k: usize, seed: u64) -> Vec<AttentionParams> {
    (0..depth)
        .map(|l| AttentionParams::random(heads, d_k, seed.wrapping_add(l as u64 * 7919)))
        .collect()
}

/// `L x d` prompt tokens shared by every frame of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TextTokens {
    pub len: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl TextTokens {
    pub fn empty(d: usize) -> Self {
        Self { len: 0, d, data: Vec::new() }
    }

    pub fn random(len: usize, d: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let data = (0..len * d).map(|_| rng::normal(&mut r) as f32).collect();
        Self { len, d, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Half-open range `[start, end)` of layers that use the joint sub-grid path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Result<Self, AttentionError> {
        if start >= end {
            return Err(AttentionError::InvalidLayerRange { start, end });
        }
        Ok(Self { start, end })
    }

    /// `[0, 30)` for stacks of 60 or more layers, otherwise the first half.
    pub fn default_for(depth: usize) -> Self {
        if depth >= 60 {
            Self { start: 0, end: 30 }
        } else {
            Self { start: 0, end: (depth / 2).max(1) }
        }
    }
}

pub fn layer_gate(layer_index: usize, vital: LayerRange) -> bool {
    vital.start <= layer_index && layer_index < vital.end
}

#[derive(Serialize, Deserialize)]
struct WeightSidecar {
    heads: usize,
    d_k: usize,
    depth: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset into the raw file, in float32 elements.
    offset: usize,
}

/// Writes `<stem>.bin` (raw little-endian float32) and `<stem>.json` (tensor index).
pub fn save_weights(layers: &[AttentionParams], stem: &Path) -> Result<(), IoError> {
    let first = layers.first().ok_or_else(|| IoError::Format("empty layer stack".into()))?;
    let mut raw = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (l, p) in layers.iter().enumerate() {
        for (stream, w) in [("image", &p.image), ("text", &p.text)] {
            for (name, m) in w.matrices() {
                tensors.push(TensorEntry { name: format!("layer{l}.{stream}.{name}"), shape: [m.rows, m.cols], offset });
                offset += m.data.len();
                for v in &m.data {
                    raw.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let side = WeightSidecar { heads: first.heads, d_k: first.d_k, depth: layers.len(), tensors };
    std::fs::write(stem.with_extension("bin"), raw)?;
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn load_weights(stem: &Path) -> Result<Vec<AttentionParams>, IoError> {
    let side: WeightSidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let raw = std::fs::read(stem.with_extension("bin"))?;
    let floats: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let find = |name: &str| -> Result<Matrix, IoError> {
        let e = side
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| IoError::Format(format!("missing tensor {name}")))?;
        let n = e.shape[0] * e.shape[1];
        let data = floats
            .get(e.offset..e.offset + n)
            .ok_or_else(|| IoError::Format(format!("tensor {name} out of range")))?
            .to_vec();
        Ok(Matrix { rows: e.shape[0], cols: e.shape[1], data })
    };
    let mut layers = Vec::with_capacity(side.depth);
    for l in 0..side.depth {
        let stream = |s: &str| -> Result<StreamWeights, IoError> {
            Ok(StreamWeights {
                wq: find(&format!("layer{l}.{s}.wq"))?,
                wk: find(&format!("layer{l}.{s}.wk"))?,
                wv: find(&format!("layer{l}.{s}.wv"))?,
                wo: find(&format!("layer{l}.{s}.wo"))?,
            })
        };
        let p = AttentionParams::new(side.heads, side.d_k, stream("image")?, stream("text")?)
            .map_err(|e| IoError::Format(e.to_string()))?;
        layers.push(p);
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_boundaries() {
        let vital = LayerRange::new(0, 30).unwrap();
        assert!(layer_gate(0, vital));
        assert!(layer_gate(29, vital));
        assert!(!layer_gate(30, vital));
        assert!(LayerRange::new(0, 0).is_err());
    }

    #[test]
    fn default_ranges() {
        assert_eq!(LayerRange::default_for(60), LayerRange { start: 0, end: 30 });
        assert_eq!(LayerRange::default_for(80), LayerRange { start: 0, end: 30 });
        assert_eq!(LayerRange::default_for(7), LayerRange { start: 0, end: 3 });
        assert_eq!(LayerRange::default_for(1), LayerRange { start: 0, end: 1 });
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("stack");
        let layers = random_stack(3, 2, 4, 11);
        save_weights(&layers, &stem).unwrap();
        let raw = std::fs::metadata(stem.with_extension("bin")).unwrap().len();
        assert_eq!(raw as usize, 3 * 8 * 8 * 8 * 4);
        assert_eq!(load_weights(&stem).unwrap(), layers);
    }

    #[test]
    fn random_init_is_seeded() {
        assert_eq!(AttentionParams::random(1, 4, 5), AttentionParams::random(1, 4, 5));
        assert_ne!(AttentionParams::random(1, 4, 5), AttentionParams::random(1, 4, 6));
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut p = AttentionParams::identity(2, 2);
        p.image.wk = Matrix::identity(3);
        assert!(p.validate().is_err());
    }
}
