//! 2D axial rotary position embedding.
//!
//! A head vector of `d_k` channels is split into a row block (first
//! `row_dims` channels) and a column block (the remaining `col_dims`).
//! Within each block, channel pairs `(2j, 2j+1)` are rotated by
//! `pos * base^(-2j / n)` where `n` is the block width.

use serde::{Deserialize, Serialize};

use crate::error::AttentionError;

pub type Position = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeSpec {
    pub base: f64,
    pub row_dims: usize,
    pub col_dims: usize,
}

impl RopeSpec {
    pub fn new(base: f64, row_dims: usize, col_dims: usize) -> Result<Self, AttentionError> {
        if row_dims % 2 != 0 || col_dims % 2 != 0 {
            return Err(AttentionError::InvalidParams(format!(
                "RoPE axis widths must be even, got ({row_dims}, {col_dims})"
            )));
        }
        if !(base.is_finite() && base > 0.0) {
            return Err(AttentionError::InvalidParams(format!("RoPE base {base}")));
        }
        Ok(Self { base, row_dims, col_dims })
    }

    /// Splits `d_k` so the row block gets `2 * floor(d_k / 4)` channels.
    pub fn for_head_dim(d_k: usize) -> Result<Self, AttentionError> {
        let row = 2 * (d_k / 4);
        Self::new(10_000.0, row, d_k - row)
    }

    pub fn head_dim(&self) -> usize {
        self.row_dims + self.col_dims
    }

    /// Rotates one head vector in place.
    pub fn rotate(&self, x: &mut [f64], pos: Position) -> Result<(), AttentionError> {
        if x.len() != self.head_dim() {
            return Err(AttentionError::DimMismatch { expected: self.head_dim(), found: x.len() });
        }
        let (row, col) = x.split_at_mut(self.row_dims);
        rotate_axis(row, pos.0 as f64, self.base);
        rotate_axis(col, pos.1 as f64, self.base);
        Ok(())
    }
}

fn rotate_axis(x: &mut [f64], pos: f64, base: f64) {
    let n = x.len();
    for j in 0..n / 2 {
        let freq = base.powf(-((2 * j) as f64) / n as f64);
        let (s, c) = (pos * freq).sin_cos();
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        x[2 * j] = a * c - b * s;
        x[2 * j + 1] = a * s + b * c;
    }
}

/// Rotates `n` row-major head vectors (`vectors.len() == n * d_k`), one position each.
pub fn rope_embed(vectors: &[f64], positions: &[Position], spec: &RopeSpec) -> Result<Vec<f64>, AttentionError> {
    let dk = spec.head_dim();
    if dk == 0 || vectors.len() != positions.len() * dk {
        return Err(AttentionError::DimMismatch { expected: positions.len() * dk, found: vectors.len() });
    }
    let mut out = vectors.to_vec();
    for (chunk, &p) in out.chunks_exact_mut(dk).zip(positions) {
        spec.rotate(chunk, p)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn origin_is_identity() {
        let spec = RopeSpec::new(10_000.0, 4, 4).unwrap();
        let x = vec![0.3, -1.2, 0.5, 2.0, -0.7, 0.1, 0.9, -0.4];
        assert_eq!(rope_embed(&x, &[(0, 0)], &spec).unwrap(), x);
    }

    #[test]
    fn unit_vector_keeps_norm() {
        let spec = RopeSpec::new(10_000.0, 2, 2).unwrap();
        let x = vec![0.5, 0.5, 0.5, 0.5];
        let y = rope_embed(&x, &[(1, 0)], &spec).unwrap();
        assert!((norm(&y) - 1.0).abs() < 1e-6);
        assert_ne!(y, x);
    }

    #[test]
    fn first_pair_rotates_by_position() {
        let spec = RopeSpec::new(10_000.0, 2, 2).unwrap();
        let y = rope_embed(&[1.0, 0.0, 0.0, 0.0], &[(1, 0)], &spec).unwrap();
        assert!((y[0] - 1f64.cos()).abs() < 1e-15);
        assert!((y[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(RopeSpec::new(10_000.0, 3, 2).is_err());
        let spec = RopeSpec::new(10_000.0, 2, 2).unwrap();
        assert!(matches!(rope_embed(&[0.0; 5], &[(0, 0)], &spec), Err(AttentionError::DimMismatch { .. })));
    }

    #[test]
    fn default_split() {
        let s = RopeSpec::for_head_dim(6).unwrap();
        assert_eq!((s.row_dims, s.col_dims), (2, 4));
        let s = RopeSpec::for_head_dim(12).unwrap();
        assert_eq!((s.row_dims, s.col_dims), (6, 6));
    }
}
