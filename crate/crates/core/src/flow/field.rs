//! Dense displacement fields and binary validity masks.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::frame::{read_f32s, read_header, write_f32s};

const FLOW_MAGIC: &[u8; 4] = b"STFL";
const MASK_MAGIC: &[u8; 4] = b"STMK";

/// Which lattice a field lives on. Displacements are in units of that lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Pixel,
    Token,
}

/// `h x w` field of `(dx, dy)` displacements.
///
/// `F_{t->t-1}(p)` is the offset added to `p` in frame `t` to reach the
/// corresponding point of frame `t-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    h: usize,
    w: usize,
    resolution: Resolution,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(h: usize, w: usize, resolution: Resolution, data: Vec<f32>) -> Result<Self, IoError> {
        if h == 0 || w == 0 || data.len() != h * w * 2 {
            return Err(IoError::Format(format!("flow {h}x{w} with {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Format("non-finite flow".into()));
        }
        Ok(Self { h, w, resolution, data })
    }

    pub fn zeros(h: usize, w: usize, resolution: Resolution) -> Self {
        Self { h, w, resolution, data: vec![0.0; h * w * 2] }
    }

    pub fn constant(h: usize, w: usize, resolution: Resolution, d: [f32; 2]) -> Self {
        Self::from_fn(h, w, resolution, |_, _| d)
    }

    pub fn from_fn(h: usize, w: usize, resolution: Resolution, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { h, w, resolution, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> [f32; 2] {
        let i = (y * self.w + x) * 2;
        [self.data[i], self.data[i + 1]]
    }

    pub fn negated(&self) -> Self {
        Self { h: self.h, w: self.w, resolution: self.resolution, data: self.data.iter().map(|v| -v).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), IoError> {
        out.write_all(FLOW_MAGIC)?;
        out.write_all(&(self.h as u32).to_le_bytes())?;
        out.write_all(&(self.w as u32).to_le_bytes())?;
        write_f32s(&mut out, &self.data)
    }

    /// The file carries no resolution tag; the caller supplies it.
    pub fn read<R: Read>(mut input: R, resolution: Resolution) -> Result<Self, IoError> {
        let hdr = read_header(&mut input, FLOW_MAGIC, 2)?;
        let (h, w) = (hdr[0] as usize, hdr[1] as usize);
        let data = read_f32s(&mut input, h * w * 2)?;
        Self::new(h, w, resolution, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path, resolution: Resolution) -> Result<Self, IoError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?), resolution)
    }
}

/// Binary `h x w` mask; 1 marks a valid position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl ValidityMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self, IoError> {
        if data.len() != h * w || data.iter().any(|&b| b > 1) {
            return Err(IoError::Format(format!("mask {h}x{w} must hold {} values in {{0,1}}", h * w)));
        }
        Ok(Self { h, w, data })
    }

    pub fn all_valid(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![1; h * w] }
    }

    pub fn all_invalid(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        Self { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&b| b == 1).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.count_valid() as f64 / self.data.len() as f64
    }

    pub fn intersect(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Self { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect() }
    }

    pub fn complement(&self) -> Self {
        Self { h: self.h, w: self.w, data: self.data.iter().map(|b| 1 - b).collect() }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), IoError> {
        out.write_all(MASK_MAGIC)?;
        out.write_all(&(self.h as u32).to_le_bytes())?;
        out.write_all(&(self.w as u32).to_le_bytes())?;
        out.write_all(&self.data)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, IoError> {
        let hdr = read_header(&mut input, MASK_MAGIC, 2)?;
        let (h, w) = (hdr[0] as usize, hdr[1] as usize);
        let mut data = vec![0u8; h * w];
        input.read_exact(&mut data)?;
        Self::new(h, w, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_file_layout() {
        let f = FlowField::from_fn(2, 3, Resolution::Pixel, |y, x| [x as f32, -(y as f32)]);
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"STFL");
        assert_eq!(buf.len(), 12 + 2 * 3 * 2 * 4);
        // (dx, dy) interleaved: second pixel's dx at float index 2
        let dx1 = f32::from_le_bytes(buf[12 + 8..12 + 12].try_into().unwrap());
        assert_eq!(dx1, 1.0);
        assert_eq!(FlowField::read(&buf[..], Resolution::Pixel).unwrap(), f);
    }

    #[test]
    fn mask_file_layout() {
        let m = ValidityMask::from_fn(3, 2, |y, x| (x + y) % 2 == 0);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"STMK");
        assert_eq!(&buf[12..], &[1, 0, 0, 1, 1, 0]);
        assert_eq!(ValidityMask::read(&buf[..]).unwrap(), m);
        assert!(ValidityMask::new(1, 1, vec![2]).is_err());
    }
}
