//! RGB frames and their on-disk encodings.
//!
//! Frames are stored row-major, interleaved RGB, as `f32` in `[0, 1]`.
//! Two file encodings are supported: 8-bit PNG, and a raw planar float32
//! format with a `STGF` header.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::IoError;

pub const CHANNELS: usize = 3;

const FRAME_MAGIC: &[u8; 4] = b"STGF";

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, IoError> {
        if height == 0 || width == 0 {
            return Err(IoError::Format(format!("degenerate frame {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(IoError::Format(format!(
                "frame {height}x{width} expects {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Format("non-finite frame value".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Quantizes to 8-bit RGB, clamping to `[0, 1]` first.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self, IoError> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), IoError> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| IoError::Image(path.display().to_string(), e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Self, IoError> {
        let img = image::open(path)
            .map_err(|e| IoError::Image(path.display().to_string(), e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }

    /// Raw planar float32: `STGF`, u32 H, u32 W, u32 C, then C planes of H*W values.
    pub fn write_raw<W: Write>(&self, mut out: W) -> Result<(), IoError> {
        out.write_all(FRAME_MAGIC)?;
        for v in [self.height as u32, self.width as u32, CHANNELS as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        let plane = self.height * self.width;
        let mut buf = Vec::with_capacity(plane * CHANNELS * 4);
        for c in 0..CHANNELS {
            for p in 0..plane {
                buf.extend_from_slice(&self.data[p * CHANNELS + c].to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(mut input: R) -> Result<Self, IoError> {
        let header = read_header(&mut input, FRAME_MAGIC, 3)?;
        let (h, w, c) = (header[0] as usize, header[1] as usize, header[2] as usize);
        if c != CHANNELS {
            return Err(IoError::Format(format!("expected 3 channels, found {c}")));
        }
        let floats = read_f32s(&mut input, h * w * c)?;
        let plane = h * w;
        let mut data = vec![0.0; plane * c];
        for ch in 0..c {
            for p in 0..plane {
                data[p * c + ch] = floats[ch * plane + p];
            }
        }
        Self::new(h, w, data)
    }

    /// Loads by extension: `.png` or `.stgf`.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        match extension(path).as_deref() {
            Some("png") => Self::read_png(path),
            Some("stgf") => Self::read_raw(std::io::BufReader::new(std::fs::File::open(path)?)),
            other => Err(IoError::Format(format!("unsupported frame extension {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        match extension(path).as_deref() {
            Some("png") => self.write_png(path),
            Some("stgf") => self.write_raw(std::io::BufWriter::new(std::fs::File::create(path)?)),
            other => Err(IoError::Format(format!("unsupported frame extension {other:?}"))),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub(crate) fn read_header<R: Read>(input: &mut R, magic: &[u8; 4], n: usize) -> Result<Vec<u32>, IoError> {
    let mut m = [0u8; 4];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(IoError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        out.push(u32::from_le_bytes(b));
    }
    Ok(out)
}

pub(crate) fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>, IoError> {
    let mut bytes = vec![0u8; n * 4];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32s<W: Write>(out: &mut W, values: &[f32]) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_is_exact() {
        let f = Frame::from_fn(3, 5, |y, x| [y as f32 * 0.1, x as f32 * 0.05, 0.3]);
        let mut buf = Vec::new();
        f.write_raw(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"STGF");
        assert_eq!(buf.len(), 16 + 3 * 5 * 3 * 4);
        // planar: first plane holds red of every pixel
        let first = f32::from_le_bytes([buf[16], buf[17], buf[18], buf[19]]);
        assert_eq!(first, 0.0);
        let back = Frame::read_raw(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn png_round_trip_of_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let bytes: Vec<u8> = (0..4 * 6 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let f = Frame::from_rgb8(4, 6, &bytes).unwrap();
        f.save(&path).unwrap();
        let back = Frame::load(&path).unwrap();
        assert_eq!(back.to_rgb8(), bytes);
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Frame::new(0, 3, vec![]).is_err());
        assert!(Frame::new(1, 1, vec![0.0; 2]).is_err());
        assert!(Frame::new(1, 1, vec![f32::NAN, 0.0, 0.0]).is_err());
        assert!(Frame::read_raw(&b"XXXX\0\0\0\0"[..]).is_err());
    }
}
