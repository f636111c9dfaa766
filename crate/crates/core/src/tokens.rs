//! Per-frame latent token maps and the lossless patchify codec.

use std::io::{Read, Write};

use crate::error::IoError;
use crate::frame::{read_f32s, read_header, write_f32s, Frame, CHANNELS};

const TOKEN_MAGIC: &[u8; 4] = b"STTK";

/// `h x w` grid of `d`-dimensional tokens, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMap {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl TokenMap {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self, IoError> {
        if h == 0 || w == 0 || d == 0 {
            return Err(IoError::Format(format!("degenerate token map {h}x{w}x{d}")));
        }
        if data.len() != h * w * d {
            return Err(IoError::Format(format!(
                "token map {h}x{w}x{d} expects {} values, got {}",
                h * w * d,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Format("non-finite token".into()));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self { h, w, d, data: vec![0.0; h * w * d] }
    }

    pub fn from_fn(h: usize, w: usize, d: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w * d);
        for y in 0..h {
            for x in 0..w {
                for c in 0..d {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { h, w, d, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.d)
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn token(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.w + x) * self.d;
        &self.data[i..i + self.d]
    }

    #[inline]
    pub fn token_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = (y * self.w + x) * self.d;
        &mut self.data[i..i + self.d]
    }

    /// Row `i` in flattened position order.
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { h: self.h, w: self.w, d: self.d, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), IoError> {
        out.write_all(TOKEN_MAGIC)?;
        for v in [self.h as u32, self.w as u32, self.d as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        write_f32s(&mut out, &self.data)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, IoError> {
        let hdr = read_header(&mut input, TOKEN_MAGIC, 3)?;
        let (h, w, d) = (hdr[0] as usize, hdr[1] as usize, hdr[2] as usize);
        let data = read_f32s(&mut input, h * w * d)?;
        Self::new(h, w, d, data)
    }
}

/// Non-overlapping `p x p` patchify: token channel `(dy * p + dx) * 3 + c`
/// holds pixel `(y * p + dy, x * p + dx)`, channel `c`. Lossless.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchCodec {
    pub patch: usize,
}

impl PatchCodec {
    pub fn new(patch: usize) -> Self {
        Self { patch }
    }

    pub fn token_dim(&self) -> usize {
        CHANNELS * self.patch * self.patch
    }

    pub fn token_dims(&self, height: usize, width: usize) -> Result<(usize, usize), IoError> {
        let p = self.patch;
        if p == 0 || height % p != 0 || width % p != 0 {
            return Err(IoError::Format(format!("frame {height}x{width} not divisible by patch {p}")));
        }
        Ok((height / p, width / p))
    }

    pub fn encode(&self, frame: &Frame) -> Result<TokenMap, IoError> {
        let (th, tw) = self.token_dims(frame.height(), frame.width())?;
        let p = self.patch;
        let d = self.token_dim();
        let src = frame.data();
        let fw = frame.width();
        let mut data = vec![0.0; th * tw * d];
        for ty in 0..th {
            for tx in 0..tw {
                let base = (ty * tw + tx) * d;
                for dy in 0..p {
                    for dx in 0..p {
                        let pi = ((ty * p + dy) * fw + tx * p + dx) * CHANNELS;
                        let ti = base + (dy * p + dx) * CHANNELS;
                        data[ti..ti + CHANNELS].copy_from_slice(&src[pi..pi + CHANNELS]);
                    }
                }
            }
        }
        Ok(TokenMap { h: th, w: tw, d, data })
    }

    pub fn decode(&self, tokens: &TokenMap) -> Result<Frame, IoError> {
        let p = self.patch;
        if tokens.d != self.token_dim() {
            return Err(IoError::Format(format!("token dim {} != {}", tokens.d, self.token_dim())));
        }
        let (fh, fw) = (tokens.h * p, tokens.w * p);
        let mut data = vec![0.0; fh * fw * CHANNELS];
        for ty in 0..tokens.h {
            for tx in 0..tokens.w {
                let tok = tokens.token(ty, tx);
                for dy in 0..p {
                    for dx in 0..p {
                        let pi = ((ty * p + dy) * fw + tx * p + dx) * CHANNELS;
                        let ti = (dy * p + dx) * CHANNELS;
                        data[pi..pi + CHANNELS].copy_from_slice(&tok[ti..ti + CHANNELS]);
                    }
                }
            }
        }
        Frame::new(fh, fw, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn patchify_layout() {
        let f = Frame::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.0, 1.0]);
        let tm = PatchCodec::new(2).encode(&f).unwrap();
        assert_eq!(tm.shape(), (2, 2, 12));
        // token (0,1) covers pixels (0,2),(0,3),(1,2),(1,3)
        let tok = tm.token(0, 1);
        assert_eq!(tok[0], 2.0 / 16.0);
        assert_eq!(tok[3], 3.0 / 16.0);
        assert_eq!(tok[6], 6.0 / 16.0);
        assert_eq!(tok[9], 7.0 / 16.0);
    }

    #[test]
    fn rejects_indivisible_frames() {
        let f = Frame::filled(5, 4, [0.0; 3]);
        assert!(PatchCodec::new(2).encode(&f).is_err());
    }

    #[test]
    fn sttk_round_trip() {
        let tm = TokenMap::from_fn(2, 3, 4, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let mut buf = Vec::new();
        tm.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"STTK");
        assert_eq!(TokenMap::read(&buf[..]).unwrap(), tm);
    }

    proptest! {
        #[test]
        fn patchify_is_lossless(th in 1usize..5, tw in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
            let mut s = seed;
            let f = Frame::from_fn(th * p, tw * p, |_, _| {
                let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 40) as f32 / (1u64 << 24) as f32 };
                [next(), next(), next()]
            });
            let codec = PatchCodec::new(p);
            let back = codec.decode(&codec.encode(&f).unwrap()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
