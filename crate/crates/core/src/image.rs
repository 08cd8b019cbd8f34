//! Dense row-major image storage used for renders, masks, and latents'
//! decoded frames. Values are f64; color images live in linear RGB.

use crate::error::{Result, SplatError};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Image::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(SplatError::invalid_input(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] += v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn require_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(SplatError::invalid_input(format!(
                "{what}: shape mismatch {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Elementwise product with a mask image. The mask may either match this
    /// image's channel count or be single-channel (broadcast over channels).
    pub fn hadamard(&self, mask: &Image) -> Result<Image> {
        if mask.width != self.width || mask.height != self.height {
            return Err(SplatError::invalid_input("hadamard: spatial shape mismatch"));
        }
        let mut out = self.clone();
        if mask.channels == self.channels {
            for (o, m) in out.data.iter_mut().zip(mask.data.iter()) {
                *o *= m;
            }
        } else if mask.channels == 1 {
            for y in 0..self.height {
                for x in 0..self.width {
                    let m = mask.get(x, y, 0);
                    for c in 0..self.channels {
                        let i = out.idx(x, y, c);
                        out.data[i] *= m;
                    }
                }
            }
        } else {
            return Err(SplatError::invalid_input("hadamard: incompatible channel counts"));
        }
        Ok(out)
    }

    /// 2x average pooling. Odd trailing rows/columns are averaged over the
    /// pixels that exist, so any size down to 1x1 is representable.
    pub fn avg_pool2(&self) -> Image {
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let mut out = Image::zeros(ow, oh, self.channels);
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..self.channels {
                    let mut sum = 0.0;
                    let mut n = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let x = ox * 2 + dx;
                            let y = oy * 2 + dy;
                            if x < self.width && y < self.height {
                                sum += self.get(x, y, c);
                                n += 1.0;
                            }
                        }
                    }
                    out.set(ox, oy, c, sum / n);
                }
            }
        }
        out
    }

    /// Adjoint of [`avg_pool2`]: distributes an upstream gradient back onto
    /// the contributing source pixels.
    pub fn avg_pool2_backward(&self, upstream: &Image) -> Image {
        let mut out = Image::zeros(self.width, self.height, self.channels);
        for oy in 0..upstream.height {
            for ox in 0..upstream.width {
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        if ox * 2 + dx < self.width && oy * 2 + dy < self.height {
                            n += 1.0;
                        }
                    }
                }
                for c in 0..self.channels {
                    let g = upstream.get(ox, oy, c) / n;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let x = ox * 2 + dx;
                            let y = oy * 2 + dy;
                            if x < self.width && y < self.height {
                                out.add(x, y, c, g);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Writes a binary PPM (P6, 8-bit). Requires 3 channels.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(SplatError::invalid_input("write_ppm requires a 3-channel image"));
        }
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        buf.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for &v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Writes a binary PGM (P5, 8-bit). Requires a single channel.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if self.channels != 1 {
            return Err(SplatError::invalid_input("write_pgm requires a 1-channel image"));
        }
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        buf.extend_from_slice(format!("P5\n{} {}\n255\n", self.width, self.height).as_bytes());
        for &v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (magic, w, h, maxval, pixels) = parse_pnm(&bytes)?;
        if magic != b"P6" {
            return Err(SplatError::Parse("expected P6 magic".into()));
        }
        if pixels.len() != w * h * 3 {
            return Err(SplatError::Parse("short PPM payload".into()));
        }
        let data = pixels.iter().map(|&b| b as f64 / maxval as f64).collect();
        Image::from_data(w, h, 3, data)
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (magic, w, h, maxval, pixels) = parse_pnm(&bytes)?;
        if magic != b"P5" {
            return Err(SplatError::Parse("expected P5 magic".into()));
        }
        if pixels.len() != w * h {
            return Err(SplatError::Parse("short PGM payload".into()));
        }
        let data = pixels.iter().map(|&b| b as f64 / maxval as f64).collect();
        Image::from_data(w, h, 1, data)
    }
}

fn parse_pnm(bytes: &[u8]) -> Result<(&[u8], usize, usize, u32, &[u8])> {
    // Header: magic, width, height, maxval, separated by whitespace with
    // optional '#' comments, followed by a single whitespace byte.
    let mut pos = 0usize;
    let mut fields: Vec<Vec<u8>> = Vec::new();
    let magic = &bytes[..2.min(bytes.len())];
    pos += 2;
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        fields.push(bytes[start..pos].to_vec());
    }
    if fields.len() != 3 {
        return Err(SplatError::Parse("truncated PNM header".into()));
    }
    pos += 1; // single whitespace after maxval
    let parse_usize = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SplatError::Parse("bad PNM header field".into()))
    };
    let w = parse_usize(&fields[0])?;
    let h = parse_usize(&fields[1])?;
    let maxval = parse_usize(&fields[2])? as u32;
    if maxval == 0 || maxval > 255 {
        return Err(SplatError::Parse("unsupported PNM maxval".into()));
    }
    Ok((magic, w, h, maxval, &bytes[pos..]))
}
