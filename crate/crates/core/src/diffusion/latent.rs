//! The frame-stack latent evolved by the denoising samplers.

use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::math::standard_normal;
use rand::Rng;

/// A tensor of shape frames x height x width x channels, stored row-major
/// with channels interleaved per pixel and frames as the outermost axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLatent {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SequenceLatent {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        SequenceLatent {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn standard_normal<R: Rng + ?Sized>(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut s = SequenceLatent::zeros(frames, height, width, channels);
        for v in s.data.iter_mut() {
            *v = standard_normal(rng);
        }
        s
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
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

    pub fn frame(&self, j: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn frame_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[j * n..(j + 1) * n]
    }

    /// Stacks per-frame images (matching height/width/channels) into a latent.
    pub fn from_images(frames: &[Image]) -> Result<Self> {
        if frames.is_empty() {
            return Err(SplatError::invalid_input("from_images: empty frame list"));
        }
        let (h, w, c) = (frames[0].height(), frames[0].width(), frames[0].channels());
        let mut out = SequenceLatent::zeros(frames.len(), h, w, c);
        for (j, f) in frames.iter().enumerate() {
            if f.height() != h || f.width() != w || f.channels() != c {
                return Err(SplatError::invalid_input("from_images: frame shape mismatch"));
            }
            out.frame_mut(j).copy_from_slice(f.data());
        }
        Ok(out)
    }

    pub fn to_images(&self) -> Vec<Image> {
        (0..self.frames)
            .map(|j| {
                Image::from_data(self.width, self.height, self.channels, self.frame(j).to_vec())
                    .expect("frame dimensions are consistent by construction")
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SequenceLatent {
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape());
        SequenceLatent {
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// self += other * scale.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
