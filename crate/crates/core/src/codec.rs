//! Invertible pixel <-> latent transform.
//!
//! Each `k x k` spatial patch is folded into the channel axis (space-to-depth)
//! and values are mapped affinely, `z = gain * x + bias`. With the default
//! `gain = 2, bias = -1` a `[0, 1]` image lands in `[-1, 1]`.

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::{ClipMeta, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentCodec {
    pub patch: usize,
    pub gain: f32,
    pub bias: f32,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self {
            patch: 2,
            gain: 2.0,
            bias: -1.0,
        }
    }
}

impl LatentCodec {
    pub fn with_patch(patch: usize) -> Self {
        Self {
            patch,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::arg("patch size must be positive"));
        }
        if !(self.gain.is_finite() && self.gain != 0.0 && self.bias.is_finite()) {
            return Err(Error::arg("codec gain must be finite and non-zero"));
        }
        Ok(())
    }

    /// `(c, h, w)` of the latent for a `(C, H, W)` frame.
    pub fn latent_shape(&self, channels: usize, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        self.check()?;
        let k = self.patch;
        if height % k != 0 || width % k != 0 {
            return Err(Error::shape(format!(
                "{height}x{width} frame is not divisible by patch {k}"
            )));
        }
        Ok((channels * k * k, height / k, width / k))
    }

    pub fn encode_frame(&self, frame: ArrayView3<f32>) -> Result<Array3<f32>> {
        let (c, h, w) = frame.dim();
        let (lc, lh, lw) = self.latent_shape(c, h, w)?;
        let k = self.patch;
        Ok(Array3::from_shape_fn((lc, lh, lw), |(ch, y, x)| {
            let (ci, within) = (ch / (k * k), ch % (k * k));
            let (dy, dx) = (within / k, within % k);
            self.gain * frame[[ci, y * k + dy, x * k + dx]] + self.bias
        }))
    }

    pub fn decode_frame(&self, latent: ArrayView3<f32>, channels: usize) -> Result<Array3<f32>> {
        self.check()?;
        let k = self.patch;
        let (lc, lh, lw) = latent.dim();
        if channels == 0 || lc != channels * k * k {
            return Err(Error::shape(format!(
                "latent has {lc} channels, expected {channels} x {k}^2"
            )));
        }
        Ok(Array3::from_shape_fn((channels, lh * k, lw * k), |(ci, y, x)| {
            let ch = ci * k * k + (y % k) * k + (x % k);
            (latent[[ch, y / k, x / k]] - self.bias) / self.gain
        }))
    }
}

/// Latent frames of a clip plus what is needed to decode them.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    pub z: Array4<f32>,
    pub codec: LatentCodec,
    /// Channel count of the pixel clip.
    pub pixel_channels: usize,
    pub meta: ClipMeta,
}

impl LatentClip {
    pub fn n_frames(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn first(&self) -> ArrayView3<'_, f32> {
        self.z.index_axis(Axis(0), 0)
    }
}

pub fn encode(clip: &VideoClip, patch: usize) -> Result<LatentClip> {
    encode_with(clip, LatentCodec::with_patch(patch))
}

pub fn encode_with(clip: &VideoClip, codec: LatentCodec) -> Result<LatentClip> {
    let (c, h, w) = clip.frame_shape();
    let (lc, lh, lw) = codec.latent_shape(c, h, w)?;
    let mut z = Array4::<f32>::zeros((clip.n_frames(), lc, lh, lw));
    for (i, mut out) in z.axis_iter_mut(Axis(0)).enumerate() {
        out.assign(&codec.encode_frame(clip.frame(i))?);
    }
    Ok(LatentClip {
        z,
        codec,
        pixel_channels: c,
        meta: clip.meta,
    })
}

/// Exact inverse of [`encode`]; no clamping.
pub fn decode(latent: &LatentClip) -> Result<VideoClip> {
    let (n, lc, lh, lw) = latent.z.dim();
    let k = latent.codec.patch;
    if latent.pixel_channels == 0 || k == 0 || lc != latent.pixel_channels * k * k {
        return Err(Error::shape(format!(
            "latent with {lc} channels cannot hold {} pixel channels at patch {k}",
            latent.pixel_channels
        )));
    }
    let mut frames = Array4::<f32>::zeros((n, latent.pixel_channels, lh * k, lw * k));
    for (i, mut out) in frames.axis_iter_mut(Axis(0)).enumerate() {
        out.assign(
            &latent
                .codec
                .decode_frame(latent.z.index_axis(Axis(0), i), latent.pixel_channels)?,
        );
    }
    VideoClip::new(frames, latent.meta)
}
