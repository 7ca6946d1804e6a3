//! Structural similarity and the clip-level motion intensity built on it.
//!
//! SSIM uses the canonical settings: an 11x11 Gaussian window with
//! `sigma = 1.5`, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, `L = 1`, evaluated
//! at every position where the window fits inside the frame. Each channel's
//! SSIM map is averaged, then the channel scores are averaged.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::VideoClip;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const DYNAMIC_RANGE: f64 = 1.0;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const N_BUCKETS: u8 = 20;

pub fn c1() -> f64 {
    (K1 * DYNAMIC_RANGE).powi(2)
}

pub fn c2() -> f64 {
    (K2 * DYNAMIC_RANGE).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimScore {
    pub value: f64,
    /// The frame was smaller than the window, so a single set of global
    /// statistics replaced the windowed map.
    pub global_fallback: bool,
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let centre = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" filtering: output is `(H - 10) x (W - 10)`.
fn filter_valid(img: &Array2<f64>, taps: &[f64; WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * img[[y, x + k]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[[y + k, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

fn ssim_formula(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let (c1, c2) = (c1(), c2());
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn ssim_channel(a: ArrayView2<f32>, b: ArrayView2<f32>) -> (f64, bool) {
    let a = a.mapv(f64::from);
    let b = b.mapv(f64::from);
    let (h, w) = a.dim();
    if h < WINDOW || w < WINDOW {
        let n = (h * w) as f64;
        let mu_a = a.sum() / n;
        let mu_b = b.sum() / n;
        let var_a = (&a * &a).sum() / n - mu_a * mu_a;
        let var_b = (&b * &b).sum() / n - mu_b * mu_b;
        let cov = (&a * &b).sum() / n - mu_a * mu_b;
        return (ssim_formula(mu_a, mu_b, var_a, var_b, cov), true);
    }
    let taps = gaussian_taps();
    let mu_a = filter_valid(&a, &taps);
    let mu_b = filter_valid(&b, &taps);
    let e_aa = filter_valid(&(&a * &a), &taps);
    let e_bb = filter_valid(&(&b * &b), &taps);
    let e_ab = filter_valid(&(&a * &b), &taps);
    let mut total = 0.0;
    for (((&ma, &mb), (&aa, &bb)), &ab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(e_aa.iter().zip(e_bb.iter()))
        .zip(e_ab.iter())
    {
        total += ssim_formula(ma, mb, aa - ma * ma, bb - mb * mb, ab - ma * mb);
    }
    (total / mu_a.len() as f64, false)
}

/// SSIM of two `C x H x W` frames.
pub fn ssim(a: ArrayView3<f32>, b: ArrayView3<f32>) -> Result<SsimScore> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("ssim of {:?} vs {:?}", a.shape(), b.shape())));
    }
    let channels = a.shape()[0];
    if channels == 0 || a.shape()[1] == 0 || a.shape()[2] == 0 {
        return Err(Error::shape("ssim of an empty frame"));
    }
    let mut total = 0.0;
    let mut fallback = false;
    for (ca, cb) in a.axis_iter(Axis(0)).zip(b.axis_iter(Axis(0))) {
        let (v, f) = ssim_channel(ca, cb);
        total += v;
        fallback |= f;
    }
    Ok(SsimScore {
        value: total / channels as f64,
        global_fallback: fallback,
    })
}

/// Mean SSIM between consecutive frames. High means little motion.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MotionIntensity(pub f64);

impl MotionIntensity {
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - s`, the amount of motion.
    pub fn motion(self) -> f64 {
        1.0 - self.0
    }
}

pub fn motion_intensity(clip: &VideoClip) -> Result<MotionIntensity> {
    let n = clip.n_frames();
    if n < 2 {
        return Err(Error::arg("motion intensity needs at least two frames"));
    }
    let mut total = 0.0;
    for i in 1..n {
        total += ssim(clip.frame(i), clip.frame(i - 1))?.value;
    }
    Ok(MotionIntensity(total / (n - 1) as f64))
}

/// Motion bucket in `0..=19`; larger means more motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MotionBucket(u8);

impl MotionBucket {
    pub const MAX: u8 = N_BUCKETS - 1;

    pub fn new(b: u8) -> Result<Self> {
        if b > Self::MAX {
            return Err(Error::arg(format!("motion bucket {b} outside 0..={}", Self::MAX)));
        }
        Ok(Self(b))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for MotionBucket {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        Self::new(b)
    }
}

impl From<MotionBucket> for u8 {
    fn from(b: MotionBucket) -> u8 {
        b.0
    }
}

/// `b = min(19, floor((1 - clamp(s, 0, 1)) * 20))`. NaN maps to bucket 0.
pub fn intensity_to_bucket(s: MotionIntensity) -> MotionBucket {
    let clamped = s.0.clamp(0.0, 1.0);
    let raw = ((1.0 - clamped) * N_BUCKETS as f64).floor();
    // `as` saturates and sends NaN to 0
    MotionBucket((raw as u8).min(MotionBucket::MAX))
}
