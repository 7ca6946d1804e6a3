//! Desk-scale metrics: first-frame fidelity, bucket response and temporal jumps.

use std::collections::BTreeMap;

use ndarray::{ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::pipeline::{animate, AnimateRequest, NoisePredictor};
use crate::ssim::{motion_intensity, MotionBucket};
use crate::video_io::VideoClip;

/// PSNR reported in JSON for an exact match.
pub const PSNR_CAP: f64 = 99.0;
const JUMP_EPS: f64 = 1e-8;

/// PSNR in dB for signals in `[0, 1]`; `+inf` when the frames are identical.
pub fn psnr(a: ArrayView3<f32>, b: ArrayView3<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("psnr of {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape("psnr of empty frames"));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

pub fn capped_psnr(db: f64) -> f64 {
    db.min(PSNR_CAP)
}

/// PSNR between frame 0 of `generated` and the conditioning image.
pub fn first_frame_error(generated: &VideoClip, image: ArrayView3<f32>) -> Result<f64> {
    psnr(generated.frame(0), image)
}

/// Mean absolute difference between consecutive frames.
pub fn frame_differences(clip: &VideoClip) -> Vec<f64> {
    let frames = clip.frames();
    (1..clip.n_frames())
        .map(|i| {
            let (a, b) = (frames.index_axis(Axis(0), i), frames.index_axis(Axis(0), i - 1));
            a.iter()
                .zip(b.iter())
                .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
                .sum::<f64>()
                / a.len() as f64
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// `max d_i / (median d_i + 1e-8)` over consecutive-frame differences `d_i`.
/// A static clip scores 0.
pub fn jump_score(clip: &VideoClip) -> Result<f64> {
    if clip.n_frames() < 3 {
        return Err(Error::arg("jump score needs at least three frames"));
    }
    let d = frame_differences(clip);
    let max = d.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    Ok(max / (median(&d) + JUMP_EPS))
}

/// Measured motion `1 - s` of a generated clip, on its displayable `[0, 1]` range.
pub fn measured_motion(clip: &VideoClip) -> Result<f64> {
    Ok(motion_intensity(&clip.clamped())?.motion())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResponse {
    pub bucket: MotionBucket,
    pub mean_motion: f64,
    pub per_seed: Vec<f64>,
}

/// Animates `base` once per bucket and seed and averages the measured motion.
pub fn bucket_response<P: NoisePredictor>(
    model: &P,
    base: &AnimateRequest,
    buckets: &[MotionBucket],
    seeds: &[u64],
    sched: &NoiseSchedule,
) -> Result<Vec<BucketResponse>> {
    if seeds.is_empty() {
        return Err(Error::arg("bucket response needs at least one seed"));
    }
    buckets
        .iter()
        .map(|&bucket| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let req = AnimateRequest {
                        bucket,
                        seed,
                        init_noise: None,
                        ..base.clone()
                    };
                    measured_motion(&animate(model, &req, sched)?.video)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean_motion = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            if !mean_motion.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite motion for bucket {}",
                    bucket.get()
                )));
            }
            Ok(BucketResponse {
                bucket,
                mean_motion,
                per_seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Capped at [`PSNR_CAP`] for exact matches.
    pub first_frame_psnr: f64,
    /// Mean `1 - s` keyed by requested bucket.
    pub measured_intensity: BTreeMap<u8, f64>,
    /// Median jump score over the generated clips.
    pub jump_score: f64,
    pub n_seeds: usize,
}

/// Bucket response plus worst first-frame PSNR and median jump score over
/// every generated clip.
pub fn evaluate<P: NoisePredictor>(
    model: &P,
    base: &AnimateRequest,
    buckets: &[MotionBucket],
    seeds: &[u64],
    sched: &NoiseSchedule,
) -> Result<EvalReport> {
    if seeds.is_empty() || buckets.is_empty() {
        return Err(Error::arg("evaluation needs at least one bucket and one seed"));
    }
    let mut measured_intensity = BTreeMap::new();
    let mut worst_psnr = f64::INFINITY;
    let mut jumps = Vec::new();
    for &bucket in buckets {
        let mut motions = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let req = AnimateRequest {
                bucket,
                seed,
                init_noise: None,
                ..base.clone()
            };
            let video = animate(model, &req, sched)?.video;
            worst_psnr = worst_psnr.min(first_frame_error(&video, base.image.view())?);
            let shown = video.clamped();
            motions.push(motion_intensity(&shown)?.motion());
            if shown.n_frames() >= 3 {
                jumps.push(jump_score(&shown)?);
            }
        }
        measured_intensity.insert(bucket.get(), motions.iter().sum::<f64>() / motions.len() as f64);
    }
    Ok(EvalReport {
        first_frame_psnr: capped_psnr(worst_psnr),
        measured_intensity,
        jump_score: if jumps.is_empty() { 0.0 } else { median(&jumps) },
        n_seeds: seeds.len(),
    })
}
