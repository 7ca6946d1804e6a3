//! Image animation and DDIM inversion over motion residuals.

use std::fs;
use std::path::Path;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codec::{encode_with, LatentCodec};
use crate::dctinit::{refine_noise, RefineConfig};
use crate::denoiser::{Denoiser, Real};
use crate::diffusion::{cfg_combine, ddim_invert_step, ddim_step, sampling_pairs, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::residual::{
    assemble_model_input, latents_from_residuals, residuals_from_latents, ModelInput, MotionResiduals,
};
use crate::ssim::MotionBucket;
use crate::video_io::{ClipMeta, MotionClass, VideoClip};

/// Anything that predicts the noise of every frame of a model input.
pub trait NoisePredictor {
    fn latent_channels(&self) -> usize;
    fn null_class(&self) -> MotionClass;
    fn predict(&self, input: &ModelInput, t: usize, bucket: MotionBucket, class: MotionClass) -> Result<Array4<f64>>;
}

impl<T: Real> NoisePredictor for Denoiser<T> {
    fn latent_channels(&self) -> usize {
        self.config().latent_channels
    }

    fn null_class(&self) -> MotionClass {
        self.config().null_class()
    }

    fn predict(&self, input: &ModelInput, t: usize, bucket: MotionBucket, class: MotionClass) -> Result<Array4<f64>> {
        self.forward(input, t, bucket, class)
    }
}

/// Predicts the same value everywhere, whatever the conditioning.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor {
    pub value: f64,
    pub channels: usize,
}

impl NoisePredictor for ConstantPredictor {
    fn latent_channels(&self) -> usize {
        self.channels
    }

    fn null_class(&self) -> MotionClass {
        MotionClass(u32::MAX)
    }

    fn predict(&self, input: &ModelInput, _t: usize, _b: MotionBucket, _c: MotionClass) -> Result<Array4<f64>> {
        Ok(Array4::from_elem(input.x.raw_dim(), self.value))
    }
}

#[derive(Debug, Clone)]
pub struct AnimateRequest {
    /// `C x H x W` input image.
    pub image: Array3<f32>,
    pub class: MotionClass,
    pub bucket: MotionBucket,
    pub n_frames: usize,
    pub sampler: SamplerConfig,
    pub refine: RefineConfig,
    pub seed: u64,
    pub codec: LatentCodec,
    /// Starting residual noise, e.g. from [`invert`]. Used as-is, without refinement.
    pub init_noise: Option<Array4<f64>>,
}

#[derive(Debug, Clone)]
pub struct Animation {
    pub video: VideoClip,
    pub latents: Array4<f32>,
    /// Residual noise the sampler started from, after any refinement.
    pub initial_noise: Array4<f64>,
    pub residuals: MotionResiduals,
}

/// Classifier-free guided residual noise estimate.
fn guided_eps<P: NoisePredictor>(
    model: &P,
    input: &ModelInput,
    t: usize,
    bucket: MotionBucket,
    class: MotionClass,
    w: f64,
) -> Result<Array4<f64>> {
    let cond = model.predict(input, t, bucket, class)?;
    let cond = cond.slice(s![1.., .., .., ..]);
    if w == 1.0 {
        return Ok(cond.to_owned());
    }
    let uncond = model.predict(input, t, bucket, model.null_class())?;
    cfg_combine(uncond.slice(s![1.., .., .., ..]), cond, w)
}

fn check_finite(x: &Array4<f64>, step: usize, t: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!(
            "non-finite residuals at sampling step {step} (t = {t})"
        )));
    }
    Ok(())
}

/// The two seeded Gaussian draws behind [`initial_noise`]: the residual noise
/// and the noise used to bring the anchor to level `tau`.
pub fn seeded_noise(shape: (usize, usize, usize, usize), seed: u64) -> (Array4<f64>, Array4<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Array4::from_shape_simple_fn(shape, || rng.sample(StandardNormal));
    let noise_for_tau = Array4::from_shape_simple_fn(shape, || rng.sample(StandardNormal));
    (eps, noise_for_tau)
}

/// Seeded starting noise for the residual stack, refined when enabled.
pub fn initial_noise(
    z1: ArrayView3<f32>,
    n_frames: usize,
    refine: &RefineConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Array4<f64>> {
    let (c, h, w) = z1.dim();
    let (eps, noise_for_tau) = seeded_noise((n_frames - 1, c, h, w), seed);
    refine_noise(z1, eps.view(), refine, sched, noise_for_tau.view())
}

pub fn animate<P: NoisePredictor>(model: &P, req: &AnimateRequest, sched: &NoiseSchedule) -> Result<Animation> {
    req.sampler.validate(sched)?;
    if req.n_frames < 2 {
        return Err(Error::arg("animation needs at least two frames"));
    }
    let pixel_channels = req.image.shape()[0];
    let z1 = req.codec.encode_frame(req.image.view())?;
    if z1.shape()[0] != model.latent_channels() {
        return Err(Error::shape(format!(
            "image encodes to {} channels, model expects {}",
            z1.shape()[0],
            model.latent_channels()
        )));
    }
    let (c, h, w) = z1.dim();
    let m_init = match &req.init_noise {
        Some(noise) => {
            if noise.dim() != (req.n_frames - 1, c, h, w) {
                return Err(Error::shape(format!(
                    "initial noise {:?} vs expected {:?}",
                    noise.shape(),
                    (req.n_frames - 1, c, h, w)
                )));
            }
            noise.clone()
        }
        None => initial_noise(z1.view(), req.n_frames, &req.refine, sched, req.seed)?,
    };

    let mut m = m_init.clone();
    for (step, (t, t_prev)) in sampling_pairs(sched, req.sampler.steps)?.into_iter().enumerate() {
        let input = assemble_model_input(z1.view(), m.view())?;
        let eps = guided_eps(model, &input, t, req.bucket, req.class, req.sampler.guidance_scale)?;
        check_finite(&eps, step, t)?;
        m = ddim_step(m.view(), eps.view(), t, t_prev, sched)?;
        check_finite(&m, step, t)?;
    }

    let residuals = MotionResiduals::new(m);
    let latents = latents_from_residuals(z1.view(), &residuals)?;
    let mut frames = Array4::zeros((req.n_frames, pixel_channels, req.image.shape()[1], req.image.shape()[2]));
    for (i, z) in latents.axis_iter(Axis(0)).enumerate() {
        frames
            .index_axis_mut(Axis(0), i)
            .assign(&req.codec.decode_frame(z, pixel_channels)?);
    }
    let meta = ClipMeta {
        motion_class: req.class.0,
        speed: 0.0,
        seed: req.seed,
    };
    let video = VideoClip::new(frames, meta)?;
    Ok(Animation {
        video,
        latents,
        initial_noise: m_init,
        residuals,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct InvertRequest {
    pub class: MotionClass,
    pub bucket: MotionBucket,
    pub sampler: SamplerConfig,
    pub codec: LatentCodec,
}

/// Runs the deterministic sampler backwards from the video's residuals to the
/// starting noise level. The model at each step sees the less noisy state.
pub fn invert<P: NoisePredictor>(
    model: &P,
    video: &VideoClip,
    req: &InvertRequest,
    sched: &NoiseSchedule,
) -> Result<Array4<f64>> {
    req.sampler.validate(sched)?;
    let latents = encode_with(video, req.codec)?;
    if latents.z.shape()[1] != model.latent_channels() {
        return Err(Error::shape(format!(
            "video encodes to {} channels, model expects {}",
            latents.z.shape()[1],
            model.latent_channels()
        )));
    }
    let z1 = latents.first().to_owned();
    let mut m = residuals_from_latents(&latents)?.m;
    let pairs = sampling_pairs(sched, req.sampler.steps)?;
    for (step, &(t, t_prev)) in pairs.iter().enumerate().rev() {
        let input = assemble_model_input(z1.view(), m.view())?;
        let eps = guided_eps(model, &input, t, req.bucket, req.class, req.sampler.guidance_scale)?;
        check_finite(&eps, step, t)?;
        m = ddim_invert_step(m.view(), eps.view(), t_prev, t, sched)?;
        check_finite(&m, step, t)?;
    }
    Ok(m)
}

pub const NOISE_MAGIC: &[u8; 4] = b"CNMN";
pub const NOISE_VERSION: u32 = 1;

/// Writes `"CNMN" | version | ndim | dims (u32) | f64 data | crc32`, little-endian.
pub fn save_noise(noise: &Array4<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + noise.len() * 8);
    buf.extend_from_slice(NOISE_MAGIC);
    buf.extend_from_slice(&NOISE_VERSION.to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    for &d in noise.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in noise.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_noise(path: &Path) -> Result<Array4<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 32 || &bytes[..4] != NOISE_MAGIC {
        return Err(Error::corrupt("not a noise file (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::corrupt("noise file checksum mismatch"));
    }
    let word = |i: usize| u32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    if word(1) != NOISE_VERSION as usize {
        return Err(Error::Unsupported(format!("noise file version {}", word(1))));
    }
    if word(2) != 4 {
        return Err(Error::corrupt(format!("noise tensor has {} dims, expected 4", word(2))));
    }
    let dims = (word(3), word(4), word(5), word(6));
    let data = &body[28..];
    if data.len() != dims.0 * dims.1 * dims.2 * dims.3 * 8 {
        return Err(Error::corrupt("noise payload size does not match its shape"));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array4::from_shape_vec(dims, values)?)
}
