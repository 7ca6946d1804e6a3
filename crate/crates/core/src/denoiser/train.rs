//! Noise-prediction training on motion residuals, optimized with Adam.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, Real};
use crate::codec::encode;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::residual::{assemble_model_input, residuals_from_latents, MotionResiduals};
use crate::ssim::{intensity_to_bucket, motion_intensity, MotionBucket};
use crate::video_io::{subsample_from, MotionClass, VideoClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub prompt_drop_prob: f64,
    pub seed: u64,
    /// Frames per training sample.
    pub n_frames: usize,
    /// Inclusive range of the frame stride used when subsampling long clips.
    pub interval: [usize; 2],
    pub patch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            n_steps: 5000,
            prompt_drop_prob: 0.5,
            seed: 0,
            n_frames: 16,
            interval: [3, 10],
            patch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prompt_drop_prob) {
            return Err(Error::config(format!(
                "prompt_drop_prob {} outside [0, 1]",
                self.prompt_drop_prob
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.n_frames < 2 {
            return Err(Error::config("training clips need at least two frames"));
        }
        if self.interval[0] == 0 || self.interval[0] > self.interval[1] {
            return Err(Error::config(format!("bad interval range {:?}", self.interval)));
        }
        Ok(())
    }
}

/// One clip's worth of training data, already in latent space.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub z1: Array3<f32>,
    pub residuals: MotionResiduals,
    pub bucket: MotionBucket,
    pub class: MotionClass,
}

/// The random quantities of one loss term.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Array4<f64>,
    /// Replace the class with the null class.
    pub drop_class: bool,
}

/// Picks a clip, stride and start offset, measures the bucket and encodes.
pub fn sample_example(clips: &[VideoClip], cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainExample> {
    if clips.is_empty() {
        return Err(Error::arg("training needs a non-empty dataset"));
    }
    let clip = &clips[rng.gen_range(0..clips.len())];
    let span = clip.n_frames().saturating_sub(1);
    let max_fit = span / (cfg.n_frames - 1);
    if max_fit < cfg.interval[0] {
        return Err(Error::arg(format!(
            "clip of {} frames is too short for {} frames at stride {}",
            clip.n_frames(),
            cfg.n_frames,
            cfg.interval[0]
        )));
    }
    let interval = rng.gen_range(cfg.interval[0]..=cfg.interval[1].min(max_fit));
    let start = rng.gen_range(0..=span - (cfg.n_frames - 1) * interval);
    let sub = subsample_from(clip, start, interval, cfg.n_frames)?;
    let bucket = intensity_to_bucket(motion_intensity(&sub)?);
    let latents = encode(&sub, cfg.patch)?;
    let residuals = residuals_from_latents(&latents)?;
    Ok(TrainExample {
        z1: latents.first().to_owned(),
        residuals,
        bucket,
        class: MotionClass(clip.meta.motion_class),
    })
}

pub fn draw_noise(example: &TrainExample, sched: &NoiseSchedule, drop_prob: f64, rng: &mut impl Rng) -> NoiseDraw {
    let t = rng.gen_range(1..=sched.steps());
    let eps = Array4::from_shape_simple_fn(example.residuals.m.raw_dim(), || rng.sample(StandardNormal));
    let drop_class = rng.gen_bool(drop_prob);
    NoiseDraw { t, eps, drop_class }
}

/// Mean squared error between the noise and the model's residual-frame prediction.
pub fn loss<T: Real>(model: &Denoiser<T>, batch: &[(TrainExample, NoiseDraw)], sched: &NoiseSchedule) -> Result<f64> {
    evaluate(model, batch, sched, None)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Real>(
    model: &Denoiser<T>,
    batch: &[(TrainExample, NoiseDraw)],
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<T>)> {
    let mut grad = vec![T::zero(); model.n_params()];
    let loss = evaluate(model, batch, sched, Some(&mut grad))?;
    Ok((loss, grad))
}

fn evaluate<T: Real>(
    model: &Denoiser<T>,
    batch: &[(TrainExample, NoiseDraw)],
    sched: &NoiseSchedule,
    mut grad: Option<&mut [T]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (example, draw) in batch {
        let m = &example.residuals.m;
        if draw.eps.shape() != m.shape() {
            return Err(Error::shape(format!(
                "noise {:?} vs residuals {:?}",
                draw.eps.shape(),
                m.shape()
            )));
        }
        let m_t = q_sample(m.view(), draw.t, draw.eps.view(), sched)?;
        let input = assemble_model_input(example.z1.view(), m_t.view())?;
        let class = if draw.drop_class {
            model.config().null_class()
        } else {
            example.class
        };
        let (x, dims) = model.to_channel_major(&input)?;
        let (out, cache) = model.forward_cached(x, dims, draw.t, example.bucket, class)?;

        let (frames, c, h, w) = m.dim();
        let hw = h * w;
        let l = dims.len();
        let count = (frames * c * hw) as f64;
        let mut sq = 0.0;
        let mut dout = grad.as_ref().map(|_| vec![T::zero(); out.len()]);
        for ((f, ci, y, xx), &e) in draw.eps.indexed_iter() {
            let idx = ci * l + (f + 1) * hw + y * w + xx;
            let diff = out[idx].to_f64().unwrap() - e;
            sq += diff * diff;
            if let Some(d) = dout.as_mut() {
                d[idx] = T::of(2.0 * diff * scale / count);
            }
        }
        total += sq / count * scale;
        if let (Some(g), Some(d)) = (grad.as_deref_mut(), dout) {
            model.backward(&cache, &d, g);
        }
    }
    Ok(total)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i].to_f64().unwrap();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let p = params[i].to_f64().unwrap() - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            params[i] = T::of(p);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Batch loss at steps `1..=n_steps`.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        smoothed_loss(&self.losses, window)
    }
}

/// Trailing mean over at most `window` values.
pub fn smoothed_loss(losses: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut sum = 0.0;
    for i in 0..losses.len() {
        sum += losses[i];
        if i >= window {
            sum -= losses[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Runs `cfg.n_steps` Adam steps. `on_step(step, loss)` is called after each one.
pub fn train<T: Real>(
    model: &mut Denoiser<T>,
    clips: &[VideoClip],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::arg("training needs a non-empty dataset"));
    }
    if cfg.patch != model.config().patch {
        return Err(Error::config(format!(
            "train patch {} vs model patch {}",
            cfg.patch,
            model.config().patch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.n_params(), cfg);
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.n_steps),
    };
    for step in 1..=cfg.n_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let example = sample_example(clips, cfg, &mut rng)?;
            let draw = draw_noise(&example, sched, cfg.prompt_drop_prob, &mut rng);
            batch.push((example, draw));
        }
        let (loss, grad) = loss_and_grad(model, &batch, sched)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!("loss {loss} at training step {step}")));
        }
        adam.update(model.params_mut(), &grad);
        report.losses.push(loss);
        on_step(step, loss);
    }
    Ok(report)
}
