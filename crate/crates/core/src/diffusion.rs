//! Noise schedule, forward noising, deterministic DDIM steps (and their
//! inverse), classifier-free guidance and the sinusoidal conditioning
//! embeddings.
//!
//! Timesteps run `1..=T`; index 0 is the clean sample with `alpha_bar(0) = 1`.
//! All stochastic inputs are passed in explicitly.

use ndarray::{Array, ArrayView, Dimension, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssim::MotionBucket;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// `alpha_bars[t]` for `t` in `0..=T`, with `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Linear betas from `beta_start` to `beta_end` over `t = 1..=T`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::config(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        let lo = if allow_zero { 0 } else { 1 };
        if t < lo || t > self.steps() {
            return Err(Error::arg(format!("timestep {t} outside {lo}..={}", self.steps())));
        }
        Ok(())
    }
}

fn same_shape<A, B, D: Dimension>(a: &ArrayView<A, D>, b: &ArrayView<B, D>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn cast<F: Float>(v: f64) -> F {
    F::from(v).expect("float conversion")
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`, `t` in `1..=T`.
pub fn q_sample<F: Float, D: Dimension>(
    x0: ArrayView<F, D>,
    t: usize,
    eps: ArrayView<F, D>,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    sched.check_t(t, false)?;
    same_shape(&x0, &eps, "q_sample")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x0)
        .and(&eps)
        .map_collect(|&x, &e| cast(a * x.to_f64().unwrap() + b * e.to_f64().unwrap())))
}

/// One deterministic DDIM update from `t` down to `t_prev`.
pub fn ddim_step<F: Float, D: Dimension>(
    x_t: ArrayView<F, D>,
    eps_hat: ArrayView<F, D>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    sched.check_t(t, true)?;
    sched.check_t(t_prev, true)?;
    if t_prev > t {
        return Err(Error::arg(format!("ddim_step needs t >= t_prev, got {t} -> {t_prev}")));
    }
    same_shape(&x_t, &eps_hat, "ddim_step")?;
    Ok(transfer(x_t, eps_hat, sched.alpha_bar(t), sched.alpha_bar(t_prev)))
}

/// Inverse of [`ddim_step`]: moves from `t_prev` up to `t` under the same
/// noise prediction.
pub fn ddim_invert_step<F: Float, D: Dimension>(
    x_prev: ArrayView<F, D>,
    eps_hat: ArrayView<F, D>,
    t_prev: usize,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    sched.check_t(t, true)?;
    sched.check_t(t_prev, true)?;
    if t_prev > t {
        return Err(Error::arg(format!(
            "ddim_invert_step needs t_prev <= t, got {t_prev} -> {t}"
        )));
    }
    same_shape(&x_prev, &eps_hat, "ddim_invert_step")?;
    Ok(transfer(x_prev, eps_hat, sched.alpha_bar(t_prev), sched.alpha_bar(t)))
}

/// Re-expresses `x` from noise level `ab_from` at `ab_to`, keeping the
/// implied clean sample and noise fixed.
fn transfer<F: Float, D: Dimension>(x: ArrayView<F, D>, eps: ArrayView<F, D>, ab_from: f64, ab_to: f64) -> Array<F, D> {
    let (sa_from, sn_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (sa_to, sn_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    Zip::from(&x).and(&eps).map_collect(|&x, &e| {
        let (x, e) = (x.to_f64().unwrap(), e.to_f64().unwrap());
        let x0 = (x - sn_from * e) / sa_from;
        cast(sa_to * x0 + sn_to * e)
    })
}

/// `eps_uncond + w (eps_cond - eps_uncond)`.
pub fn cfg_combine<F: Float, D: Dimension>(
    eps_uncond: ArrayView<F, D>,
    eps_cond: ArrayView<F, D>,
    w: f64,
) -> Result<Array<F, D>> {
    same_shape(&eps_uncond, &eps_cond, "cfg_combine")?;
    if w == 1.0 {
        return Ok(eps_cond.to_owned());
    }
    if w == 0.0 {
        return Ok(eps_uncond.to_owned());
    }
    Ok(Zip::from(&eps_uncond).and(&eps_cond).map_collect(|&u, &c| {
        let (u, c) = (u.to_f64().unwrap(), c.to_f64().unwrap());
        cast(u + w * (c - u))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance_scale: 7.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > sched.steps() {
            return Err(Error::config(format!(
                "sampler steps {} outside 1..={}",
                self.steps,
                sched.steps()
            )));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::config(format!(
                "guidance scale {} must be >= 0",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// Descending sampling timesteps with a uniform stride of `T / steps`,
/// starting at `T`. The trajectory ends with a final step to `t = 0`.
pub fn sampling_timesteps(sched: &NoiseSchedule, steps: usize) -> Result<Vec<usize>> {
    let total = sched.steps();
    if steps == 0 || steps > total {
        return Err(Error::arg(format!(
            "{steps} sampling steps for a {total}-step schedule"
        )));
    }
    let stride = total / steps;
    Ok((0..steps).map(|k| total - k * stride).collect())
}

/// `(t, t_prev)` pairs for a full trajectory, ending at `t_prev = 0`.
pub fn sampling_pairs(sched: &NoiseSchedule, steps: usize) -> Result<Vec<(usize, usize)>> {
    let ts = sampling_timesteps(sched, steps)?;
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, ts.get(i + 1).copied().unwrap_or(0)))
        .collect())
}

/// Interleaved `[sin(p f_0), cos(p f_0), sin(p f_1), ...]` with
/// `f_i = 10000^(-i / (dim / 2))`.
pub fn sinusoidal_embedding(position: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::arg(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = position * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

pub fn timestep_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    sinusoidal_embedding(t as f64, dim)
}

pub fn bucket_embedding(b: MotionBucket, dim: usize) -> Result<Vec<f64>> {
    sinusoidal_embedding(b.get() as f64, dim)
}

/// `timestep_embedding(t) + bucket_embedding(b)`, shared by every frame.
pub fn conditioning_embedding(t: usize, b: MotionBucket, dim: usize) -> Result<Vec<f64>> {
    let te = timestep_embedding(t, dim)?;
    let be = bucket_embedding(b, dim)?;
    Ok(te.iter().zip(&be).map(|(a, b)| a + b).collect())
}
