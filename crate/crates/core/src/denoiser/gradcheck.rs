//! Central finite-difference verification of the analytic gradients.

use ndarray::{Array3, Array4};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::train::{loss, loss_and_grad, NoiseDraw, TrainExample};
use super::{Activation, Denoiser, DenoiserConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::residual::MotionResiduals;
use crate::ssim::MotionBucket;
use crate::video_io::MotionClass;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare by absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub n_coords: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_coords: 200,
            h: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_coords: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Name of the tensor holding the worst coordinate.
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Two frames, 4 latent channels, 8x8 latents, one block.
pub fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        latent_channels: 4,
        base_channels: 4,
        n_blocks: 1,
        embed_dim: 8,
        n_classes: 4,
        patch: 1,
        activation: Activation::Silu,
        single_conv: false,
        ..DenoiserConfig::default()
    }
}

/// One convolution, identity activation: the loss is quadratic in the parameters.
pub fn linear_config() -> DenoiserConfig {
    DenoiserConfig {
        activation: Activation::Identity,
        single_conv: true,
        ..tiny_config()
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Random two-frame batch of two samples; the second drops its class.
pub fn tiny_batch(cfg: &DenoiserConfig, sched: &NoiseSchedule, seed: u64) -> Vec<(TrainExample, NoiseDraw)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.latent_channels;
    (0..2)
        .map(|i| {
            let z1 = Array3::from_shape_simple_fn((c, 8, 8), || rng.gen_range(-1.0f32..1.0));
            let m = Array4::from_shape_simple_fn((1, c, 8, 8), || 0.3 * rng.sample::<f64, _>(StandardNormal));
            let eps = Array4::from_shape_simple_fn((1, c, 8, 8), || rng.sample(StandardNormal));
            let example = TrainExample {
                z1,
                residuals: MotionResiduals::new(m),
                bucket: MotionBucket::new(rng.gen_range(0..20)).unwrap(),
                class: MotionClass(rng.gen_range(0..cfg.n_classes as u32)),
            };
            let draw = NoiseDraw {
                t: rng.gen_range(1..=sched.steps()),
                eps,
                drop_class: i == 1,
            };
            (example, draw)
        })
        .collect()
}

/// Gives every zero-initialized output weight a random value, so gradients
/// reach the whole network.
pub fn randomize_output(model: &mut Denoiser<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["conv_out.weight", "conv_out.bias"] {
        if let Some(w) = model.param_mut(name) {
            w.iter_mut()
                .for_each(|v| *v = 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

pub fn grad_check(
    model: &Denoiser<f64>,
    batch: &[(TrainExample, NoiseDraw)],
    sched: &NoiseSchedule,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let n = model.n_params();
    if cfg.n_coords == 0 || cfg.n_coords > n {
        return Err(Error::arg(format!("cannot sample {} of {n} coordinates", cfg.n_coords)));
    }
    let (_, analytic) = loss_and_grad(model, batch, sched)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords = sample(&mut rng, n, cfg.n_coords).into_vec();
    coords.sort_unstable();

    let mut probe = model.clone();
    let mut worst = (0.0, 0usize, 0.0, 0.0);
    let mut sum = 0.0;
    for &i in &coords {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + cfg.h;
        let plus = loss(&probe, batch, sched)?;
        probe.params_mut()[i] = orig - cfg.h;
        let minus = loss(&probe, batch, sched)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let err = relative_error(analytic[i], numeric);
        sum += err;
        if err >= worst.0 {
            worst = (err, i, analytic[i], numeric);
        }
    }
    let worst_param = model
        .layout()
        .entries()
        .iter()
        .find(|e| e.range.contains(&worst.1))
        .map(|e| e.name.clone())
        .unwrap_or_default();
    Ok(GradCheckReport {
        n_coords: coords.len(),
        max_rel_error: worst.0,
        mean_rel_error: sum / coords.len() as f64,
        worst_param,
        worst_analytic: worst.2,
        worst_numeric: worst.3,
    })
}

/// Builds a model from `model_cfg`, randomizes its output layer and checks it
/// on [`tiny_batch`].
pub fn check_config(model_cfg: DenoiserConfig, sched: &NoiseSchedule, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut model = Denoiser::<f64>::init(model_cfg.clone(), cfg.seed)?;
    randomize_output(&mut model, cfg.seed.wrapping_add(1));
    let batch = tiny_batch(&model_cfg, sched, cfg.seed.wrapping_add(2));
    grad_check(&model, &batch, sched, cfg)
}
