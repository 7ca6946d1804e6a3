//! Residual encoding and DDIM inversion without a trained model.
//!
//! A real clip is turned into motion residuals and back, then inverted and
//! re-sampled with a constant noise predictor, for which DDIM is an exact
//! affine map per step.

use cinemo::codec::{encode, LatentCodec};
use cinemo::dctinit::RefineConfig;
use cinemo::diffusion::{make_schedule, SamplerConfig};
use cinemo::pipeline::{animate, invert, AnimateRequest, ConstantPredictor, InvertRequest};
use cinemo::residual::{latents_from_residuals, residuals_from_latents};
use cinemo::ssim::MotionBucket;
use cinemo::video_io::{generate_clip, subsample, DatasetSpec, MotionClass};

fn main() -> cinemo::Result<()> {
    let spec = DatasetSpec::default();
    let clip = subsample(&generate_clip(&spec, MotionClass(1), 1.0, 11)?, 5, spec.n_frames)?;
    let latents = encode(&clip, 2)?;
    let residuals = residuals_from_latents(&latents)?;
    let rebuilt = latents_from_residuals(latents.first(), &residuals)?;
    let max_err = rebuilt
        .iter()
        .zip(latents.z.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!(
        "{} residual frames, latent round trip max error {max_err:e}",
        residuals.n_residuals()
    );

    let sched = make_schedule(1000, 1e-4, 2e-2)?;
    let model = ConstantPredictor {
        value: 0.05,
        channels: latents.z.shape()[1],
    };
    let sampler = SamplerConfig {
        steps: 50,
        guidance_scale: 1.0,
    };
    let bucket = MotionBucket::new(10)?;
    let class = MotionClass(1);
    let codec = LatentCodec::with_patch(2);
    let noise = invert(
        &model,
        &clip,
        &InvertRequest {
            class,
            bucket,
            sampler,
            codec,
        },
        &sched,
    )?;
    println!("inverted noise std {:.3}", std_dev(noise.iter().copied()));

    let req = AnimateRequest {
        image: clip.frame(0).to_owned(),
        class,
        bucket,
        n_frames: clip.n_frames(),
        sampler,
        refine: RefineConfig::default(),
        seed: 0,
        codec,
        init_noise: Some(noise),
    };
    let anim = animate(&model, &req, &sched)?;
    let err = anim
        .video
        .frames()
        .iter()
        .zip(clip.frames().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("re-sampled clip max pixel error {err:e}");
    Ok(())
}

fn std_dev(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}
