//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! when a hard criterion fails.
//!
//! Criteria 10 to 12 train the default model for 5000 steps (about a quarter
//! of an hour on one core). Set `CINEMO_ACCEPTANCE_CKPT` to a checkpoint path
//! to reuse a trained model: if the file exists it is loaded and criterion 10
//! is reported as skipped, otherwise the trained model is written there.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use cinemo::cli::main_with_args;
use cinemo::codec::{decode, encode, LatentCodec};
use cinemo::dctinit::{
    dct3, fft3, idct3, ifft3, low_band_energy_fraction, refine_noise, spectral_blend, FreqMode, RefineConfig,
};
use cinemo::denoiser::checkpoint::{load_checkpoint, save_checkpoint};
use cinemo::denoiser::gradcheck::{check_config, tiny_config, GradCheckConfig};
use cinemo::denoiser::train::{train, TrainConfig};
use cinemo::denoiser::{Denoiser, DenoiserConfig};
use cinemo::diffusion::{
    cfg_combine, ddim_invert_step, ddim_step, make_schedule, q_sample, sampling_pairs, NoiseSchedule, SamplerConfig,
};
use cinemo::eval::{bucket_response, jump_score, median};
use cinemo::pipeline::{animate, AnimateRequest, Animation};
use cinemo::residual::{latents_from_residuals, residuals_from_latents};
use cinemo::ssim::{intensity_to_bucket, motion_intensity, ssim, MotionBucket, MotionIntensity};
use cinemo::video_io::{generate_clip, generate_dataset, write_png, DatasetSpec, MotionClass, VideoClip};
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    soft: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        name,
        pass,
        soft: false,
        detail,
    }
}

fn sched() -> NoiseSchedule {
    make_schedule(1000, 1e-4, 2e-2).unwrap()
}

fn normal4(seed: u64, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn max_abs(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---- oracles ----

/// Textbook orthonormal DCT-II along one axis, summed directly.
fn naive_dct_axis(x: &Array4<f64>, axis: usize) -> Array4<f64> {
    let n = x.shape()[axis];
    let mut out = Array4::zeros(x.raw_dim());
    for (mut o, i) in out.lanes_mut(Axis(axis)).into_iter().zip(x.lanes(Axis(axis))) {
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            o[k] = scale
                * (0..n)
                    .map(|j| i[j] * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64).cos())
                    .sum::<f64>();
        }
    }
    out
}

fn naive_dct3(x: &Array4<f64>) -> Array4<f64> {
    naive_dct_axis(&naive_dct_axis(&naive_dct_axis(x, 0), 2), 3)
}

/// Ideal DCT low band: every axis index below `rho` times its length.
fn ideal_dct_mask(k: usize, y: usize, x: usize, (n, h, w): (usize, usize, usize), rho: f64) -> bool {
    (k as f64) < rho * n as f64 && (y as f64) < rho * h as f64 && (x as f64) < rho * w as f64
}

/// Windowed SSIM computed window by window from its definition.
fn oracle_ssim(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let sigma = 1.5f64;
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let gs: f64 = g.iter().sum();
    let weight = Array2::from_shape_fn((11, 11), |(i, j)| g[i] * g[j] / (gs * gs));
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (ch, h, w) = a.dim();
    let mut total = 0.0;
    for c in 0..ch {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        ma += weight[[i, j]] * a[[c, y0 + i, x0 + j]];
                        mb += weight[[i, j]] * b[[c, y0 + i, x0 + j]];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let (da, db) = (a[[c, y0 + i, x0 + j]] - ma, b[[c, y0 + i, x0 + j]] - mb);
                        va += weight[[i, j]] * da * da;
                        vb += weight[[i, j]] * db * db;
                        cov += weight[[i, j]] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / ch as f64
}

// ---- criteria ----

fn c1_transforms() -> Outcome {
    let start = Instant::now();
    let x = normal4(1, (15, 12, 16, 16));
    let d = dct3(x.view());
    let dct_rt = max_abs(&idct3(d.view()), &x);
    let textbook = max_abs(&d, &naive_dct3(&x));
    let f = fft3(x.view());
    let fft_rt = max_abs(&ifft3(f.view()), &x);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let dct_energy: f64 = d.iter().map(|v| v * v).sum();
    let fft_energy: f64 = f.iter().map(|v| v.norm_sqr()).sum();
    let parseval = ((dct_energy - energy).abs()).max((fft_energy - energy).abs()) / energy;
    let elapsed = start.elapsed();
    // the textbook comparison is slow by construction and not part of the budget
    let timed = {
        let t = Instant::now();
        let d = dct3(x.view());
        let _ = idct3(d.view());
        let f = fft3(x.view());
        let _ = ifft3(f.view());
        t.elapsed()
    };
    outcome(
        1,
        "transform correctness",
        dct_rt < 1e-6 && fft_rt < 1e-6 && parseval < 1e-6 && textbook < 1e-9 && timed < Duration::from_secs(1),
        format!(
            "idct(dct) {dct_rt:.1e}, ifft(fft) {fft_rt:.1e}, parseval rel {parseval:.1e}, vs textbook {textbook:.1e}, transforms {} (total {})",
            secs(timed),
            secs(elapsed)
        ),
    )
}

fn c2_band_preservation() -> Outcome {
    let start = Instant::now();
    let sched = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z1 = Array3::from_shape_simple_fn((12, 16, 16), || rng.gen_range(-1.0f32..1.0));
    let shape = (15, 12, 16, 16);
    let eps = normal4(3, shape);
    let nz = normal4(4, shape);
    let ab = sched.alpha_bar(999);
    let z1_tau = Array4::from_shape_fn(shape, |(k, c, y, x)| {
        ab.sqrt() * f64::from(z1[[c, y, x]]) + (1.0 - ab).sqrt() * nz[[k, c, y, x]]
    });
    let (dz, de) = (naive_dct3(&z1_tau), naive_dct3(&eps));
    let mut worst: f64 = 0.0;
    let mut refine_time = Duration::ZERO;
    for rho in [0.1, 0.25, 0.5] {
        let cfg = RefineConfig {
            cutoff_t: rho,
            cutoff_s: rho,
            ..Default::default()
        };
        let t = Instant::now();
        let refined = refine_noise(z1.view(), eps.view(), &cfg, &sched, nz.view()).unwrap();
        refine_time += t.elapsed();
        let dr = naive_dct3(&refined);
        for ((k, c, y, x), &r) in dr.indexed_iter() {
            let target = if ideal_dct_mask(k, y, x, (15, 16, 16), rho) {
                dz[[k, c, y, x]]
            } else {
                de[[k, c, y, x]]
            };
            worst = worst.max((r - target).abs());
        }
    }
    let mut degenerate = true;
    for mode in [FreqMode::Dct, FreqMode::Fft] {
        let ones = spectral_blend(z1_tau.view(), eps.view(), Array3::ones((15, 16, 16)).view(), mode).unwrap();
        let zeros = spectral_blend(z1_tau.view(), eps.view(), Array3::zeros((15, 16, 16)).view(), mode).unwrap();
        degenerate &= ones == z1_tau && zeros == eps;
    }
    outcome(
        2,
        "DCTInit band preservation",
        worst < 1e-6 && degenerate && refine_time < Duration::from_secs(1),
        format!(
            "max band error {worst:.1e} over rho 0.1/0.25/0.5, degenerate masks exact: {degenerate}, refine {} (total {})",
            secs(refine_time),
            secs(start.elapsed())
        ),
    )
}

fn c3_energy_compaction() -> Outcome {
    let start = Instant::now();
    let n = 16;
    let ramp = Array4::from_shape_fn((n, 1, 8, 8), |(t, _, _, _)| t as f64 / (n - 1) as f64);
    let dct = low_band_energy_fraction(ramp.view(), 0.1, 1.0, FreqMode::Dct).unwrap();
    let fft = low_band_energy_fraction(ramp.view(), 0.1, 1.0, FreqMode::Fft).unwrap();
    // oracle on the temporal profile alone: DCT bins 0 and 1, DFT bin 0
    let r: Vec<f64> = (0..n).map(|t| t as f64 / (n - 1) as f64).collect();
    let total: f64 = r.iter().map(|v| v * v).sum();
    let dct_bin = |k: usize| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale
            * (0..n)
                .map(|j| r[j] * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64).cos())
                .sum::<f64>()
    };
    let oracle_dct = (dct_bin(0).powi(2) + dct_bin(1).powi(2)) / total;
    let oracle_fft = r.iter().sum::<f64>().powi(2) / n as f64 / total;
    let agree = (dct - oracle_dct).abs() < 1e-9 && (fft - oracle_fft).abs() < 1e-9;
    let elapsed = start.elapsed();
    outcome(
        3,
        "energy compaction DCT vs FFT",
        dct - fft >= 0.05 && agree && elapsed < Duration::from_secs(1),
        format!(
            "low-band fraction DCT {dct:.4}, FFT {fft:.4}, margin {:.4}, oracle agrees: {agree}, {}",
            dct - fft,
            secs(elapsed)
        ),
    )
}

fn c4_ssim_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut self_exact = true;
    for i in 0..100 {
        let a = Array3::from_shape_simple_fn((3, 32, 32), || rng.gen::<f32>());
        let b = match i % 3 {
            0 => Array3::from_shape_simple_fn((3, 32, 32), || rng.gen::<f32>()),
            1 => a.mapv(|v| (v + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0)),
            _ => a.mapv(|v| 0.5 * v + 0.2),
        };
        let lib = ssim(a.view(), b.view()).unwrap().value;
        let oracle = oracle_ssim(&a.mapv(f64::from), &b.mapv(f64::from));
        worst = worst.max((lib - oracle).abs());
        self_exact &= ssim(a.view(), a.view()).unwrap().value == 1.0;
    }
    let elapsed = start.elapsed();
    outcome(
        4,
        "SSIM oracle agreement",
        worst < 1e-8 && self_exact && elapsed < Duration::from_secs(10),
        format!(
            "max |lib - oracle| {worst:.1e} over 100 pairs, ssim(x, x) == 1: {self_exact}, {}",
            secs(elapsed)
        ),
    )
}

fn c5_bucket_map() -> Outcome {
    let ends =
        intensity_to_bucket(MotionIntensity(1.0)).get() == 0 && intensity_to_bucket(MotionIntensity(0.0)).get() == 19;
    let sweep: Vec<u8> = (0..1000)
        .map(|i| intensity_to_bucket(MotionIntensity(i as f64 / 999.0)).get())
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    let spec = DatasetSpec {
        speed_range: [0.0, 8.0],
        n_frames_long: 20,
        n_frames: 2,
        ..Default::default()
    };
    let mut speed_buckets = Vec::new();
    for speed in [0.0f32, 1.0, 2.0, 4.0, 8.0] {
        let clip = generate_clip(&spec, MotionClass(0), speed, 5).unwrap();
        speed_buckets.push(intensity_to_bucket(motion_intensity(&clip).unwrap()).get());
    }
    let speeds_ok = speed_buckets.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        5,
        "bucket map",
        ends && monotone && speeds_ok,
        format!("endpoints ok: {ends}, sweep non-increasing: {monotone}, speed 0/1/2/4/8 buckets {speed_buckets:?}"),
    )
}

fn test_model(seed: u64) -> Denoiser<f32> {
    let mut model = Denoiser::<f32>::init(DenoiserConfig::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["conv_out.weight", "conv_out.bias"] {
        model
            .param_mut(name)
            .unwrap()
            .iter_mut()
            .for_each(|v| *v = 0.05 * rng.sample::<f32, _>(StandardNormal));
    }
    model
}

fn base_request(image: Array3<f32>, class: u32, bucket: u8, seed: u64) -> AnimateRequest {
    AnimateRequest {
        image,
        class: MotionClass(class),
        bucket: MotionBucket::new(bucket).unwrap(),
        n_frames: 16,
        sampler: SamplerConfig::default(),
        refine: RefineConfig::default(),
        seed,
        codec: LatentCodec::with_patch(2),
        init_noise: None,
    }
}

fn c6_exactness(model: &Denoiser<f32>, clips: &[VideoClip]) -> Outcome {
    let mut residual_exact = true;
    let mut codec_err: f32 = 0.0;
    for clip in clips.iter().take(10) {
        let latents = encode(clip, 2).unwrap();
        let res = residuals_from_latents(&latents).unwrap();
        let rebuilt = latents_from_residuals(latents.first(), &res).unwrap();
        residual_exact &= rebuilt
            .iter()
            .zip(latents.z.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let back = decode(&latents).unwrap();
        codec_err = back
            .frames()
            .iter()
            .zip(clip.frames().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(codec_err, f32::max);
    }
    let sched = sched();
    let mut frame0_err: f32 = 0.0;
    for (i, clip) in clips.iter().take(3).enumerate() {
        let req = base_request(clip.frame(0).to_owned(), clip.meta.motion_class, 9, i as u64);
        let anim = animate(model, &req, &sched).unwrap();
        let err = anim
            .video
            .frame(0)
            .iter()
            .zip(clip.frame(0).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        frame0_err = frame0_err.max(err);
    }
    outcome(
        6,
        "residual and codec exactness",
        residual_exact && codec_err <= 1e-7 && frame0_err <= 1e-7,
        format!("residual round trip bit-exact: {residual_exact}, decode(encode) {codec_err:.1e}, animated frame 0 {frame0_err:.1e}"),
    )
}

fn c7_forward_stats() -> Outcome {
    let sched = sched();
    let n = 10_000;
    let x0 = Array1::from_elem(n, 0.7f64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pass = true;
    let mut detail = Vec::new();
    for t in [1, 500, 999] {
        let eps = Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal));
        let xt = q_sample(x0.view(), t, eps.view(), &sched).unwrap();
        let ab = sched.alpha_bar(t);
        let (mean_true, var_true) = (ab.sqrt() * 0.7, 1.0 - ab);
        let mean = xt.sum() / n as f64;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (se_mean, se_var) = ((var_true / n as f64).sqrt(), var_true * (2.0 / (n - 1) as f64).sqrt());
        let (zm, zv) = ((mean - mean_true) / se_mean, (var - var_true) / se_var);
        pass &= zm.abs() < 3.0 && zv.abs() < 3.0;
        detail.push(format!("t={t}: mean z {zm:+.2}, var z {zv:+.2}"));
    }
    outcome(7, "forward-process statistics", pass, detail.join("; "))
}

fn c8_ddim_algebra() -> Outcome {
    let sched = sched();
    let x0 = normal4(8, (4, 3, 8, 8));
    let eps = normal4(9, (4, 3, 8, 8));
    let mut recover: f64 = 0.0;
    for t in [1, 20, 500, 999, 1000] {
        let xt = q_sample(x0.view(), t, eps.view(), &sched).unwrap();
        let back = ddim_step(xt.view(), eps.view(), t, 0, &sched).unwrap();
        recover = recover.max(max_abs(&back, &x0));
    }
    // 50-step trajectory under a constant prediction, then inverted
    let pairs = sampling_pairs(&sched, 50).unwrap();
    let constant = Array4::from_elem((4, 3, 8, 8), 0.3);
    let start = normal4(10, (4, 3, 8, 8));
    let mut x = start.clone();
    for &(t, t_prev) in &pairs {
        x = ddim_step(x.view(), constant.view(), t, t_prev, &sched).unwrap();
    }
    for &(t, t_prev) in pairs.iter().rev() {
        x = ddim_invert_step(x.view(), constant.view(), t_prev, t, &sched).unwrap();
    }
    let round_trip = max_abs(&x, &start);
    let u = normal4(11, (2, 3, 4, 4));
    let c = normal4(12, (2, 3, 4, 4));
    let cfg_ok =
        cfg_combine(u.view(), c.view(), 0.0).unwrap() == u && cfg_combine(u.view(), c.view(), 1.0).unwrap() == c;
    outcome(
        8,
        "DDIM algebra",
        recover <= 1e-5 && round_trip <= 1e-4 && cfg_ok,
        format!("x0 recovery {recover:.1e}, invert(sample) over 50 steps {round_trip:.1e}, cfg w=0/1 exact: {cfg_ok}"),
    )
}

fn c9_gradients() -> Outcome {
    let start = Instant::now();
    let report = check_config(tiny_config(), &sched(), GradCheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    outcome(
        9,
        "gradient correctness",
        report.max_rel_error < 1e-3 && report.n_coords == 200 && elapsed < Duration::from_secs(60),
        format!(
            "max rel error {:.2e} (mean {:.2e}, worst in {}) over {} coords, {}",
            report.max_rel_error,
            report.mean_rel_error,
            report.worst_param,
            report.n_coords,
            secs(elapsed)
        ),
    )
}

fn c10_training(clips: &[VideoClip]) -> (Outcome, Denoiser<f32>) {
    let sched = sched();
    let ckpt = std::env::var_os("CINEMO_ACCEPTANCE_CKPT").map(PathBuf::from);
    if let Some(path) = ckpt.as_ref().filter(|p| p.exists()) {
        let model = load_checkpoint(path).unwrap();
        let o = Outcome {
            id: 10,
            name: "end-to-end training",
            pass: true,
            soft: true,
            detail: format!("SKIPPED, loaded {}", path.display()),
        };
        return (o, model);
    }
    let cfg = TrainConfig::default();
    let mut model = Denoiser::<f32>::init(DenoiserConfig::default(), 0).unwrap();
    let start = Instant::now();
    let report = train(&mut model, clips, &cfg, &sched, |step, _| {
        if step % 1000 == 0 {
            eprintln!("  training step {step}, {}", secs(start.elapsed()));
        }
    })
    .unwrap();
    let elapsed = start.elapsed();
    if let Some(path) = ckpt {
        save_checkpoint(&model, &path).unwrap();
    }
    let smoothed = report.smoothed(50);
    let (early, late) = (smoothed[49], smoothed[cfg.n_steps - 1]);
    let ratio = late / early;
    let o = outcome(
        10,
        "end-to-end training",
        ratio < 0.3 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "smoothed loss {early:.4} at step 50 -> {late:.4} at step {} (ratio {ratio:.3}), batch {}, {}",
            cfg.n_steps,
            cfg.batch_size,
            secs(elapsed)
        ),
    );
    (o, model)
}

fn fmt_list(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

fn c11_controllability(model: &Denoiser<f32>, clips: &[VideoClip]) -> Outcome {
    let sched = sched();
    let clip = &clips[0];
    let base = base_request(clip.frame(0).to_owned(), clip.meta.motion_class, 0, 0);
    let buckets: Vec<MotionBucket> = [0u8, 9, 18].iter().map(|&b| MotionBucket::new(b).unwrap()).collect();
    let seeds: Vec<u64> = (0..20).collect();
    let responses = bucket_response(model, &base, &buckets, &seeds, &sched).unwrap();
    let means: Vec<f64> = responses.iter().map(|r| r.mean_motion).collect();
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    let ratio = means[2] / means[0];
    outcome(
        11,
        "motion controllability",
        increasing && ratio >= 2.0,
        format!(
            "mean 1-s at buckets 0/9/18: {} (b18/b0 = {ratio:.2})",
            fmt_list(&means, 4)
        ),
    )
}

fn jump_scores(model: &Denoiser<f32>, base: &AnimateRequest, refine: bool) -> Vec<f64> {
    let sched = sched();
    (0..20)
        .map(|seed| {
            let req = AnimateRequest {
                seed,
                refine: RefineConfig {
                    enabled: refine,
                    ..base.refine
                },
                ..base.clone()
            };
            jump_score(&animate(model, &req, &sched).unwrap().video.clamped()).unwrap()
        })
        .collect()
}

fn c12_dctinit_behaviour(model: &Denoiser<f32>, clips: &[VideoClip]) -> Outcome {
    let clip = &clips[0];
    let base = base_request(clip.frame(0).to_owned(), clip.meta.motion_class, 12, 0);
    let on = jump_scores(model, &base, true);
    let off = jump_scores(model, &base, false);
    let (m_on, m_off) = (median(&on), median(&off));
    Outcome {
        id: 12,
        name: "DCTInit jump score",
        pass: m_on <= m_off,
        soft: true,
        detail: format!(
            "median jump with {m_on:.3}, without {m_off:.3}; with {}; without {}",
            fmt_list(&on, 2),
            fmt_list(&off, 2)
        ),
    }
}

fn read_outputs(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    (
        std::fs::read(dir.join("animation.raw")).unwrap(),
        std::fs::read(dir.join("initial_noise.cnmn")).unwrap(),
    )
}

fn c13_determinism(model: &Denoiser<f32>, clips: &[VideoClip]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(model, &ckpt).unwrap();
    let image = dir.path().join("image.png");
    write_png(clips[1].frame(0), &image).unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let args: Vec<String> = vec![
            "cinemo".into(),
            "animate".into(),
            "--checkpoint".into(),
            ckpt.display().to_string(),
            "--image".into(),
            image.display().to_string(),
            "--class".into(),
            clips[1].meta.motion_class.to_string(),
            "--bucket".into(),
            "10".into(),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            out.display().to_string(),
        ];
        (main_with_args(args), out)
    };
    let (code_a, out_a) = run("a");
    let (code_b, out_b) = run("b");
    let same_files = code_a == 0 && code_b == 0 && read_outputs(&out_a) == read_outputs(&out_b);

    let sched = sched();
    let req = base_request(clips[1].frame(0).to_owned(), clips[1].meta.motion_class, 10, 42);
    let a: Animation = animate(model, &req, &sched).unwrap();
    let b: Animation = animate(model, &req, &sched).unwrap();
    let same_tensors = a.video == b.video && a.latents == b.latents && a.initial_noise == b.initial_noise;
    outcome(
        13,
        "determinism",
        same_files && same_tensors,
        format!("cli exit codes {code_a}/{code_b}, identical files: {same_files}, identical tensors: {same_tensors}"),
    )
}

fn report(o: &Outcome) {
    let status = match (o.pass, o.soft) {
        (true, _) => "PASS",
        (false, true) => "FAIL (soft)",
        (false, false) => "FAIL",
    };
    println!("criterion {:>2} {:<32} {status}: {}", o.id, o.name, o.detail);
}

fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    for f in [
        c1_transforms,
        c2_band_preservation,
        c3_energy_compaction,
        c4_ssim_oracle,
        c5_bucket_map,
        c7_forward_stats,
        c8_ddim_algebra,
        c9_gradients,
    ] {
        let o = f();
        report(&o);
        outcomes.push(o);
    }
    let clips = generate_dataset(&DatasetSpec::default(), 0).unwrap();
    let o = c6_exactness(&test_model(6), &clips);
    report(&o);
    outcomes.push(o);

    let (o, model) = c10_training(&clips);
    report(&o);
    outcomes.push(o);
    for f in [c11_controllability, c12_dctinit_behaviour, c13_determinism] {
        let o = f(&model, &clips);
        report(&o);
        outcomes.push(o);
    }

    outcomes.sort_by_key(|o| o.id);
    let hard_failures: Vec<u32> = outcomes.iter().filter(|o| !o.pass && !o.soft).map(|o| o.id).collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {}",
        outcomes.len(),
        secs(start.elapsed())
    );
    if !hard_failures.is_empty() {
        println!("hard failures: {hard_failures:?}");
        std::process::exit(1);
    }
}
