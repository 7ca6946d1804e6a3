//! DCT and FFT noise refinement on one image.
//!
//! Prints how much of the refined noise sits in the low band, how far each
//! band is from its source, and what a wrap-around FFT does to a ramp.

use cinemo::codec::LatentCodec;
use cinemo::dctinit::{
    band_errors, low_band_energy_fraction, make_lowpass, noised_anchor, refine_noise, FilterKind, FreqMode,
    RefineConfig,
};
use cinemo::diffusion::make_schedule;
use cinemo::pipeline::seeded_noise;
use cinemo::video_io::{generate_clip, DatasetSpec, MotionClass};
use ndarray::Array4;

fn main() -> cinemo::Result<()> {
    let spec = DatasetSpec::default();
    let sched = make_schedule(1000, 1e-4, 2e-2)?;
    let image = generate_clip(&spec, MotionClass(0), 1.0, 5)?.frame(0).to_owned();
    let z1 = LatentCodec::with_patch(2).encode_frame(image.view())?;
    let (c, h, w) = z1.dim();
    let frames = spec.n_frames - 1;
    let (eps, noise_for_tau) = seeded_noise((frames, c, h, w), 0);

    println!(
        "{:<10} {:<5} {:>11} {:>11} {:>11}",
        "filter", "mode", "low band", "low err", "high err"
    );
    for kind in [FilterKind::Ideal, FilterKind::Gaussian] {
        for mode in [FreqMode::Dct, FreqMode::Fft] {
            let cfg = RefineConfig {
                filter: kind,
                mode,
                ..Default::default()
            };
            let refined = refine_noise(z1.view(), eps.view(), &cfg, &sched, noise_for_tau.view())?;
            let anchor = noised_anchor(z1.view(), frames, cfg.tau(&sched), noise_for_tau.view(), &sched)?;
            let filter = make_lowpass((frames, h, w), kind, cfg.cutoff_t, cfg.cutoff_s, mode)?;
            let (lo, hi) = band_errors(refined.view(), anchor.view(), eps.view(), filter.mask.view(), mode)?;
            let frac = low_band_energy_fraction(refined.view(), cfg.cutoff_t, cfg.cutoff_s, mode)?;
            println!(
                "{:<10} {:<5} {frac:>11.4} {lo:>11.2e} {hi:>11.2e}",
                format!("{kind:?}"),
                format!("{mode:?}")
            );
        }
    }
    let raw = low_band_energy_fraction(eps.view(), 0.25, 0.25, FreqMode::Dct)?;
    println!("unrefined noise low-band fraction: {raw:.4}");

    // a slow temporal ramp: compact under the DCT, smeared by the periodic FFT
    let ramp = Array4::from_shape_fn((16, 1, 8, 8), |(t, _, _, _)| t as f64 / 15.0);
    for mode in [FreqMode::Dct, FreqMode::Fft] {
        let frac = low_band_energy_fraction(ramp.view(), 0.1, 1.0, mode)?;
        println!("ramp energy below temporal cutoff 0.1 ({mode:?}): {frac:.4}");
    }
    Ok(())
}
