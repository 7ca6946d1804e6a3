//! How the SSIM motion bucket tracks speed.
//!
//! One disc per speed, moving right; the measured `1 - s` and its bucket
//! should grow with speed and with the subsampling stride.

use cinemo::ssim::{intensity_to_bucket, motion_intensity, ssim};
use cinemo::video_io::{generate_clip, subsample, DatasetSpec, MotionClass};

fn main() -> cinemo::Result<()> {
    let spec = DatasetSpec::default();
    println!("{:>6} {:>7} {:>9} {:>7}", "speed", "stride", "1 - s", "bucket");
    for speed in [0.0f32, 0.25, 0.5, 1.0, 1.5] {
        let clip = generate_clip(&spec, MotionClass(0), speed, 7)?;
        for stride in [3, 6, 10] {
            let short = subsample(&clip, stride, spec.n_frames)?;
            let s = motion_intensity(&short)?;
            println!(
                "{speed:>6} {stride:>7} {:>9.4} {:>7}",
                s.motion(),
                intensity_to_bucket(s).get()
            );
        }
    }

    let clip = generate_clip(&spec, MotionClass(2), 1.0, 3)?;
    let score = ssim(clip.frame(0), clip.frame(0))?;
    println!(
        "\nssim of a frame with itself: {:.6} (global fallback: {})",
        score.value, score.global_fallback
    );
    let score = ssim(clip.frame(0), clip.frame(20))?;
    println!("ssim of frames 0 and 20 of a downward clip: {:.4}", score.value);
    Ok(())
}
