//! Generate the moving-shapes corpus, print its motion statistics and write
//! a few preview GIFs.
//!
//! cargo run --release --example generate_dataset -- [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use cinemo::ssim::{intensity_to_bucket, motion_intensity};
use cinemo::video_io::{export_clip, generate_dataset, subsample, DatasetSpec, ExportFormat, MotionClass};

fn main() -> cinemo::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/dataset".into()));
    let spec = DatasetSpec::default();
    let clips = generate_dataset(&spec, 0)?;
    println!(
        "{} clips of {:?} frames x {:?}",
        clips.len(),
        spec.n_frames_long,
        clips[0].frame_shape()
    );

    let mut per_class: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut buckets = [0usize; 20];
    for clip in &clips {
        // same stride range as training
        let short = subsample(clip, 6, spec.n_frames)?;
        let s = motion_intensity(&short)?;
        per_class.entry(clip.meta.motion_class).or_default().push(s.motion());
        buckets[intensity_to_bucket(s).get() as usize] += 1;
    }
    for (class, motions) in &per_class {
        let mean = motions.iter().sum::<f64>() / motions.len() as f64;
        let name = spec.class_name(MotionClass(*class)).unwrap_or("?");
        println!("class {class} ({name}): {} clips, mean 1-s {mean:.4}", motions.len());
    }
    println!("bucket histogram at stride 6: {buckets:?}");

    std::fs::create_dir_all(&out)?;
    for (i, clip) in clips.iter().take(4).enumerate() {
        let path = out.join(format!("clip_{i}.gif"));
        export_clip(&subsample(clip, 6, spec.n_frames)?, &path, ExportFormat::Gif { fps: 8 })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
