//! Animate one image at several motion buckets.
//!
//! cargo run --release --example animate -- <checkpoint> [out_dir]
//!
//! Train a checkpoint first with the `train_toy` example.

use std::path::PathBuf;

use cinemo::codec::LatentCodec;
use cinemo::dctinit::RefineConfig;
use cinemo::denoiser::checkpoint::load_checkpoint;
use cinemo::diffusion::{make_schedule, SamplerConfig};
use cinemo::eval::{jump_score, measured_motion};
use cinemo::pipeline::{animate, AnimateRequest};
use cinemo::ssim::MotionBucket;
use cinemo::video_io::{export_clip, generate_dataset, DatasetSpec, ExportFormat, MotionClass};

fn main() -> cinemo::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(args.next().expect("usage: animate <checkpoint> [out_dir]"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/animate".into()));
    let model = load_checkpoint(&ckpt)?;
    let sched = make_schedule(1000, 1e-4, 2e-2)?;
    let clip = generate_dataset(&DatasetSpec::default(), 0)?.swap_remove(0);

    std::fs::create_dir_all(&out)?;
    for b in [0u8, 9, 18] {
        let req = AnimateRequest {
            image: clip.frame(0).to_owned(),
            class: MotionClass(clip.meta.motion_class),
            bucket: MotionBucket::new(b)?,
            n_frames: 16,
            sampler: SamplerConfig::default(),
            refine: RefineConfig::default(),
            seed: 1,
            codec: LatentCodec::with_patch(model.config().patch),
            init_noise: None,
        };
        let anim = animate(&model, &req, &sched)?;
        let path = out.join(format!("bucket_{b:02}.gif"));
        export_clip(&anim.video.clamped(), &path, ExportFormat::Gif { fps: 8 })?;
        println!(
            "bucket {b:>2}: motion {:.4}  jump {:.2}  -> {}",
            measured_motion(&anim.video)?,
            jump_score(&anim.video.clamped())?,
            path.display()
        );
    }
    Ok(())
}
