//! Train the default denoiser on the synthetic corpus and save a checkpoint.
//!
//! cargo run --release --example train_toy -- [steps] [checkpoint]
//!
//! 5000 steps take roughly a quarter of an hour on one core.

use std::path::PathBuf;
use std::time::Instant;

use cinemo::denoiser::checkpoint::save_checkpoint;
use cinemo::denoiser::train::{train, TrainConfig};
use cinemo::denoiser::{Denoiser, DenoiserConfig};
use cinemo::diffusion::make_schedule;
use cinemo::video_io::{generate_dataset, DatasetSpec};

fn main() -> cinemo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args
        .next()
        .map(|s| s.parse().expect("steps must be an integer"))
        .unwrap_or(1000);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "out/model.ckpt".into()));

    let clips = generate_dataset(&DatasetSpec::default(), 0)?;
    let sched = make_schedule(1000, 1e-4, 2e-2)?;
    let mut model = Denoiser::<f32>::init(DenoiserConfig::default(), 0)?;
    println!("{} parameters", model.n_params());
    let cfg = TrainConfig {
        n_steps: steps,
        ..Default::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &clips, &cfg, &sched, |step, loss| {
        if step % 100 == 0 {
            println!("step {step:>5}  loss {loss:.4}  {:.0?}", start.elapsed());
        }
    })?;
    let smoothed = report.smoothed(50);
    if smoothed.len() >= 50 {
        println!(
            "smoothed loss {:.4} -> {:.4}",
            smoothed[49],
            smoothed[smoothed.len() - 1]
        );
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&model, &path)?;
    println!("saved {}", path.display());
    Ok(())
}
