//! The `cinemo` command line.
//!
//! Every command reads an optional JSON [`RunConfig`], applies flag
//! overrides on top, and writes the merged config next to its outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::dctinit::{band_errors, make_lowpass, noised_anchor, FilterKind, FreqMode, RefineConfig};
use crate::denoiser::checkpoint::{load_checkpoint, save_checkpoint};
use crate::denoiser::train::{smoothed_loss, train, TrainConfig};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{NoiseSchedule, SamplerConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::eval::{bucket_response, capped_psnr, evaluate, first_frame_error, jump_score, measured_motion};
use crate::pipeline::{
    animate, invert, load_noise, save_noise, seeded_noise, AnimateRequest, Animation, InvertRequest,
};
use crate::ssim::MotionBucket;
use crate::video_io::{
    export_clip, generate_dataset, import_raw_clip, load_dataset, read_png, save_dataset, ClipMeta, DatasetSpec,
    ExportFormat, MotionClass, VideoClip,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const CONFIG_FILE: &str = "config.json";

/// All module settings in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub refine: RefineConfig,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub model: DenoiserConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            refine: RefineConfig::default(),
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            model: DenoiserConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<NoiseSchedule> {
        let sched = self.schedule.build()?;
        self.sampler.validate(&sched)?;
        self.refine.validate(&sched)?;
        self.dataset.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        if self.model.n_classes != self.dataset.n_classes() {
            return Err(Error::config(format!(
                "model has {} classes, dataset has {}",
                self.model.n_classes,
                self.dataset.n_classes()
            )));
        }
        if self.model.schedule != self.schedule {
            return Err(Error::config("model.schedule differs from the run schedule"));
        }
        if self.model.patch != self.train.patch {
            return Err(Error::config("model.patch and train.patch differ"));
        }
        let (c, k) = (self.dataset.channels, self.model.patch);
        if self.model.latent_channels != c * k * k {
            return Err(Error::config(format!(
                "model.latent_channels {} != channels x patch^2 = {}",
                self.model.latent_channels,
                c * k * k
            )));
        }
        if self.train.n_frames != self.dataset.n_frames {
            return Err(Error::config("train.n_frames and dataset.n_frames differ"));
        }
        Ok(sched)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cinemo",
    about = "Toy image-to-video animation with motion-residual diffusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Shared {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    Ideal,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FreqArg {
    Dct,
    Fft,
}

/// Sampling and noise refinement overrides.
#[derive(Debug, Args, Clone, Default)]
pub struct SamplingArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "guidance-scale")]
    pub guidance_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub dctinit: Option<OnOff>,
    #[arg(long = "dct-tau")]
    pub dct_tau: Option<usize>,
    #[arg(long = "dct-cutoff-t")]
    pub dct_cutoff_t: Option<f64>,
    #[arg(long = "dct-cutoff-s")]
    pub dct_cutoff_s: Option<f64>,
    #[arg(long = "dct-filter", value_enum)]
    pub dct_filter: Option<FilterArg>,
    #[arg(long = "freq-mode", value_enum)]
    pub freq_mode: Option<FreqArg>,
}

impl SamplingArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.steps {
            cfg.sampler.steps = v;
        }
        if let Some(v) = self.guidance_scale {
            cfg.sampler.guidance_scale = v;
        }
        if let Some(v) = self.dctinit {
            cfg.refine.enabled = v == OnOff::On;
        }
        if let Some(v) = self.dct_tau {
            cfg.refine.tau = Some(v);
        }
        if let Some(v) = self.dct_cutoff_t {
            cfg.refine.cutoff_t = v;
        }
        if let Some(v) = self.dct_cutoff_s {
            cfg.refine.cutoff_s = v;
        }
        if let Some(v) = self.dct_filter {
            cfg.refine.filter = match v {
                FilterArg::Ideal => FilterKind::Ideal,
                FilterArg::Gaussian => FilterKind::Gaussian,
            };
        }
        if let Some(v) = self.freq_mode {
            cfg.refine.mode = match v {
                FreqArg::Dct => FreqMode::Dct,
                FreqArg::Fft => FreqMode::Fft,
            };
        }
    }
}

/// Model, input image and conditioning shared by the generation commands.
#[derive(Debug, Args, Clone)]
pub struct Conditioning {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Motion class id.
    #[arg(long = "class")]
    pub class: u32,
    /// Motion bucket, 0-19.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=19))]
    pub bucket: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic dataset operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the noise predictor; writes a checkpoint and the loss curve.
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Dataset shard; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
    },
    /// Animate one image.
    Animate {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        cond: Conditioning,
        /// Input image (PNG).
        #[arg(long)]
        image: PathBuf,
        /// Start from this residual noise file instead of a seeded draw.
        #[arg(long = "init-noise")]
        init_noise: Option<PathBuf>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Recover the starting residual noise of a video by DDIM inversion.
    Invert {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        cond: Conditioning,
        /// Video as a directory of PNG frames or a raw clip file.
        #[arg(long)]
        video: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Measure first-frame fidelity, bucket response and jump scores.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long = "class")]
        class: u32,
        /// Buckets to condition on.
        #[arg(long, value_delimiter = ',', default_value = "0,9,18")]
        buckets: Vec<u8>,
        #[arg(long = "n-seeds", default_value_t = 20)]
        n_seeds: u64,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Compare DCT refinement, FFT refinement and no refinement on one input.
    DctDemo {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        cond: Conditioning,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    /// Generate the synthetic moving-shapes corpus.
    Gen {
        #[command(flatten)]
        shared: Shared,
        /// Also write this many preview GIFs.
        #[arg(long, default_value_t = 4)]
        previews: usize,
    },
}

fn load_config(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn bucket(b: u8) -> Result<MotionBucket> {
    MotionBucket::new(b).map_err(|e| Error::config(e.to_string()))
}

fn check_class(cfg: &RunConfig, class: u32) -> Result<MotionClass> {
    if class as usize >= cfg.model.n_classes {
        return Err(Error::config(format!(
            "class {class} outside 0..{}",
            cfg.model.n_classes
        )));
    }
    Ok(MotionClass(class))
}

/// Uses the checkpoint's architecture, whatever the config says.
fn load_model(path: &Path, cfg: &mut RunConfig) -> Result<Denoiser<f32>> {
    let model = load_checkpoint(path)?;
    cfg.model = model.config().clone();
    cfg.train.patch = cfg.model.patch;
    cfg.schedule = cfg.model.schedule;
    Ok(model)
}

fn read_image(path: &Path, cfg: &RunConfig) -> Result<Array3<f32>> {
    let image = read_png(path, cfg.dataset.channels)?;
    let expected = (cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width);
    if image.dim() != expected {
        return Err(Error::shape(format!(
            "image is {:?}, the model was trained on {:?}",
            image.shape(),
            expected
        )));
    }
    Ok(image)
}

fn read_video(path: &Path, cfg: &RunConfig) -> Result<VideoClip> {
    if !path.is_dir() {
        return import_raw_clip(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::arg(format!("no PNG frames in {}", path.display())));
    }
    let frames = files
        .iter()
        .map(|f| read_png(f, cfg.dataset.channels))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = frames.iter().map(|f| f.view().insert_axis(Axis(0))).collect();
    let stacked = ndarray::concatenate(Axis(0), &views)?;
    VideoClip::new(
        stacked,
        ClipMeta {
            motion_class: 0,
            speed: 0.0,
            seed: 0,
        },
    )
}

fn request(cfg: &RunConfig, image: Array3<f32>, class: MotionClass, b: MotionBucket) -> AnimateRequest {
    AnimateRequest {
        image,
        class,
        bucket: b,
        n_frames: cfg.dataset.n_frames,
        sampler: cfg.sampler,
        refine: cfg.refine,
        seed: cfg.seed,
        codec: LatentCodec::with_patch(cfg.model.patch),
        init_noise: None,
    }
}

#[derive(Debug, Serialize)]
struct AnimationSidecar<'a> {
    checkpoint: &'a Path,
    image: &'a Path,
    class: u32,
    bucket: u8,
    seed: u64,
    init_noise: Option<&'a Path>,
    first_frame_psnr: f64,
    measured_motion: f64,
    jump_score: f64,
    config: &'a RunConfig,
}

/// GIF, PNG frames and the raw clip of one animation.
fn write_animation(anim: &Animation, dir: &Path, stem: &str) -> Result<()> {
    let shown = anim.video.clamped();
    export_clip(&shown, &dir.join(format!("{stem}.gif")), ExportFormat::Gif { fps: 8 })?;
    export_clip(&shown, &dir.join(format!("{stem}_frames")), ExportFormat::PngDir)?;
    export_clip(&anim.video, &dir.join(format!("{stem}.raw")), ExportFormat::Raw)?;
    Ok(())
}

fn cmd_dataset_gen(shared: &Shared, previews: usize) -> Result<()> {
    let cfg = load_config(shared)?;
    cfg.dataset.validate()?;
    let clips = generate_dataset(&cfg.dataset, cfg.seed)?;
    fs::create_dir_all(&shared.out)?;
    save_dataset(&clips, &shared.out.join("dataset.cnmo"))?;
    let preview_dir = shared.out.join("previews");
    for (i, clip) in clips.iter().take(previews).enumerate() {
        fs::create_dir_all(&preview_dir)?;
        let name = cfg
            .dataset
            .class_name(MotionClass(clip.meta.motion_class))
            .unwrap_or("unknown")
            .replace(' ', "_");
        export_clip(
            clip,
            &preview_dir.join(format!("clip_{i:03}_{name}.gif")),
            ExportFormat::Gif { fps: 8 },
        )?;
    }
    cfg.write(&shared.out)?;
    eprintln!("wrote {} clips to {}", clips.len(), shared.out.display());
    Ok(())
}

fn cmd_train(shared: &Shared, data: Option<&Path>, steps: Option<usize>, batch_size: Option<usize>) -> Result<()> {
    let mut cfg = load_config(shared)?;
    if let Some(s) = steps {
        cfg.train.n_steps = s;
    }
    if let Some(b) = batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.seed = cfg.seed;
    let sched = cfg.validate()?;
    let clips = match data {
        Some(path) => load_dataset(path)?,
        None => generate_dataset(&cfg.dataset, cfg.seed)?,
    };
    fs::create_dir_all(&shared.out)?;
    cfg.write(&shared.out)?;
    let mut model = Denoiser::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let log_every = (cfg.train.n_steps / 20).max(1);
    let report = train(&mut model, &clips, &cfg.train, &sched, |step, loss| {
        if step % log_every == 0 {
            eprintln!("step {step:>6}  loss {loss:.5}");
        }
    })?;
    save_checkpoint(&model, &shared.out.join("model.ckpt"))?;
    let smoothed = smoothed_loss(&report.losses, 50);
    let mut csv = String::from("step,loss,smoothed\n");
    for (i, (l, s)) in report.losses.iter().zip(&smoothed).enumerate() {
        csv.push_str(&format!("{},{l},{s}\n", i + 1));
    }
    fs::write(shared.out.join("loss.csv"), csv)?;
    eprintln!(
        "saved {} ({} parameters)",
        shared.out.join("model.ckpt").display(),
        model.n_params()
    );
    Ok(())
}

fn cmd_animate(
    shared: &Shared,
    cond: &Conditioning,
    image: &Path,
    init_noise: Option<&Path>,
    sampling: &SamplingArgs,
) -> Result<()> {
    let mut cfg = load_config(shared)?;
    sampling.apply(&mut cfg);
    let model = load_model(&cond.checkpoint, &mut cfg)?;
    let sched = cfg.validate()?;
    let class = check_class(&cfg, cond.class)?;
    let img = read_image(image, &cfg)?;
    let mut req = request(&cfg, img.clone(), class, bucket(cond.bucket)?);
    if let Some(path) = init_noise {
        let noise = load_noise(path)?;
        req.n_frames = noise.shape()[0] + 1;
        req.init_noise = Some(noise);
    }
    let anim = animate(&model, &req, &sched)?;
    fs::create_dir_all(&shared.out)?;
    write_animation(&anim, &shared.out, "animation")?;
    save_noise(&anim.initial_noise, &shared.out.join("initial_noise.cnmn"))?;
    cfg.write(&shared.out)?;
    let sidecar = AnimationSidecar {
        checkpoint: &cond.checkpoint,
        image,
        class: cond.class,
        bucket: cond.bucket,
        seed: cfg.seed,
        init_noise,
        first_frame_psnr: capped_psnr(first_frame_error(&anim.video, img.view())?),
        measured_motion: measured_motion(&anim.video)?,
        jump_score: jump_score(&anim.video.clamped()).unwrap_or(0.0),
        config: &cfg,
    };
    fs::write(
        shared.out.join("animation.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    eprintln!("wrote {}", shared.out.join("animation.gif").display());
    Ok(())
}

fn cmd_invert(shared: &Shared, cond: &Conditioning, video: &Path, sampling: &SamplingArgs) -> Result<()> {
    let mut cfg = load_config(shared)?;
    sampling.apply(&mut cfg);
    let model = load_model(&cond.checkpoint, &mut cfg)?;
    let sched = cfg.validate()?;
    let class = check_class(&cfg, cond.class)?;
    let clip = read_video(video, &cfg)?;
    let (_, c, h, w) = clip.frames().dim();
    if (c, h, w) != (cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width) {
        return Err(Error::shape(format!(
            "video frames are {:?}, the model was trained on {:?}",
            (c, h, w),
            (cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width)
        )));
    }
    let req = InvertRequest {
        class,
        bucket: bucket(cond.bucket)?,
        sampler: cfg.sampler,
        codec: LatentCodec::with_patch(cfg.model.patch),
    };
    let noise = invert(&model, &clip, &req, &sched)?;
    fs::create_dir_all(&shared.out)?;
    save_noise(&noise, &shared.out.join("inverted_noise.cnmn"))?;
    crate::video_io::write_png(clip.frame(0), &shared.out.join("first_frame.png"))?;
    cfg.write(&shared.out)?;
    eprintln!("wrote {}", shared.out.join("inverted_noise.cnmn").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    shared: &Shared,
    checkpoint: &Path,
    image: &Path,
    class: u32,
    buckets: &[u8],
    n_seeds: u64,
    sampling: &SamplingArgs,
) -> Result<()> {
    let mut cfg = load_config(shared)?;
    sampling.apply(&mut cfg);
    let model = load_model(checkpoint, &mut cfg)?;
    let sched = cfg.validate()?;
    let class = check_class(&cfg, class)?;
    let img = read_image(image, &cfg)?;
    if n_seeds == 0 {
        return Err(Error::config("n-seeds must be positive"));
    }
    let buckets = buckets.iter().map(|&b| bucket(b)).collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..n_seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let base = request(&cfg, img, class, buckets[0]);
    let report = evaluate(&model, &base, &buckets, &seeds, &sched)?;
    let responses = bucket_response(&model, &base, &buckets, &seeds, &sched)?;
    fs::create_dir_all(&shared.out)?;
    cfg.write(&shared.out)?;
    fs::write(shared.out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(
        shared.out.join("bucket_response.json"),
        serde_json::to_string_pretty(&responses)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct DemoVariant {
    name: &'static str,
    enabled: bool,
    mode: FreqMode,
    /// Largest low-band deviation of the refined noise from the noised anchor.
    low_band_error: Option<f64>,
    /// Largest high-band deviation of the refined noise from the raw noise.
    high_band_error: Option<f64>,
    jump_score: f64,
    measured_motion: f64,
    first_frame_psnr: f64,
}

fn cmd_dct_demo(shared: &Shared, cond: &Conditioning, image: &Path, sampling: &SamplingArgs) -> Result<()> {
    let mut cfg = load_config(shared)?;
    sampling.apply(&mut cfg);
    let model = load_model(&cond.checkpoint, &mut cfg)?;
    let sched = cfg.validate()?;
    let class = check_class(&cfg, cond.class)?;
    let img = read_image(image, &cfg)?;
    fs::create_dir_all(&shared.out)?;
    cfg.write(&shared.out)?;

    let base = request(&cfg, img.clone(), class, bucket(cond.bucket)?);
    let codec = base.codec;
    let z1 = codec.encode_frame(img.view())?;
    let (c, h, w) = z1.dim();
    let shape = (base.n_frames - 1, c, h, w);
    let (eps, noise_for_tau) = seeded_noise(shape, cfg.seed);

    let variants = [
        ("dct", true, FreqMode::Dct),
        ("fft", true, FreqMode::Fft),
        ("off", false, FreqMode::Dct),
    ];
    let mut report = Vec::new();
    for (name, enabled, mode) in variants {
        let refine = RefineConfig {
            enabled,
            mode,
            ..cfg.refine
        };
        let req = AnimateRequest { refine, ..base.clone() };
        let anim = animate(&model, &req, &sched)?;
        export_clip(
            &anim.video.clamped(),
            &shared.out.join(format!("{name}.gif")),
            ExportFormat::Gif { fps: 8 },
        )?;
        let (low_band_error, high_band_error) = if enabled {
            let z1_tau = noised_anchor(z1.view(), shape.0, refine.tau(&sched), noise_for_tau.view(), &sched)?;
            let filter = make_lowpass((shape.0, h, w), refine.filter, refine.cutoff_t, refine.cutoff_s, mode)?;
            let (lo, hi) = band_errors(
                anim.initial_noise.view(),
                z1_tau.view(),
                eps.view(),
                filter.mask.view(),
                mode,
            )?;
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        report.push(DemoVariant {
            name,
            enabled,
            mode,
            low_band_error,
            high_band_error,
            jump_score: jump_score(&anim.video.clamped()).unwrap_or(0.0),
            measured_motion: measured_motion(&anim.video)?,
            first_frame_psnr: capped_psnr(first_frame_error(&anim.video, img.view())?),
        });
    }
    fs::write(
        shared.out.join("diagnostics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    eprintln!(
        "wrote dct.gif, fft.gif, off.gif and diagnostics.json to {}",
        shared.out.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset {
            action: DatasetAction::Gen { shared, previews },
        } => cmd_dataset_gen(shared, *previews),
        Command::Train {
            shared,
            data,
            steps,
            batch_size,
        } => cmd_train(shared, data.as_deref(), *steps, *batch_size),
        Command::Animate {
            shared,
            cond,
            image,
            init_noise,
            sampling,
        } => cmd_animate(shared, cond, image, init_noise.as_deref(), sampling),
        Command::Invert {
            shared,
            cond,
            video,
            sampling,
        } => cmd_invert(shared, cond, video, sampling),
        Command::Eval {
            shared,
            checkpoint,
            image,
            class,
            buckets,
            n_seeds,
            sampling,
        } => cmd_eval(shared, checkpoint, image, *class, buckets, *n_seeds, sampling),
        Command::DctDemo {
            shared,
            cond,
            image,
            sampling,
        } => cmd_dct_demo(shared, cond, image, sampling),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
