//! Synthetic moving-shape clips and their on-disk forms.
//!
//! Every clip shows one rigid shape (square or disc) translating over a static
//! background with toroidal wraparound, so the direction and per-frame
//! displacement of the motion are known exactly. Clips are stored as
//! `N x C x H x W` tensors with values in `[0, 1]`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, GrayImage, RgbImage, RgbaImage};
use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"CNMO";
pub const SHARD_VERSION: u32 = 1;
const SHARD_HEADER_LEN: usize = 4 + 6 * 4;
const CLIP_META_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub motion_class: u32,
    /// Pixels per frame of the source sequence.
    pub speed: f32,
    pub seed: u64,
}

/// `N x C x H x W` clip.
///
/// Generated clips are always within `[0, 1]`. Clips produced by
/// [`crate::codec::decode`] are not clamped; call [`VideoClip::clamped`]
/// before treating them as images.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Array4<f32>,
    pub meta: ClipMeta,
}

impl VideoClip {
    pub fn new(frames: Array4<f32>, meta: ClipMeta) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("clip contains non-finite values"));
        }
        if frames.shape().iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("empty clip shape {:?}", frames.shape())));
        }
        Ok(Self { frames, meta })
    }

    pub fn frames(&self) -> &Array4<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array4<f32> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// `(C, H, W)`
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(Axis(0), i)
    }

    pub fn clamped(&self) -> VideoClip {
        VideoClip {
            frames: self.frames.mapv(|v| v.clamp(0.0, 1.0)),
            meta: self.meta,
        }
    }
}

/// Direction of travel for one motion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "move right")]
    Right,
    #[serde(rename = "move left")]
    Left,
    #[serde(rename = "move down")]
    Down,
    #[serde(rename = "move up")]
    Up,
}

impl Direction {
    /// Unit step `(dx, dy)` in image coordinates (y grows downwards).
    pub fn step(self) -> (f64, f64) {
        match self {
            Direction::Right => (1.0, 0.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Down => (0.0, 1.0),
            Direction::Up => (0.0, -1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Right => "move right",
            Direction::Left => "move left",
            Direction::Down => "move down",
            Direction::Up => "move up",
        }
    }
}

/// A class id into [`DatasetSpec::motion_classes`]. The id equal to the
/// number of classes is reserved for the unconditional (dropped) prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MotionClass(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Solid,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_clips: usize,
    /// Length of every generated source sequence.
    pub n_frames_long: usize,
    /// Frames per training sample after interval subsampling.
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub motion_classes: Vec<Direction>,
    pub speed_range: [f32; 2],
    pub background_kind: BackgroundKind,
    /// Side length (square) or diameter (disc) in pixels.
    pub shape_size_range: [f32; 2],
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_clips: 200,
            n_frames_long: 160,
            n_frames: 16,
            height: 32,
            width: 32,
            channels: 3,
            motion_classes: vec![Direction::Right, Direction::Left, Direction::Down, Direction::Up],
            speed_range: [0.0, 1.5],
            background_kind: BackgroundKind::Gradient,
            shape_size_range: [8.0, 16.0],
        }
    }
}

impl DatasetSpec {
    pub fn n_classes(&self) -> usize {
        self.motion_classes.len()
    }

    pub fn null_class(&self) -> MotionClass {
        MotionClass(self.motion_classes.len() as u32)
    }

    pub fn class_name(&self, class: MotionClass) -> Option<&'static str> {
        self.motion_classes.get(class.0 as usize).map(|d| d.name())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::config("n_frames must be at least 2"));
        }
        if self.n_frames_long < 10 * self.n_frames {
            return Err(Error::config(format!(
                "n_frames_long ({}) must be at least 10 x n_frames ({})",
                self.n_frames_long, self.n_frames
            )));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::config("resolution and channels must be positive"));
        }
        if self.motion_classes.is_empty() {
            return Err(Error::config("at least one motion class is required"));
        }
        let [lo, hi] = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::config(format!("bad speed_range {:?}", self.speed_range)));
        }
        let [slo, shi] = self.shape_size_range;
        if !(slo.is_finite() && shi.is_finite() && 0.0 < slo && slo <= shi) {
            return Err(Error::config(format!(
                "bad shape_size_range {:?}",
                self.shape_size_range
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Square,
    Disc,
}

/// Everything about a clip that the seed decides.
struct Scene {
    kind: ShapeKind,
    size: f64,
    origin: (f64, f64),
    color: Vec<f64>,
    background: Vec<f64>,
}

impl Scene {
    fn draw(spec: &DatasetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if rng.gen_bool(0.5) {
            ShapeKind::Square
        } else {
            ShapeKind::Disc
        };
        let [slo, shi] = spec.shape_size_range;
        let size = if slo < shi {
            rng.gen_range(slo as f64..=shi as f64)
        } else {
            slo as f64
        };
        let origin = (
            rng.gen_range(0.0..spec.width as f64),
            rng.gen_range(0.0..spec.height as f64),
        );
        let color = (0..spec.channels).map(|_| rng.gen_range(0.55..1.0)).collect();
        let background = (0..spec.channels).map(|_| rng.gen_range(0.0..0.4)).collect();
        Self {
            kind,
            size,
            origin,
            color,
            background,
        }
    }
}

/// Signed offset of `p` from `c` on a ring of length `len`, in `[-len/2, len/2)`.
fn wrapped_offset(p: f64, c: f64, len: f64) -> f64 {
    (p - c + len / 2.0).rem_euclid(len) - len / 2.0
}

fn render_frame(spec: &DatasetSpec, scene: &Scene, center: (f64, f64), out: &mut ndarray::ArrayViewMut3<f32>) {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let half = scene.size / 2.0;
    for y in 0..spec.height {
        let py = y as f64 + 0.5;
        let dy = wrapped_offset(py, center.1, h);
        for x in 0..spec.width {
            let px = x as f64 + 0.5;
            let dx = wrapped_offset(px, center.0, w);
            let dist = match scene.kind {
                ShapeKind::Square => dx.abs().max(dy.abs()) - half,
                ShapeKind::Disc => (dx * dx + dy * dy).sqrt() - half,
            };
            // one-pixel anti-aliased edge
            let coverage = (0.5 - dist).clamp(0.0, 1.0);
            let shade = match spec.background_kind {
                BackgroundKind::Solid => 1.0,
                BackgroundKind::Gradient => 0.6 + 0.4 * px / w,
            };
            for c in 0..spec.channels {
                let bg = scene.background[c] * shade;
                let v = bg * (1.0 - coverage) + scene.color[c] * coverage;
                out[[c, y, x]] = v as f32;
            }
        }
    }
}

/// Renders `spec.n_frames_long` frames of a single shape moving in the class
/// direction at `speed` pixels per frame.
pub fn generate_clip(spec: &DatasetSpec, class: MotionClass, speed: f32, seed: u64) -> Result<VideoClip> {
    spec.validate()?;
    let direction = *spec
        .motion_classes
        .get(class.0 as usize)
        .ok_or_else(|| Error::arg(format!("invalid motion class id {}", class.0)))?;
    let [lo, hi] = spec.speed_range;
    if !(speed >= lo && speed <= hi) {
        return Err(Error::arg(format!("speed {speed} outside range [{lo}, {hi}]")));
    }
    let scene = Scene::draw(spec, seed);
    let (ux, uy) = direction.step();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut frames = Array4::<f32>::zeros((spec.n_frames_long, spec.channels, spec.height, spec.width));
    for (f, mut frame) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let travelled = speed as f64 * f as f64;
        let center = (
            (scene.origin.0 + ux * travelled).rem_euclid(w),
            (scene.origin.1 + uy * travelled).rem_euclid(h),
        );
        render_frame(spec, &scene, center, &mut frame);
    }
    VideoClip::new(
        frames,
        ClipMeta {
            motion_class: class.0,
            speed,
            seed,
        },
    )
}

/// Draws `spec.n_clips` clips with random class, speed and scene.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<VideoClip>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = spec.speed_range;
    (0..spec.n_clips)
        .map(|_| {
            let class = MotionClass(rng.gen_range(0..spec.n_classes() as u32));
            let speed = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
            let clip_seed: u64 = rng.gen();
            generate_clip(spec, class, speed, clip_seed)
        })
        .collect()
}

/// Frames `0, interval, 2*interval, ...` (`n` of them).
pub fn subsample(clip: &VideoClip, interval: usize, n: usize) -> Result<VideoClip> {
    subsample_from(clip, 0, interval, n)
}

/// Frames `start, start + interval, ...` (`n` of them).
pub fn subsample_from(clip: &VideoClip, start: usize, interval: usize, n: usize) -> Result<VideoClip> {
    if interval == 0 || n == 0 {
        return Err(Error::arg("interval and n must be positive"));
    }
    let last = start + (n - 1) * interval;
    if last >= clip.n_frames() {
        return Err(Error::arg(format!(
            "insufficient source length: need frame {last}, clip has {}",
            clip.n_frames()
        )));
    }
    let frames = clip.frames.slice(s![start..=last;interval, .., .., ..]).to_owned();
    VideoClip::new(frames, clip.meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    PngDir,
    Gif { fps: u32 },
    Raw,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png_dir" | "png" => Ok(ExportFormat::PngDir),
            "gif" => Ok(ExportFormat::Gif { fps: 8 }),
            "raw" => Ok(ExportFormat::Raw),
            other => Err(Error::arg(format!("unknown export format {other:?}"))),
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_to_rgba(frame: ArrayView3<f32>) -> Result<RgbaImage> {
    let (c, h, w) = frame.dim();
    if c != 1 && c != 3 {
        return Err(Error::Unsupported(format!(
            "cannot render {c}-channel frames as images"
        )));
    }
    Ok(RgbaImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let px = |ch: usize| to_u8(frame[[ch.min(c - 1), y, x]]);
        image::Rgba([px(0), px(1), px(2), 255])
    }))
}

/// Writes one frame as an 8-bit PNG.
pub fn write_png(frame: ArrayView3<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = frame.dim();
    match c {
        1 => GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(frame[[0, y as usize, x as usize]])])
        })
        .save(path)?,
        3 => RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([
                to_u8(frame[[0, y, x]]),
                to_u8(frame[[1, y, x]]),
                to_u8(frame[[2, y, x]]),
            ])
        })
        .save(path)?,
        _ => return Err(Error::Unsupported(format!("cannot write {c}-channel PNG"))),
    }
    Ok(())
}

/// Reads an 8-bit PNG into a `C x H x W` frame in `[0, 1]`.
pub fn read_png(path: &Path, channels: usize) -> Result<Array3<f32>> {
    let img = image::open(path)?;
    match channels {
        1 => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Ok(Array3::from_shape_fn((1, h as usize, w as usize), |(_, y, x)| {
                g.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
            }))
        }
        3 => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
                rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
            }))
        }
        _ => Err(Error::Unsupported(format!("cannot read {channels}-channel PNG"))),
    }
}

pub fn export_clip(clip: &VideoClip, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::PngDir => {
            fs::create_dir_all(path)?;
            for i in 0..clip.n_frames() {
                write_png(clip.frame(i), &path.join(format!("frame_{i:04}.png")))?;
            }
            Ok(())
        }
        ExportFormat::Gif { fps } => {
            if fps == 0 {
                return Err(Error::arg("gif frame rate must be positive"));
            }
            let file = BufWriter::new(File::create(path)?);
            let mut encoder = GifEncoder::new_with_speed(file, 10);
            encoder.set_repeat(Repeat::Infinite)?;
            let delay = Delay::from_numer_denom_ms(1000, fps);
            let frames = (0..clip.n_frames())
                .map(|i| Ok(Frame::from_parts(frame_to_rgba(clip.frame(i))?, 0, 0, delay)))
                .collect::<Result<Vec<_>>>()?;
            encoder.encode_frames(frames)?;
            Ok(())
        }
        ExportFormat::Raw => save_dataset(std::slice::from_ref(clip), path),
    }
}

/// Reads back the single clip written by `export_clip(.., ExportFormat::Raw)`.
pub fn import_raw_clip(path: &Path) -> Result<VideoClip> {
    let mut clips = load_dataset(path)?;
    if clips.len() != 1 {
        return Err(Error::corrupt(format!("expected one clip, found {}", clips.len())));
    }
    Ok(clips.remove(0))
}

/// Writes a raw shard: little-endian header, per-clip metadata + f32 payload,
/// trailing CRC32 over everything after the header.
pub fn save_dataset(clips: &[VideoClip], path: &Path) -> Result<()> {
    let dims: [usize; 4] = match clips.first() {
        Some(c) => {
            let s = c.frames.shape();
            [s[0], s[1], s[2], s[3]]
        }
        None => [0; 4],
    };
    for (i, c) in clips.iter().enumerate() {
        if c.frames.shape() != dims {
            return Err(Error::shape(format!(
                "clip {i} has shape {:?}, shard shape is {dims:?}",
                c.frames.shape()
            )));
        }
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::arg("dimension exceeds u32"));

    let mut header = Vec::with_capacity(SHARD_HEADER_LEN);
    header.extend_from_slice(SHARD_MAGIC);
    header.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    header.extend_from_slice(&to_u32(clips.len())?.to_le_bytes());
    for d in dims {
        header.extend_from_slice(&to_u32(d)?.to_le_bytes());
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header)?;
    let mut crc = crc32fast::Hasher::new();
    let mut buf = Vec::new();
    for clip in clips {
        buf.clear();
        buf.extend_from_slice(&clip.meta.motion_class.to_le_bytes());
        buf.extend_from_slice(&clip.meta.speed.to_le_bytes());
        buf.extend_from_slice(&clip.meta.seed.to_le_bytes());
        for v in clip.frames.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        crc.update(&buf);
        out.write_all(&buf)?;
    }
    out.write_all(&crc.finalize().to_le_bytes())?;
    out.flush()?;
    Ok(())
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn load_dataset(path: &Path) -> Result<Vec<VideoClip>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < SHARD_HEADER_LEN + 4 {
        return Err(Error::corrupt("shard shorter than its header"));
    }
    if &bytes[0..4] != SHARD_MAGIC {
        return Err(Error::corrupt("bad shard magic"));
    }
    let version = le_u32(&bytes, 4);
    if version != SHARD_VERSION {
        return Err(Error::corrupt(format!("unsupported shard version {version}")));
    }
    let n_clips = le_u32(&bytes, 8) as usize;
    let dims: Vec<usize> = (0..4).map(|i| le_u32(&bytes, 12 + 4 * i) as usize).collect();
    let per_clip_values = dims.iter().product::<usize>();
    let per_clip = CLIP_META_LEN + 4 * per_clip_values;
    let payload_len = n_clips
        .checked_mul(per_clip)
        .ok_or_else(|| Error::corrupt("shard dimensions overflow"))?;
    if bytes.len() != SHARD_HEADER_LEN + payload_len + 4 {
        return Err(Error::corrupt(format!(
            "shard length {} does not match header ({} clips of {:?})",
            bytes.len(),
            n_clips,
            dims
        )));
    }
    let payload = &bytes[SHARD_HEADER_LEN..SHARD_HEADER_LEN + payload_len];
    let stored_crc = le_u32(&bytes, SHARD_HEADER_LEN + payload_len);
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::corrupt("shard checksum mismatch"));
    }
    payload
        .chunks_exact(per_clip.max(1))
        .take(n_clips)
        .map(|chunk| {
            let meta = ClipMeta {
                motion_class: le_u32(chunk, 0),
                speed: f32::from_le_bytes(chunk[4..8].try_into().unwrap()),
                seed: u64::from_le_bytes(chunk[8..16].try_into().unwrap()),
            };
            let values: Vec<f32> = chunk[CLIP_META_LEN..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let frames = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), values)
                .map_err(|e| Error::corrupt(e.to_string()))?;
            VideoClip::new(frames, meta)
        })
        .collect()
}
