//! Toy conditional noise predictor `eps(X_t, class, bucket, t)`.
//!
//! The backbone is a stack of factorized residual blocks. Each block runs a
//! per-frame 3x3 convolution, adds the conditioning bias, then mixes along the
//! frame axis with a width-3 temporal convolution:
//!
//! ```text
//! h_0     = conv_in([x, x_anchor])
//! u_j     = spatial_j(act(h_j)) + cond_j(g)
//! h_{j+1} = h_j + temporal_j(act(u_j))
//! out     = conv_out(act(h_B))
//! ```
//!
//! The first convolution sees every frame stacked with the anchor frame 0, so
//! each frame can relate itself to the anchor regardless of temporal distance.
//!
//! The conditioning vector `e = emb(t) + emb(b) + class_table[class]` goes
//! through one shared projection `g = act(W e + b)` and a per-block linear map
//! to a channel bias, which is broadcast over every frame and pixel.
//! The noise estimate is preconditioned with the training schedule:
//!
//! ```text
//! eps_hat = c_skip(t) m_t + c_out(t) F
//! c_skip  = sqrt(1 - a) / (a s^2 + 1 - a)
//! c_out   = s sqrt(a) / sqrt(a s^2 + 1 - a)
//! ```
//!
//! with `a = alpha_bar_t`, `s = sigma_data`, `F` the backbone output and
//! `m_t` the noisy residual (each input frame minus frame 0). `c_skip m_t` is
//! the best linear guess of the noise for data of scale `s` and `F` only
//! corrects it. Near `t = T` the DDIM sampler divides by `sqrt(a)`, so a plain
//! backbone's small noise errors would swamp the residuals there; here they are
//! damped by `c_out`.
//!
//! Gradients are written out by hand; see [`gradcheck`] for their verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod train;

use std::ops::Range;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{conditioning_embedding, NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::residual::ModelInput;
use crate::ssim::MotionBucket;
use crate::video_io::MotionClass;

use layers::{conv_backward, conv_forward, matmul, ConvShape, Dims, SPATIAL_3X3, TEMPORAL_3};
pub use layers::{Activation, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Latent channels `c = C k^2`.
    pub latent_channels: usize,
    pub base_channels: usize,
    pub n_blocks: usize,
    pub embed_dim: usize,
    /// Number of real motion classes; one more table row holds the null class.
    pub n_classes: usize,
    /// Codec patch size the latents were made with.
    pub patch: usize,
    pub activation: Activation,
    /// Replace the backbone with one convolution plus a linear conditioning
    /// bias. The output is then linear in the parameters.
    pub single_conv: bool,
    /// Typical scale of the clean residuals; `None` disables preconditioning.
    pub sigma_data: Option<f64>,
    /// Schedule the preconditioning coefficients are computed from.
    pub schedule: ScheduleConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 12,
            base_channels: 32,
            n_blocks: 4,
            embed_dim: 128,
            n_classes: 4,
            patch: 2,
            activation: Activation::Silu,
            single_conv: false,
            sigma_data: Some(0.4),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::config(format!("embed_dim must be even, got {}", self.embed_dim)));
        }
        if !self.single_conv && self.n_blocks == 0 {
            return Err(Error::config("n_blocks must be at least 1"));
        }
        if self.latent_channels == 0 || self.base_channels == 0 || self.n_classes == 0 || self.patch == 0 {
            return Err(Error::config("channel, class and patch counts must be positive"));
        }
        if let Some(s) = self.sigma_data {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("sigma_data must be positive, got {s}")));
            }
        }
        self.schedule.build()?;
        Ok(())
    }

    pub fn null_class(&self) -> MotionClass {
        MotionClass(self.n_classes as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
struct ConvParams {
    shape: ConvShape,
    weight: Range<usize>,
    bias: Range<usize>,
}

#[derive(Debug, Clone)]
struct BlockParams {
    spatial: ConvParams,
    cond_weight: Range<usize>,
    cond_bias: Range<usize>,
    temporal: ConvParams,
}

/// Where every named tensor lives inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    class_table: Range<usize>,
    cond_proj_weight: Range<usize>,
    cond_proj_bias: Range<usize>,
    conv_in: Option<ConvParams>,
    blocks: Vec<BlockParams>,
    conv_out: ConvParams,
    out_cond_weight: Range<usize>,
    out_cond_bias: Range<usize>,
    total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.total..self.total + len;
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            range: range.clone(),
        });
        self.total += len;
        range
    }

    fn conv(&mut self, name: &str, shape: ConvShape) -> ConvParams {
        let weight = self.push(format!("{name}.weight"), &[shape.cout, shape.cin, shape.taps.len()]);
        let bias = self.push(format!("{name}.bias"), &[shape.cout]);
        ConvParams { shape, weight, bias }
    }
}

impl ParamLayout {
    pub fn new(cfg: &DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = LayoutBuilder {
            entries: Vec::new(),
            total: 0,
        };
        let (c, ch, d) = (cfg.latent_channels, cfg.base_channels, cfg.embed_dim);
        let class_table = b.push("class_embedding", &[cfg.n_classes + 1, d]);
        let empty = 0..0;
        if cfg.single_conv {
            let conv_out = b.conv(
                "conv_out",
                ConvShape {
                    cin: c,
                    cout: c,
                    taps: &SPATIAL_3X3,
                },
            );
            let out_cond_weight = b.push("cond_out.weight", &[c, d]);
            let out_cond_bias = b.push("cond_out.bias", &[c]);
            return Ok(Self {
                entries: b.entries,
                class_table,
                cond_proj_weight: empty.clone(),
                cond_proj_bias: empty,
                conv_in: None,
                blocks: Vec::new(),
                conv_out,
                out_cond_weight,
                out_cond_bias,
                total: b.total,
            });
        }
        let cond_proj_weight = b.push("cond_proj.weight", &[d, d]);
        let cond_proj_bias = b.push("cond_proj.bias", &[d]);
        let conv_in = b.conv(
            "conv_in",
            ConvShape {
                cin: 2 * c,
                cout: ch,
                taps: &SPATIAL_3X3,
            },
        );
        let blocks = (0..cfg.n_blocks)
            .map(|j| {
                let spatial = b.conv(
                    &format!("blocks.{j}.spatial"),
                    ConvShape {
                        cin: ch,
                        cout: ch,
                        taps: &SPATIAL_3X3,
                    },
                );
                let cond_weight = b.push(format!("blocks.{j}.cond.weight"), &[ch, d]);
                let cond_bias = b.push(format!("blocks.{j}.cond.bias"), &[ch]);
                let temporal = b.conv(
                    &format!("blocks.{j}.temporal"),
                    ConvShape {
                        cin: ch,
                        cout: ch,
                        taps: &TEMPORAL_3,
                    },
                );
                BlockParams {
                    spatial,
                    cond_weight,
                    cond_bias,
                    temporal,
                }
            })
            .collect();
        let conv_out = b.conv(
            "conv_out",
            ConvShape {
                cin: ch,
                cout: c,
                taps: &SPATIAL_3X3,
            },
        );
        Ok(Self {
            entries: b.entries,
            class_table,
            cond_proj_weight,
            cond_proj_bias,
            conv_in: Some(conv_in),
            blocks,
            conv_out,
            out_cond_weight: empty.clone(),
            out_cond_bias: empty,
            total: b.total,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn n_params(&self) -> usize {
        self.total
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser<T: Real> {
    config: DenoiserConfig,
    layout: ParamLayout,
    schedule: NoiseSchedule,
    params: Vec<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct ForwardCache<T> {
    dims: Dims,
    class: usize,
    c_out: f64,
    x0: Vec<T>,
    embedding: Vec<T>,
    proj_pre: Vec<T>,
    proj: Vec<T>,
    hidden: Vec<Vec<T>>,
    mid: Vec<Vec<T>>,
}

impl<T: Real> Denoiser<T> {
    /// Fan-in scaled Gaussian weights, zero biases, zero output layer.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        let mut fill = |range: &Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            for p in &mut params[range.clone()] {
                let z: f64 = StandardNormal.sample(rng);
                *p = T::of(z * std);
            }
        };
        let d = config.embed_dim as f64;
        fill(&layout.class_table, 1.0, &mut rng);
        if !config.single_conv {
            fill(&layout.cond_proj_weight, (1.0 / d).sqrt(), &mut rng);
            if let Some(conv_in) = &layout.conv_in {
                fill(&conv_in.weight, (1.0 / conv_in.shape.fan_in() as f64).sqrt(), &mut rng);
            }
            for block in &layout.blocks {
                fill(
                    &block.spatial.weight,
                    (2.0 / block.spatial.shape.fan_in() as f64).sqrt(),
                    &mut rng,
                );
                fill(&block.cond_weight, (1.0 / d).sqrt(), &mut rng);
                // keeps the residual stream from growing with depth
                fill(
                    &block.temporal.weight,
                    0.5 * (1.0 / block.temporal.shape.fan_in() as f64).sqrt(),
                    &mut rng,
                );
            }
        }
        let schedule = config.schedule.build()?;
        Ok(Self {
            config,
            layout,
            schedule,
            params,
        })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<T>) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        if params.len() != layout.total {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("parameters must be finite"));
        }
        let schedule = config.schedule.build()?;
        Ok(Self {
            config,
            layout,
            schedule,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.range.clone()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.entries.iter().find(|e| e.name == name)?.range.clone();
        Some(&mut self.params[range])
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            layout: self.layout.clone(),
            schedule: self.schedule.clone(),
            params: self.params.iter().map(|p| U::of(p.to_f64().unwrap())).collect(),
        }
    }

    /// `(c_skip, c_out)` at step `t`.
    pub fn preconditioning(&self, t: usize) -> Result<(f64, f64)> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::arg(format!(
                "timestep {t} outside 1..={}",
                self.schedule.steps()
            )));
        }
        let Some(s) = self.config.sigma_data else {
            return Ok((0.0, 1.0));
        };
        let a = self.schedule.alpha_bar(t);
        let var = a * s * s + 1.0 - a;
        Ok(((1.0 - a).sqrt() / var, s * a.sqrt() / var.sqrt()))
    }

    /// `c_skip (x - x[frame 0]) + c_out F` over the first `c` planes of the
    /// input. Frames past the anchor hold `m_t + z1`, so subtracting frame 0
    /// leaves the noisy residual.
    fn precondition(&self, x0: &[T], dims: Dims, out: &mut [T], c_skip: f64, c_out: f64) {
        if c_skip == 0.0 && c_out == 1.0 {
            return;
        }
        let (skip, scale) = (T::of(c_skip), T::of(c_out));
        let (l, hw) = (dims.len(), dims.height * dims.width);
        for (o_plane, x_plane) in out.chunks_mut(l).zip(x0.chunks(l)) {
            let anchor = &x_plane[..hw];
            for (o_frame, x_frame) in o_plane.chunks_mut(hw).zip(x_plane.chunks(hw)) {
                for ((o, &x), &a) in o_frame.iter_mut().zip(x_frame).zip(anchor) {
                    *o = skip * (x - a) + scale * *o;
                }
            }
        }
    }

    fn check_class(&self, class: MotionClass) -> Result<usize> {
        let id = class.0 as usize;
        if id > self.config.n_classes {
            return Err(Error::arg(format!(
                "unknown class id {id} (null class is {})",
                self.config.n_classes
            )));
        }
        Ok(id)
    }

    /// The conditioning vector `emb(t) + emb(b) + class_table[class]`.
    pub fn conditioning_vector(&self, t: usize, bucket: MotionBucket, class: MotionClass) -> Result<Vec<T>> {
        let id = self.check_class(class)?;
        let d = self.config.embed_dim;
        let base = conditioning_embedding(t, bucket, d)?;
        let row = &self.params[self.layout.class_table.start + id * d..self.layout.class_table.start + (id + 1) * d];
        Ok(base.iter().zip(row).map(|(&e, &c)| T::of(e) + c).collect())
    }

    /// Noise prediction for every frame of `input` (frame 0 included).
    pub fn forward(
        &self,
        input: &ModelInput,
        t: usize,
        bucket: MotionBucket,
        class: MotionClass,
    ) -> Result<Array4<f64>> {
        let (x, dims) = self.to_channel_major(input)?;
        let (out, _) = self.forward_cached(x, dims, t, bucket, class)?;
        Ok(self.from_channel_major(&out, dims))
    }

    pub(crate) fn to_channel_major(&self, input: &ModelInput) -> Result<(Vec<T>, Dims)> {
        let (n, c, h, w) = input.x.dim();
        if c != self.config.latent_channels {
            return Err(Error::shape(format!(
                "model expects {} channels, input has {c}",
                self.config.latent_channels
            )));
        }
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::shape("empty model input"));
        }
        let dims = Dims {
            frames: n,
            height: h,
            width: w,
        };
        let l = dims.len();
        let hw = h * w;
        let planes = if self.config.single_conv { c } else { 2 * c };
        let mut x = vec![T::zero(); planes * l];
        for ((f, ci, y, xx), &v) in input.x.indexed_iter() {
            x[ci * l + f * hw + y * w + xx] = T::of(v);
        }
        if !self.config.single_conv {
            for ci in 0..c {
                let (src, dst) = x.split_at_mut((c + ci) * l);
                let anchor = &src[ci * l..ci * l + hw];
                for frame in dst[..l].chunks_mut(hw) {
                    frame.copy_from_slice(anchor);
                }
            }
        }
        Ok((x, dims))
    }

    pub(crate) fn from_channel_major(&self, out: &[T], dims: Dims) -> Array4<f64> {
        let c = self.config.latent_channels;
        let l = dims.len();
        Array4::from_shape_fn((dims.frames, c, dims.height, dims.width), |(f, ci, y, xx)| {
            out[ci * l + (f * dims.height + y) * dims.width + xx].to_f64().unwrap()
        })
    }

    pub(crate) fn forward_cached(
        &self,
        x0: Vec<T>,
        dims: Dims,
        t: usize,
        bucket: MotionBucket,
        class: MotionClass,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        let class_id = self.check_class(class)?;
        let (c_skip, c_out) = self.preconditioning(t)?;
        let embedding = self.conditioning_vector(t, bucket, class)?;
        let act = self.config.activation;
        let p = &self.params;
        let lay = &self.layout;
        let l = dims.len();
        let d = self.config.embed_dim;
        let mut col = Vec::new();

        if self.config.single_conv {
            let c = self.config.latent_channels;
            let mut out = vec![T::zero(); c * l];
            let conv = &lay.conv_out;
            conv_forward(
                conv.shape,
                &p[conv.weight.clone()],
                &p[conv.bias.clone()],
                &x0,
                dims,
                &mut col,
                &mut out,
            );
            let mut bias = p[lay.out_cond_bias.clone()].to_vec();
            matmul(
                c,
                d,
                1,
                &p[lay.out_cond_weight.clone()],
                false,
                &embedding,
                false,
                &mut bias,
                true,
            );
            for (row, &b) in out.chunks_mut(l).zip(&bias) {
                row.iter_mut().for_each(|v| *v += b);
            }
            self.precondition(&x0, dims, &mut out, c_skip, c_out);
            let cache = ForwardCache {
                dims,
                class: class_id,
                c_out,
                x0,
                embedding,
                proj_pre: Vec::new(),
                proj: Vec::new(),
                hidden: Vec::new(),
                mid: Vec::new(),
            };
            return Ok((out, cache));
        }

        let ch = self.config.base_channels;
        let mut proj_pre = p[lay.cond_proj_bias.clone()].to_vec();
        matmul(
            d,
            d,
            1,
            &p[lay.cond_proj_weight.clone()],
            false,
            &embedding,
            false,
            &mut proj_pre,
            true,
        );
        let proj = act.map(&proj_pre);

        let conv_in = lay.conv_in.as_ref().expect("backbone has conv_in");
        let mut h = vec![T::zero(); ch * l];
        conv_forward(
            conv_in.shape,
            &p[conv_in.weight.clone()],
            &p[conv_in.bias.clone()],
            &x0,
            dims,
            &mut col,
            &mut h,
        );

        let mut hidden = Vec::with_capacity(lay.blocks.len() + 1);
        let mut mid = Vec::with_capacity(lay.blocks.len());
        let mut scratch = vec![T::zero(); ch * l];
        for block in &lay.blocks {
            let a = act.map(&h);
            let mut u = vec![T::zero(); ch * l];
            conv_forward(
                block.spatial.shape,
                &p[block.spatial.weight.clone()],
                &p[block.spatial.bias.clone()],
                &a,
                dims,
                &mut col,
                &mut u,
            );
            let mut cond = p[block.cond_bias.clone()].to_vec();
            matmul(
                ch,
                d,
                1,
                &p[block.cond_weight.clone()],
                false,
                &proj,
                false,
                &mut cond,
                true,
            );
            for (row, &b) in u.chunks_mut(l).zip(&cond) {
                row.iter_mut().for_each(|v| *v += b);
            }
            let a2 = act.map(&u);
            conv_forward(
                block.temporal.shape,
                &p[block.temporal.weight.clone()],
                &p[block.temporal.bias.clone()],
                &a2,
                dims,
                &mut col,
                &mut scratch,
            );
            let next: Vec<T> = h.iter().zip(&scratch).map(|(&a, &b)| a + b).collect();
            hidden.push(std::mem::replace(&mut h, next));
            mid.push(u);
        }
        let a = act.map(&h);
        hidden.push(h);
        let c = self.config.latent_channels;
        let mut out = vec![T::zero(); c * l];
        let conv = &lay.conv_out;
        conv_forward(
            conv.shape,
            &p[conv.weight.clone()],
            &p[conv.bias.clone()],
            &a,
            dims,
            &mut col,
            &mut out,
        );
        self.precondition(&x0, dims, &mut out, c_skip, c_out);
        let cache = ForwardCache {
            dims,
            class: class_id,
            c_out,
            x0,
            embedding,
            proj_pre,
            proj,
            hidden,
            mid,
        };
        Ok((out, cache))
    }

    /// Adds `d loss / d params` into `grad` given `d loss / d output`.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, dout: &[T], grad: &mut [T]) {
        let act = self.config.activation;
        let p = &self.params;
        let lay = &self.layout;
        let dims = cache.dims;
        let l = dims.len();
        let d = self.config.embed_dim;
        let mut col = Vec::new();
        let class_row = lay.class_table.start + cache.class * d..lay.class_table.start + (cache.class + 1) * d;
        let scale = T::of(cache.c_out);
        let dout: Vec<T> = dout.iter().map(|&g| g * scale).collect();
        let dout = &dout[..];

        if self.config.single_conv {
            let c = self.config.latent_channels;
            let conv = &lay.conv_out;
            let (gw, gb) = split_two(grad, conv.weight.clone(), conv.bias.clone());
            conv_backward(
                conv.shape,
                &p[conv.weight.clone()],
                &cache.x0,
                dout,
                dims,
                &mut col,
                gw,
                gb,
                None,
            );
            let dbias: Vec<T> = dout.chunks(l).map(|row| row.iter().copied().sum()).collect();
            matmul(
                c,
                1,
                d,
                &dbias,
                false,
                &cache.embedding,
                false,
                &mut grad[lay.out_cond_weight.clone()],
                true,
            );
            add_into(&mut grad[lay.out_cond_bias.clone()], &dbias);
            let mut de = vec![T::zero(); d];
            matmul(
                d,
                c,
                1,
                &p[lay.out_cond_weight.clone()],
                true,
                &dbias,
                false,
                &mut de,
                false,
            );
            add_into(&mut grad[class_row], &de);
            return;
        }

        let ch = self.config.base_channels;
        let n_blocks = lay.blocks.len();
        let h_last = &cache.hidden[n_blocks];
        let a = act.map(h_last);
        let mut da = vec![T::zero(); ch * l];
        {
            let conv = &lay.conv_out;
            let (gw, gb) = split_two(grad, conv.weight.clone(), conv.bias.clone());
            conv_backward(
                conv.shape,
                &p[conv.weight.clone()],
                &a,
                dout,
                dims,
                &mut col,
                gw,
                gb,
                Some(&mut da),
            );
        }
        let mut dh: Vec<T> = da.iter().zip(h_last).map(|(&g, &x)| g * act.derivative(x)).collect();
        let mut dproj = vec![T::zero(); d];

        for (j, block) in lay.blocks.iter().enumerate().rev() {
            let u = &cache.mid[j];
            let h = &cache.hidden[j];
            let a2 = act.map(u);
            let mut da2 = vec![T::zero(); ch * l];
            {
                let (gw, gb) = split_two(grad, block.temporal.weight.clone(), block.temporal.bias.clone());
                conv_backward(
                    block.temporal.shape,
                    &p[block.temporal.weight.clone()],
                    &a2,
                    &dh,
                    dims,
                    &mut col,
                    gw,
                    gb,
                    Some(&mut da2),
                );
            }
            let du: Vec<T> = da2.iter().zip(u).map(|(&g, &x)| g * act.derivative(x)).collect();
            let dcond: Vec<T> = du.chunks(l).map(|row| row.iter().copied().sum()).collect();
            matmul(
                ch,
                1,
                d,
                &dcond,
                false,
                &cache.proj,
                false,
                &mut grad[block.cond_weight.clone()],
                true,
            );
            add_into(&mut grad[block.cond_bias.clone()], &dcond);
            matmul(
                d,
                ch,
                1,
                &p[block.cond_weight.clone()],
                true,
                &dcond,
                false,
                &mut dproj,
                true,
            );

            let a1 = act.map(h);
            let mut da1 = vec![T::zero(); ch * l];
            {
                let (gw, gb) = split_two(grad, block.spatial.weight.clone(), block.spatial.bias.clone());
                conv_backward(
                    block.spatial.shape,
                    &p[block.spatial.weight.clone()],
                    &a1,
                    &du,
                    dims,
                    &mut col,
                    gw,
                    gb,
                    Some(&mut da1),
                );
            }
            for ((g, &extra), &x) in dh.iter_mut().zip(&da1).zip(h) {
                *g += extra * act.derivative(x);
            }
        }

        let conv_in = lay.conv_in.as_ref().expect("backbone has conv_in");
        {
            let (gw, gb) = split_two(grad, conv_in.weight.clone(), conv_in.bias.clone());
            conv_backward(
                conv_in.shape,
                &p[conv_in.weight.clone()],
                &cache.x0,
                &dh,
                dims,
                &mut col,
                gw,
                gb,
                None,
            );
        }

        let dpre: Vec<T> = dproj
            .iter()
            .zip(&cache.proj_pre)
            .map(|(&g, &x)| g * act.derivative(x))
            .collect();
        matmul(
            d,
            1,
            d,
            &dpre,
            false,
            &cache.embedding,
            false,
            &mut grad[lay.cond_proj_weight.clone()],
            true,
        );
        add_into(&mut grad[lay.cond_proj_bias.clone()], &dpre);
        let mut de = vec![T::zero(); d];
        matmul(
            d,
            d,
            1,
            &p[lay.cond_proj_weight.clone()],
            true,
            &dpre,
            false,
            &mut de,
            false,
        );
        add_into(&mut grad[class_row], &de);
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// Two disjoint mutable windows of `buf`; `a` must precede `b`.
fn split_two<T>(buf: &mut [T], a: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (head, tail) = buf.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.end - b.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::assemble_model_input;
    use ndarray::{Array3, Array4, Axis};
    use rand::Rng;

    fn bucket(b: u8) -> MotionBucket {
        MotionBucket::new(b).unwrap()
    }

    fn random_input(seed: u64, n: usize, c: usize, hw: usize, scale: f64) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z1 = Array3::from_shape_fn((c, hw, hw), |_| rng.gen_range(-1.0f32..1.0));
        let m = Array4::from_shape_fn((n - 1, c, hw, hw), |_| scale * rng.gen_range(-1.0..1.0));
        assemble_model_input(z1.view(), m.view()).unwrap()
    }

    #[test]
    fn default_parameter_count() {
        let cfg = DenoiserConfig::default();
        let (c, ch, d, k, b) = (12, 32, 128, 4, 4);
        let expected = (k + 1) * d
            + d * d
            + d
            + ch * 2 * c * 9
            + ch
            + b * ((ch * ch * 9 + ch) + (ch * d + ch) + (ch * ch * 3 + ch))
            + c * ch * 9
            + c;
        let layout = ParamLayout::new(&cfg).unwrap();
        assert_eq!(layout.n_params(), expected);
        assert_eq!(layout.n_params(), 93_484);
    }

    #[test]
    fn init_is_deterministic_with_zero_output() {
        let a = Denoiser::<f32>::init(DenoiserConfig::default(), 3).unwrap();
        let b = Denoiser::<f32>::init(DenoiserConfig::default(), 3).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.param("conv_out.weight").unwrap().iter().all(|&v| v == 0.0));
        let input = random_input(1, 4, 12, 8, 1.0);
        let out = a.forward(&input, 500, bucket(7), MotionClass(2)).unwrap();
        assert_eq!(out.shape(), &[4, 12, 8, 8]);
        // only the skip term is left
        let (c_skip, _) = a.preconditioning(500).unwrap();
        let anchor = input.x.index_axis(Axis(0), 0);
        for (f, frame) in out.outer_iter().enumerate() {
            let m = &input.x.index_axis(Axis(0), f) - &anchor;
            for (o, x) in frame.iter().zip(m.iter()) {
                assert!((o - c_skip * x).abs() < 1e-6);
            }
        }
        let plain = Denoiser::<f32>::init(
            DenoiserConfig {
                sigma_data: None,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let out = plain.forward(&input, 500, bucket(7), MotionClass(2)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preconditioning_coefficients() {
        let model = Denoiser::<f64>::init(DenoiserConfig::default(), 0).unwrap();
        let sched = crate::diffusion::make_schedule(1000, 1e-4, 2e-2).unwrap();
        let s = 0.4;
        for t in [1, 10, 300, 1000] {
            let a = sched.alpha_bar(t);
            let (c_skip, c_out) = model.preconditioning(t).unwrap();
            // c_skip minimizes E|eps - c x_t|^2 for x0 ~ N(0, s^2); c_out is the leftover std
            let var_x = a * s * s + 1.0 - a;
            assert!((c_skip * var_x - (1.0 - a).sqrt()).abs() < 1e-12);
            let leftover = 1.0 - 2.0 * c_skip * (1.0 - a).sqrt() + c_skip * c_skip * var_x;
            assert!((c_out * c_out - leftover).abs() < 1e-12, "t {t}");
        }
        assert!(model.preconditioning(0).is_err());
        assert!(model.preconditioning(1001).is_err());
        let plain = Denoiser::<f64>::init(
            DenoiserConfig {
                sigma_data: None,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(plain.preconditioning(700).unwrap(), (0.0, 1.0));
        assert!(DenoiserConfig {
            sigma_data: Some(0.0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rejects_bad_config_class_and_shape() {
        assert!(Denoiser::<f32>::init(
            DenoiserConfig {
                embed_dim: 7,
                ..Default::default()
            },
            0
        )
        .is_err());
        assert!(Denoiser::<f32>::init(
            DenoiserConfig {
                n_blocks: 0,
                ..Default::default()
            },
            0
        )
        .is_err());
        let model = Denoiser::<f32>::init(DenoiserConfig::default(), 0).unwrap();
        let input = random_input(2, 3, 12, 4, 1.0);
        assert!(model.forward(&input, 10, bucket(0), MotionClass(4)).is_ok());
        assert!(model.forward(&input, 10, bucket(0), MotionClass(5)).is_err());
        let wrong = random_input(2, 3, 8, 4, 1.0);
        assert!(model.forward(&wrong, 10, bucket(0), MotionClass(0)).is_err());
    }

    fn perturbed_model(seed: u64) -> Denoiser<f64> {
        let cfg = DenoiserConfig {
            base_channels: 8,
            n_blocks: 2,
            embed_dim: 16,
            ..Default::default()
        };
        let mut model = Denoiser::<f64>::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in model.param_mut("conv_out.weight").unwrap() {
            *v = rng.gen_range(-0.2..0.2);
        }
        model
    }

    #[test]
    fn output_is_finite_for_extreme_inputs() {
        let model = perturbed_model(4);
        for scale in [10.0, -10.0] {
            let mut input = random_input(5, 4, 12, 6, 0.0);
            input.x.fill(scale);
            let out = model.forward(&input, 1000, bucket(19), MotionClass(1)).unwrap();
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn conditioning_vector_is_additive() {
        let model = perturbed_model(6);
        let d = model.config().embed_dim;
        let class = MotionClass(3);
        let full = model.conditioning_vector(321, bucket(11), class).unwrap();
        let te = crate::diffusion::timestep_embedding(321, d).unwrap();
        let be = crate::diffusion::bucket_embedding(bucket(11), d).unwrap();
        let row = &model.param("class_embedding").unwrap()[3 * d..4 * d];
        for i in 0..d {
            assert_eq!(full[i], te[i] + be[i] + row[i]);
        }
        // zeroing the class row leaves exactly emb(t) + emb(b)
        let mut zeroed = model.clone();
        zeroed.param_mut("class_embedding").unwrap()[3 * d..4 * d].fill(0.0);
        let without = zeroed.conditioning_vector(321, bucket(11), class).unwrap();
        for i in 0..d {
            assert_eq!(without[i], te[i] + be[i]);
        }
    }

    #[test]
    fn null_class_output_ignores_requested_class() {
        let model = perturbed_model(7);
        let input = random_input(8, 3, 12, 6, 1.0);
        let null = model.config().null_class();
        let a = model.forward(&input, 200, bucket(5), null).unwrap();
        let b = model.forward(&input, 200, bucket(5), MotionClass(0)).unwrap();
        let c = model.forward(&input, 200, bucket(5), MotionClass(1)).unwrap();
        assert_ne!(b, c);
        assert_eq!(a, model.forward(&input, 200, bucket(5), null).unwrap());
    }

    #[test]
    fn bucket_changes_output_of_non_trivial_model() {
        let model = perturbed_model(9);
        let input = random_input(10, 3, 12, 6, 1.0);
        let a = model.forward(&input, 200, bucket(0), MotionClass(0)).unwrap();
        let b = model.forward(&input, 200, bucket(18), MotionClass(0)).unwrap();
        let diff: f64 = (&a - &b).mapv(|v| v * v).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn cast_round_trips_f32_through_f64() {
        let model = Denoiser::<f32>::init(DenoiserConfig::default(), 11).unwrap();
        let back: Denoiser<f32> = model.cast::<f64>().cast();
        assert_eq!(back.params(), model.params());
    }
}
