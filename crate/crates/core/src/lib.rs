//! Image-to-video animation with motion-residual diffusion, at toy scale.

pub mod cli;
pub mod codec;
pub mod dctinit;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod residual;
pub mod ssim;
pub mod video_io;

pub use error::{Error, Result};
