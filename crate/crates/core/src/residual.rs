//! Motion residuals `m_i = z_{i+1} - z_1` and the model input built from them.
//!
//! Residuals are held in `f64`: the difference of two `f32` latents is then
//! exact, so adding the anchor frame back reproduces the latents bit for bit.

use ndarray::{concatenate, s, Array3, Array4, ArrayView3, ArrayView4, Axis};

use crate::codec::LatentClip;
use crate::error::{Error, Result};

/// `(N - 1) x c x h x w` stack of residuals against the first latent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionResiduals {
    pub m: Array4<f64>,
}

impl MotionResiduals {
    pub fn new(m: Array4<f64>) -> Self {
        Self { m }
    }

    pub fn n_residuals(&self) -> usize {
        self.m.shape()[0]
    }
}

/// `N x c x h x w` model input: the anchor frame followed by `m_t + z_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub x: Array4<f64>,
}

impl ModelInput {
    pub fn n_frames(&self) -> usize {
        self.x.shape()[0]
    }
}

pub fn residuals_from_latents(latents: &LatentClip) -> Result<MotionResiduals> {
    residuals_from_frames(latents.z.view())
}

pub fn residuals_from_frames(z: ArrayView4<f32>) -> Result<MotionResiduals> {
    if z.shape()[0] < 2 {
        return Err(Error::arg("motion residuals need at least two frames"));
    }
    let anchor = z.index_axis(Axis(0), 0).mapv(f64::from);
    let rest = z.slice(s![1.., .., .., ..]).mapv(f64::from);
    Ok(MotionResiduals { m: rest - &anchor })
}

fn check_anchor(z1: &ArrayView3<f32>, m: &ArrayView4<f64>) -> Result<()> {
    if z1.shape() != &m.shape()[1..] {
        return Err(Error::shape(format!(
            "anchor {:?} vs residual frames {:?}",
            z1.shape(),
            &m.shape()[1..]
        )));
    }
    Ok(())
}

/// `[z1, z1 + m_1, ..., z1 + m_{N-1}]`.
pub fn latents_from_residuals(z1: ArrayView3<f32>, residuals: &MotionResiduals) -> Result<Array4<f32>> {
    check_anchor(&z1, &residuals.m.view())?;
    let anchor = z1.mapv(f64::from);
    let rest = (&residuals.m + &anchor).mapv(|v| v as f32);
    let out = concatenate(Axis(0), &[z1.view().insert_axis(Axis(0)), rest.view()])?;
    Ok(out)
}

/// `X_t = cat([z1, m_t + z1])` along time.
pub fn assemble_model_input(z1: ArrayView3<f32>, m_t: ArrayView4<f64>) -> Result<ModelInput> {
    check_anchor(&z1, &m_t)?;
    let anchor: Array3<f64> = z1.mapv(f64::from);
    let shifted = &m_t + &anchor;
    let x = concatenate(Axis(0), &[anchor.view().insert_axis(Axis(0)), shifted.view()])?;
    Ok(ModelInput { x })
}

/// Frames `1..N` of the model output: the noise prediction for the residual stack.
pub fn extract_residual_prediction<T: Clone>(output: ArrayView4<T>) -> Result<Array4<T>> {
    if output.shape()[0] < 2 {
        return Err(Error::shape("model output needs at least two frames"));
    }
    Ok(output.slice(s![1.., .., .., ..]).to_owned())
}
