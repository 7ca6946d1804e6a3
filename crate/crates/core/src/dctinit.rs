//! Frequency-domain refinement of the initial residual noise.
//!
//! The low band of a noised, frame-replicated copy of the first latent is
//! spliced into the high band of fresh Gaussian noise:
//!
//! ```text
//! eps' = idct3(dct3(z1_tau) * H + dct3(eps) * (1 - H))
//! ```
//!
//! Transforms act on the time, height and width axes of an `N x c x h x w`
//! tensor; channels are independent. An FFT variant is kept as a baseline.

use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView3, ArrayView4, Axis, Zip};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};

/// Axes of a `(time, channel, height, width)` tensor that get transformed.
const AXES: [usize; 3] = [0, 2, 3];

/// Orthonormal DCT-II matrix, row `k` holding basis vector `k`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

fn dct_along(x: &mut Array4<f64>, axis: usize, inverse: bool) {
    let n = x.shape()[axis];
    if n == 0 {
        return;
    }
    let m = dct_matrix(n);
    let mut buf = vec![0.0; n];
    for mut lane in x.lanes_mut(Axis(axis)) {
        for (k, out) in buf.iter_mut().enumerate() {
            *out = if inverse {
                (0..n).map(|i| m[i * n + k] * lane[i]).sum()
            } else {
                (0..n).map(|i| m[k * n + i] * lane[i]).sum()
            };
        }
        lane.iter_mut().zip(&buf).for_each(|(v, &b)| *v = b);
    }
}

/// Separable orthonormal DCT-II over time, height and width.
pub fn dct3(x: ArrayView4<f64>) -> Array4<f64> {
    let mut out = x.to_owned();
    for axis in AXES {
        dct_along(&mut out, axis, false);
    }
    out
}

/// Inverse of [`dct3`] (orthonormal DCT-III).
pub fn idct3(coeffs: ArrayView4<f64>) -> Array4<f64> {
    let mut out = coeffs.to_owned();
    for axis in AXES {
        dct_along(&mut out, axis, true);
    }
    out
}

fn fft_along(x: &mut Array4<Complex64>, axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = x.shape()[axis];
    if n == 0 {
        return;
    }
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in x.lanes_mut(Axis(axis)) {
        buf.iter_mut().zip(lane.iter()).for_each(|(b, &v)| *b = v);
        fft.process(&mut buf);
        lane.iter_mut().zip(&buf).for_each(|(v, &b)| *v = b * scale);
    }
}

/// Unitary 3D DFT over time, height and width.
pub fn fft3(x: ArrayView4<f64>) -> Array4<Complex64> {
    let mut out = x.mapv(|v| Complex64::new(v, 0.0));
    let mut planner = FftPlanner::new();
    for axis in AXES {
        fft_along(&mut out, axis, false, &mut planner);
    }
    out
}

/// Inverse of [`fft3`], keeping the real part.
pub fn ifft3(coeffs: ArrayView4<Complex64>) -> Array4<f64> {
    let mut out = coeffs.to_owned();
    let mut planner = FftPlanner::new();
    for axis in AXES {
        fft_along(&mut out, axis, true, &mut planner);
    }
    out.mapv(|c| c.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ideal,
    Gaussian,
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(FilterKind::Ideal),
            "gaussian" => Ok(FilterKind::Gaussian),
            other => Err(Error::config(format!("unknown filter kind {other:?} (ideal|gaussian)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqMode {
    Dct,
    Fft,
}

impl FromStr for FreqMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct" => Ok(FreqMode::Dct),
            "fft" => Ok(FreqMode::Fft),
            other => Err(Error::config(format!("unknown frequency mode {other:?} (dct|fft)"))),
        }
    }
}

/// Normalized frequency of bin `i` out of `len`, in `[0, 1)`.
///
/// DCT bins are ordered by frequency already. DFT bins `i` and `len - i` hold
/// the same frequency, so they share a coordinate and masks stay Hermitian.
pub fn normalized_frequency(i: usize, len: usize, mode: FreqMode) -> f64 {
    match mode {
        FreqMode::Dct => i as f64 / len as f64,
        FreqMode::Fft => 2.0 * i.min(len - i) as f64 / len as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFilter {
    /// `time x height x width` gains in `[0, 1]`, broadcast over channels.
    pub mask: Array3<f64>,
    pub kind: FilterKind,
    pub cutoff_t: f64,
    pub cutoff_s: f64,
    pub mode: FreqMode,
}

fn check_cutoff(rho: f64, what: &str) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config(format!("{what} cutoff {rho} outside (0, 1]")));
    }
    Ok(())
}

fn axis_gain(u: f64, rho: f64, kind: FilterKind) -> f64 {
    match kind {
        // a cutoff of 1 keeps every bin on that axis
        FilterKind::Ideal => f64::from(u < rho || rho >= 1.0),
        FilterKind::Gaussian => (-0.5 * (u / rho).powi(2)).exp(),
    }
}

/// Low-pass mask for a `(time, height, width)` grid with temporal cutoff
/// `cutoff_t` and spatial cutoff `cutoff_s`.
pub fn make_lowpass(
    shape: (usize, usize, usize),
    kind: FilterKind,
    cutoff_t: f64,
    cutoff_s: f64,
    mode: FreqMode,
) -> Result<FrequencyFilter> {
    check_cutoff(cutoff_t, "temporal")?;
    check_cutoff(cutoff_s, "spatial")?;
    let (n, h, w) = shape;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("empty filter shape {shape:?}")));
    }
    let gain = |i: usize, len: usize, rho: f64| axis_gain(normalized_frequency(i, len, mode), rho, kind);
    let mask = Array3::from_shape_fn(shape, |(k, y, x)| {
        gain(k, n, cutoff_t) * gain(y, h, cutoff_s) * gain(x, w, cutoff_s)
    });
    Ok(FrequencyFilter {
        mask,
        kind,
        cutoff_t,
        cutoff_s,
        mode,
    })
}

/// `inverse(forward(low) * H + forward(high) * (1 - H))` with the mask
/// broadcast over channels.
pub fn spectral_blend(
    low: ArrayView4<f64>,
    high: ArrayView4<f64>,
    mask: ArrayView3<f64>,
    mode: FreqMode,
) -> Result<Array4<f64>> {
    if low.shape() != high.shape() {
        return Err(Error::shape(format!(
            "blend inputs {:?} vs {:?}",
            low.shape(),
            high.shape()
        )));
    }
    let (n, _, h, w) = low.dim();
    if mask.dim() != (n, h, w) {
        return Err(Error::shape(format!(
            "mask {:?} vs tensor time/height/width {:?}",
            mask.shape(),
            (n, h, w)
        )));
    }
    // degenerate masks skip the round trip and are exact
    if mask.iter().all(|&m| m == 1.0) {
        return Ok(low.to_owned());
    }
    if mask.iter().all(|&m| m == 0.0) {
        return Ok(high.to_owned());
    }
    let mask4 = mask.insert_axis(Axis(1));
    let mask4 = mask4.broadcast(low.raw_dim()).expect("mask broadcasts over channels");
    Ok(match mode {
        FreqMode::Dct => {
            let mut a = dct3(low);
            let b = dct3(high);
            Zip::from(&mut a)
                .and(&b)
                .and(&mask4)
                .for_each(|a, &b, &m| *a = *a * m + b * (1.0 - m));
            idct3(a.view())
        }
        FreqMode::Fft => {
            let mut a = fft3(low);
            let b = fft3(high);
            Zip::from(&mut a)
                .and(&b)
                .and(&mask4)
                .for_each(|a, &b, &m| *a = *a * m + b * (1.0 - m));
            ifft3(a.view())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub enabled: bool,
    /// Noise level applied to the replicated first latent; `None` means `T - 1`.
    pub tau: Option<usize>,
    pub filter: FilterKind,
    pub cutoff_t: f64,
    pub cutoff_s: f64,
    pub mode: FreqMode,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tau: None,
            filter: FilterKind::Ideal,
            cutoff_t: 0.25,
            cutoff_s: 0.25,
            mode: FreqMode::Dct,
        }
    }
}

impl RefineConfig {
    pub fn tau(&self, sched: &NoiseSchedule) -> usize {
        self.tau.unwrap_or(sched.steps() - 1)
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        check_cutoff(self.cutoff_t, "temporal")?;
        check_cutoff(self.cutoff_s, "spatial")?;
        let tau = self.tau(sched);
        if tau == 0 || tau >= sched.steps() {
            return Err(Error::config(format!("tau {tau} outside 1..={}", sched.steps() - 1)));
        }
        Ok(())
    }
}

/// `z1` replicated over `frames` time steps and noised to `tau`.
pub fn noised_anchor(
    z1: ArrayView3<f32>,
    frames: usize,
    tau: usize,
    noise: ArrayView4<f64>,
    sched: &NoiseSchedule,
) -> Result<Array4<f64>> {
    let (c, h, w) = z1.dim();
    if noise.dim() != (frames, c, h, w) {
        return Err(Error::shape(format!(
            "noise {:?} vs replicated anchor {:?}",
            noise.shape(),
            (frames, c, h, w)
        )));
    }
    let anchor = z1.mapv(f64::from);
    let replicated = anchor
        .broadcast((frames, c, h, w))
        .expect("anchor broadcasts over time")
        .to_owned();
    q_sample(replicated.view(), tau, noise, sched)
}

/// Refined initial residual noise. With `enabled == false` returns `eps` unchanged.
pub fn refine_noise(
    z1: ArrayView3<f32>,
    eps: ArrayView4<f64>,
    cfg: &RefineConfig,
    sched: &NoiseSchedule,
    noise_for_tau: ArrayView4<f64>,
) -> Result<Array4<f64>> {
    if !cfg.enabled {
        return Ok(eps.to_owned());
    }
    cfg.validate(sched)?;
    let (n, c, h, w) = eps.dim();
    if z1.dim() != (c, h, w) {
        return Err(Error::shape(format!(
            "anchor {:?} vs noise frames {:?}",
            z1.shape(),
            (c, h, w)
        )));
    }
    let z1_tau = noised_anchor(z1, n, cfg.tau(sched), noise_for_tau, sched)?;
    let filter = make_lowpass((n, h, w), cfg.filter, cfg.cutoff_t, cfg.cutoff_s, cfg.mode)?;
    spectral_blend(z1_tau.view(), eps, filter.mask.view(), cfg.mode)
}

/// Largest `|H (F r - F low)|` and `|(1 - H)(F r - F high)|` over all
/// coefficients, `F` being the transform of `mode`. Both are zero when `r` is
/// the blend of `low` and `high` under a binary mask `H`.
pub fn band_errors(
    refined: ArrayView4<f64>,
    low: ArrayView4<f64>,
    high: ArrayView4<f64>,
    mask: ArrayView3<f64>,
    mode: FreqMode,
) -> Result<(f64, f64)> {
    if refined.shape() != low.shape() || refined.shape() != high.shape() {
        return Err(Error::shape("band check inputs must share a shape"));
    }
    let (n, _, h, w) = refined.dim();
    if mask.dim() != (n, h, w) {
        return Err(Error::shape(format!(
            "mask {:?} vs tensor time/height/width {:?}",
            mask.shape(),
            (n, h, w)
        )));
    }
    let mask4 = mask.insert_axis(Axis(1));
    let mask4 = mask4
        .broadcast(refined.raw_dim())
        .expect("mask broadcasts over channels");
    let mut errs = (0.0f64, 0.0f64);
    match mode {
        FreqMode::Dct => {
            let (r, l, hi) = (dct3(refined), dct3(low), dct3(high));
            Zip::from(&r).and(&l).and(&hi).and(&mask4).for_each(|&r, &l, &hi, &m| {
                errs.0 = errs.0.max((m * (r - l)).abs());
                errs.1 = errs.1.max(((1.0 - m) * (r - hi)).abs());
            });
        }
        FreqMode::Fft => {
            let (r, l, hi) = (fft3(refined), fft3(low), fft3(high));
            Zip::from(&r).and(&l).and(&hi).and(&mask4).for_each(|&r, &l, &hi, &m| {
                errs.0 = errs.0.max(((r - l) * m).norm());
                errs.1 = errs.1.max(((r - hi) * (1.0 - m)).norm());
            });
        }
    }
    Ok(errs)
}

/// Share of the signal energy that falls inside an ideal low-pass band.
pub fn low_band_energy_fraction(x: ArrayView4<f64>, cutoff_t: f64, cutoff_s: f64, mode: FreqMode) -> Result<f64> {
    let (n, _, h, w) = x.dim();
    let filter = make_lowpass((n, h, w), FilterKind::Ideal, cutoff_t, cutoff_s, mode)?;
    let mask = filter.mask.insert_axis(Axis(1));
    let mask = mask.broadcast(x.raw_dim()).expect("mask broadcasts over channels");
    let (low, total) = match mode {
        FreqMode::Dct => {
            let d = dct3(x);
            let low = Zip::from(&d).and(&mask).fold(0.0, |acc, &v, &m| acc + m * v * v);
            (low, d.iter().map(|v| v * v).sum::<f64>())
        }
        FreqMode::Fft => {
            let f = fft3(x);
            let low = Zip::from(&f).and(&mask).fold(0.0, |acc, &v, &m| acc + m * v.norm_sqr());
            (low, f.iter().map(|v| v.norm_sqr()).sum::<f64>())
        }
    };
    if total == 0.0 {
        return Err(Error::arg("energy fraction of an all-zero signal"));
    }
    Ok(low / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal4(seed: u64, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
    }

    fn max_abs(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        (a - b).mapv(f64::abs).fold(0.0, |m, &v| m.max(v))
    }

    /// Textbook DCT-II with explicit sums, one axis at a time.
    fn naive_dct_1d(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                s * x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos())
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn dct_matches_textbook_formula() {
        let x = normal4(0, (5, 1, 1, 1));
        let d = dct3(x.view());
        let expected = naive_dct_1d(&x.iter().copied().collect::<Vec<_>>());
        for (a, b) in d.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transforms_invert_and_preserve_energy() {
        let x = normal4(1, (15, 12, 16, 16));
        assert!(max_abs(&idct3(dct3(x.view()).view()), &x) < 1e-6);
        assert!(max_abs(&ifft3(fft3(x.view()).view()), &x) < 1e-6);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let dct_energy: f64 = dct3(x.view()).iter().map(|v| v * v).sum();
        let fft_energy: f64 = fft3(x.view()).iter().map(|v| v.norm_sqr()).sum();
        assert!((energy - dct_energy).abs() < 1e-6);
        assert!((energy - fft_energy).abs() < 1e-6);
    }

    #[test]
    fn constant_input_has_only_dc() {
        let x = Array4::from_shape_fn((6, 2, 4, 5), |(_, c, _, _)| 1.0 + c as f64);
        let d = dct3(x.view());
        for ((t, c, y, xx), &v) in d.indexed_iter() {
            if (t, y, xx) == (0, 0, 0) {
                assert!((v - (1.0 + c as f64) * (6.0 * 4.0 * 5.0f64).sqrt()).abs() < 1e-9);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_construction() {
        let all = make_lowpass((16, 16, 16), FilterKind::Ideal, 1.0, 1.0, FreqMode::Dct).unwrap();
        assert!(all.mask.iter().all(|&v| v == 1.0));
        let all_fft = make_lowpass((16, 16, 16), FilterKind::Ideal, 1.0, 1.0, FreqMode::Fft).unwrap();
        assert!(all_fft.mask.iter().all(|&v| v == 1.0));

        let dc = make_lowpass((15, 16, 16), FilterKind::Ideal, 1e-6, 1e-6, FreqMode::Dct).unwrap();
        assert_eq!(dc.mask.sum(), 1.0);
        assert_eq!(dc.mask[[0, 0, 0]], 1.0);

        let q = make_lowpass((16, 16, 16), FilterKind::Ideal, 0.25, 0.25, FreqMode::Dct).unwrap();
        for i in 0..16 {
            assert_eq!(q.mask[[i, 0, 0]], f64::from(i < 4));
            assert_eq!(q.mask[[0, i, 0]], f64::from(i < 4));
            assert_eq!(q.mask[[0, 0, i]], f64::from(i < 4));
        }
        assert_eq!(q.mask.sum(), 64.0);

        let g = make_lowpass((8, 8, 8), FilterKind::Gaussian, 0.5, 0.25, FreqMode::Dct).unwrap();
        assert_eq!(g.mask[[0, 0, 0]], 1.0);
        assert!((g.mask[[4, 0, 0]] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((g.mask[[0, 2, 0]] - (-0.5f64).exp()).abs() < 1e-12);
        assert!(g.mask.iter().all(|&v| (0.0..=1.0).contains(&v)));

        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(make_lowpass((4, 4, 4), FilterKind::Ideal, bad, 0.5, FreqMode::Dct).is_err());
            assert!(make_lowpass((4, 4, 4), FilterKind::Ideal, 0.5, bad, FreqMode::Dct).is_err());
        }
    }

    #[test]
    fn fft_masks_are_symmetric() {
        let f = make_lowpass((15, 16, 16), FilterKind::Ideal, 0.3, 0.4, FreqMode::Fft).unwrap();
        for ((t, y, x), &v) in f.mask.indexed_iter() {
            assert_eq!(v, f.mask[[(15 - t) % 15, (16 - y) % 16, (16 - x) % 16]]);
        }
    }

    #[test]
    fn band_preservation() {
        let low = normal4(2, (15, 12, 16, 16));
        let high = normal4(3, (15, 12, 16, 16));
        for rho in [0.1, 0.25, 0.5] {
            let f = make_lowpass((15, 16, 16), FilterKind::Ideal, rho, rho, FreqMode::Dct).unwrap();
            let out = spectral_blend(low.view(), high.view(), f.mask.view(), FreqMode::Dct).unwrap();
            let (d_out, d_low, d_high) = (dct3(out.view()), dct3(low.view()), dct3(high.view()));
            for (((t, _, y, x), &o), (&l, &h)) in d_out.indexed_iter().zip(d_low.iter().zip(d_high.iter())) {
                let expected = if f.mask[[t, y, x]] == 1.0 { l } else { h };
                assert!((o - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn band_errors_vanish_for_blends_only() {
        let low = normal4(16, (7, 2, 8, 8));
        let high = normal4(17, (7, 2, 8, 8));
        for mode in [FreqMode::Dct, FreqMode::Fft] {
            let f = make_lowpass((7, 8, 8), FilterKind::Ideal, 0.3, 0.5, mode).unwrap();
            let out = spectral_blend(low.view(), high.view(), f.mask.view(), mode).unwrap();
            let (lo, hi) = band_errors(out.view(), low.view(), high.view(), f.mask.view(), mode).unwrap();
            assert!(lo < 1e-6 && hi < 1e-6, "{mode:?} {lo} {hi}");
            let (lo, hi) = band_errors(high.view(), low.view(), high.view(), f.mask.view(), mode).unwrap();
            assert!(lo > 0.1 && hi == 0.0);
        }
    }

    #[test]
    fn gaussian_blend_is_a_convex_combination() {
        let low = normal4(4, (6, 2, 8, 8));
        let high = normal4(5, (6, 2, 8, 8));
        let f = make_lowpass((6, 8, 8), FilterKind::Gaussian, 0.3, 0.3, FreqMode::Dct).unwrap();
        let out = spectral_blend(low.view(), high.view(), f.mask.view(), FreqMode::Dct).unwrap();
        let (d_out, d_low, d_high) = (dct3(out.view()), dct3(low.view()), dct3(high.view()));
        for ((t, c, y, x), &o) in d_out.indexed_iter() {
            let m = f.mask[[t, y, x]];
            assert!((o - (m * d_low[[t, c, y, x]] + (1.0 - m) * d_high[[t, c, y, x]])).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_masks() {
        let low = normal4(6, (5, 3, 8, 8));
        let high = normal4(7, (5, 3, 8, 8));
        for mode in [FreqMode::Dct, FreqMode::Fft] {
            let ones = spectral_blend(low.view(), high.view(), Array3::ones((5, 8, 8)).view(), mode).unwrap();
            let zeros = spectral_blend(low.view(), high.view(), Array3::zeros((5, 8, 8)).view(), mode).unwrap();
            assert_eq!(ones, low);
            assert_eq!(zeros, high);
        }
        assert!(spectral_blend(low.view(), high.view(), Array3::ones((5, 8, 7)).view(), FreqMode::Dct).is_err());
    }

    #[test]
    fn refine_noise_contract() {
        let sched = make_schedule(1000, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z1 = Array3::from_shape_simple_fn((12, 16, 16), || rng.gen_range(-1.0f32..1.0));
        let eps = normal4(9, (15, 12, 16, 16));
        let nz = normal4(10, (15, 12, 16, 16));

        let off = RefineConfig {
            enabled: false,
            ..Default::default()
        };
        let same = refine_noise(z1.view(), eps.view(), &off, &sched, nz.view()).unwrap();
        assert_eq!(same, eps);

        let cfg = RefineConfig::default();
        let out = refine_noise(z1.view(), eps.view(), &cfg, &sched, nz.view()).unwrap();
        let z1_tau = noised_anchor(z1.view(), 15, 999, nz.view(), &sched).unwrap();
        let f = make_lowpass((15, 16, 16), FilterKind::Ideal, 0.25, 0.25, FreqMode::Dct).unwrap();
        let expected = spectral_blend(z1_tau.view(), eps.view(), f.mask.view(), FreqMode::Dct).unwrap();
        assert_eq!(out, expected);

        let bad_tau = RefineConfig {
            tau: Some(1000),
            ..Default::default()
        };
        assert!(refine_noise(z1.view(), eps.view(), &bad_tau, &sched, nz.view()).is_err());
        let zero_tau = RefineConfig {
            tau: Some(0),
            ..Default::default()
        };
        assert!(refine_noise(z1.view(), eps.view(), &zero_tau, &sched, nz.view()).is_err());
        let short = normal4(11, (14, 12, 16, 16));
        assert!(refine_noise(z1.view(), eps.view(), &cfg, &sched, short.view()).is_err());
    }

    #[test]
    fn refinement_is_affine() {
        // blend(a1 + a2, b1 + b2) = blend(a1, b1) + blend(a2, b2)
        let f = make_lowpass((6, 8, 8), FilterKind::Ideal, 0.25, 0.5, FreqMode::Dct).unwrap();
        let (a1, a2, b1, b2) = (
            normal4(12, (6, 2, 8, 8)),
            normal4(13, (6, 2, 8, 8)),
            normal4(14, (6, 2, 8, 8)),
            normal4(15, (6, 2, 8, 8)),
        );
        let lhs = spectral_blend((&a1 + &a2).view(), (&b1 + &b2).view(), f.mask.view(), FreqMode::Dct).unwrap();
        let rhs = spectral_blend(a1.view(), b1.view(), f.mask.view(), FreqMode::Dct).unwrap()
            + spectral_blend(a2.view(), b2.view(), f.mask.view(), FreqMode::Dct).unwrap();
        assert!(max_abs(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn dct_compacts_a_ramp_better_than_fft() {
        let ramp = Array4::from_shape_fn((16, 1, 4, 4), |(t, _, _, _)| t as f64 / 15.0);
        let dct = low_band_energy_fraction(ramp.view(), 0.1, 1.0, FreqMode::Dct).unwrap();
        let fft = low_band_energy_fraction(ramp.view(), 0.1, 1.0, FreqMode::Fft).unwrap();
        assert!(dct > fft + 0.05, "dct {dct} fft {fft}");
        assert!(low_band_energy_fraction(Array4::zeros((4, 1, 2, 2)).view(), 0.1, 1.0, FreqMode::Dct).is_err());
    }

    #[test]
    fn parsing() {
        assert_eq!("gaussian".parse::<FilterKind>().unwrap(), FilterKind::Gaussian);
        assert_eq!("fft".parse::<FreqMode>().unwrap(), FreqMode::Fft);
        assert!("box".parse::<FilterKind>().is_err());
        assert!("wavelet".parse::<FreqMode>().is_err());
    }
}
