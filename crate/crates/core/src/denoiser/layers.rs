//! Dense kernels for the denoiser: GEMM dispatch, im2col convolutions over a
//! channel-major `[C][N * H * W]` activation layout, and activations.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub trait Real:
    Float + FromPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    /// `C = alpha A B + beta C` with arbitrary strides (matrixmultiply semantics).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `C (m x n) [+]= op(A) (m x k) * op(B) (k x n)`.
///
/// With `trans_a`, `a` holds the `k x m` matrix whose transpose is used; same
/// for `trans_b` with an `n x k` buffer.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "matmul buffer too small"
    );
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserted lengths cover every index reachable through the strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => x / (T::one() + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = T::one() / (T::one() + (-x).exp());
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn map<T: Real>(self, xs: &[T]) -> Vec<T> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

/// Frames, height, width of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offset `(frame, row, col)` read by one kernel tap.
pub type Tap = (isize, isize, isize);

pub const SPATIAL_3X3: [Tap; 9] = [
    (0, -1, -1),
    (0, -1, 0),
    (0, -1, 1),
    (0, 0, -1),
    (0, 0, 0),
    (0, 0, 1),
    (0, 1, -1),
    (0, 1, 0),
    (0, 1, 1),
];

pub const TEMPORAL_3: [Tap; 3] = [(-1, 0, 0), (0, 0, 0), (1, 0, 0)];

/// Output index range `[lo, hi)` whose source `i + d` lies in `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Gathers shifted copies of `x` (`[cin][L]`) into `col` (`[cin * taps][L]`),
/// zero-padding outside the sample.
pub fn im2col<T: Real>(x: &[T], cin: usize, dims: Dims, taps: &[Tap], col: &mut [T]) {
    let l = dims.len();
    let (hw, w) = (dims.height * dims.width, dims.width);
    for ci in 0..cin {
        let src = &x[ci * l..(ci + 1) * l];
        for (ti, &(dt, dy, dx)) in taps.iter().enumerate() {
            let dst = &mut col[(ci * taps.len() + ti) * l..(ci * taps.len() + ti + 1) * l];
            let (f_lo, f_hi) = valid_range(dims.frames, dt);
            let (y_lo, y_hi) = valid_range(dims.height, dy);
            let (x_lo, x_hi) = valid_range(w, dx);
            for f in 0..dims.frames {
                let frame = &mut dst[f * hw..(f + 1) * hw];
                if f < f_lo || f >= f_hi {
                    frame.fill(T::zero());
                    continue;
                }
                let sf = (f as isize + dt) as usize;
                for y in 0..dims.height {
                    let row = &mut frame[y * w..(y + 1) * w];
                    if y < y_lo || y >= y_hi {
                        row.fill(T::zero());
                        continue;
                    }
                    let sy = (y as isize + dy) as usize;
                    let base = sf * hw + sy * w;
                    row[..x_lo].fill(T::zero());
                    row[x_hi..].fill(T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    row[x_lo..x_hi].copy_from_slice(&src[base + s0..base + s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `dx`, accumulating.
pub fn col2im<T: Real>(col: &[T], cin: usize, dims: Dims, taps: &[Tap], dx_out: &mut [T]) {
    let l = dims.len();
    let (hw, w) = (dims.height * dims.width, dims.width);
    for ci in 0..cin {
        let dst = &mut dx_out[ci * l..(ci + 1) * l];
        for (ti, &(dt, dy, dx)) in taps.iter().enumerate() {
            let src = &col[(ci * taps.len() + ti) * l..(ci * taps.len() + ti + 1) * l];
            let (f_lo, f_hi) = valid_range(dims.frames, dt);
            let (y_lo, y_hi) = valid_range(dims.height, dy);
            let (x_lo, x_hi) = valid_range(w, dx);
            for f in f_lo..f_hi {
                let sf = (f as isize + dt) as usize;
                for y in y_lo..y_hi {
                    let sy = (y as isize + dy) as usize;
                    let base = sf * hw + sy * w;
                    let s0 = (x_lo as isize + dx) as usize;
                    let from = &src[f * hw + y * w + x_lo..f * hw + y * w + x_hi];
                    for (d, &v) in dst[base + s0..base + s0 + (x_hi - x_lo)].iter_mut().zip(from) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Shape of one convolution; weights are `[cout][cin * taps]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub taps: &'static [Tap],
}

impl ConvShape {
    pub fn fan_in(&self) -> usize {
        self.cin * self.taps.len()
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }
}

pub fn conv_forward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    bias: &[T],
    x: &[T],
    dims: Dims,
    col: &mut Vec<T>,
    out: &mut [T],
) {
    let l = dims.len();
    let k = shape.fan_in();
    col.resize(k * l, T::zero());
    im2col(x, shape.cin, dims, shape.taps, col);
    matmul(shape.cout, k, l, weight, false, col, false, out, false);
    for (row, &b) in out.chunks_mut(l).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates weight/bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    shape: ConvShape,
    weight: &[T],
    x: &[T],
    dout: &[T],
    dims: Dims,
    col: &mut Vec<T>,
    dweight: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    let l = dims.len();
    let k = shape.fan_in();
    col.resize(k * l, T::zero());
    im2col(x, shape.cin, dims, shape.taps, col);
    matmul(shape.cout, l, k, dout, false, col, true, dweight, true);
    for (row, db) in dout.chunks(l).zip(dbias.iter_mut()) {
        *db += row.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        matmul(k, shape.cout, l, weight, true, dout, false, col, false);
        col2im(col, shape.cin, dims, shape.taps, dx);
    }
}
