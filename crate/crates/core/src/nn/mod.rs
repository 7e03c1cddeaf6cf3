//! Minimal dense tensor kernels for the U-Net: GEMM dispatch, 4x4 stride-2
//! patch extraction, and the Adam optimizer.
//!
//! Activations use the `[C, N, H, W]` layout so a convolution is a single
//! GEMM whose output is already in that layout and channel concatenation is
//! buffer concatenation.

mod adam;
mod transfer;
mod unet;

pub use adam::{Adam, AdamConfig};
pub use transfer::{expand_channels, expand_depth, BlockOrigin, DepthMapping};
pub use unet::{
    pack_inputs, Block, ForwardCache, ModelConfig, Param, UNet, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE,
    MAX_WIDTH,
};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of a model.
pub trait Real: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Raw strided GEMM, see [`matrixmultiply::sgemm`].
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
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
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

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
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

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

/// `c = alpha * op(a) op(b) + beta * c` on row-major buffers, where `op(a)` is
/// `m x k` (stored transposed when `ta`) and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if n <= STREAM_MAX_N && m * k >= STREAM_MIN_WORK {
        return gemm_stream(ta, tb, m, n, k, alpha, a, b, beta, c);
    }
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    // SAFETY: lengths checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}



/// Kernel side of every convolution.
pub const KERNEL: usize = 4;
const TAPS: usize = KERNEL * KERNEL;

/// Patch matrix of a 4x4, stride-2, pad-1 convolution.
///
/// `x` is `[c, n, h, w]`; `cols` is `[c * 16, n * (h/2) * (w/2)]` with row
/// `ci * 16 + kh * 4 + kw`.
pub fn im2col<T: Real>(x: &[T], c: usize, n: usize, h: usize, w: usize, cols: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let np = n * ho * wo;
    debug_assert_eq!(x.len(), c * n * h * w);
    debug_assert_eq!(cols.len(), c * TAPS * np);
    for ci in 0..c {
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + kh * KERNEL + kw) * np..][..np];
                for b in 0..n {
                    let src = &x[(ci * n + b) * h * w..][..h * w];
                    for oy in 0..ho {
                        let dst = &mut row[(b * ho + oy) * wo..][..wo];
                        let iy = (2 * oy + kh) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let srow = &src[iy as usize * w..][..w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (2 * ox + kw) as isize - 1;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { srow[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto a zeroed `[c, n, h, w]`.
pub fn col2im<T: Real>(cols: &[T], c: usize, n: usize, h: usize, w: usize, x: &mut [T]) {
    let (ho, wo) = (h / 2, w / 2);
    let np = n * ho * wo;
    debug_assert_eq!(x.len(), c * n * h * w);
    debug_assert_eq!(cols.len(), c * TAPS * np);
    x.fill(T::zero());
    for ci in 0..c {
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = &cols[(ci * TAPS + kh * KERNEL + kw) * np..][..np];
                for b in 0..n {
                    let dst = &mut x[(ci * n + b) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + kh) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &row[(b * ho + oy) * wo..][..wo];
                        let drow = &mut dst[iy as usize * w..][..w];
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (2 * ox + kw) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] = drow[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Widest `n` sent to the streaming path.
const STREAM_MAX_N: usize = 4;
/// Below this `m * k` the packed GEMM is at least as fast.
const STREAM_MIN_WORK: usize = 1 << 16;

/// Very skinny products are bound by reading `a`; stream it once instead of
/// packing it.
#[allow(clippy::too_many_arguments)]
fn gemm_stream<T: Real>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let bv = |p: usize, j: usize| if tb { b[j * k + p] } else { b[p * n + j] };
    let mut ct = vec![T::zero(); n * m];
    if ta {
        for p in 0..k {
            let arow = &a[p * m..][..m];
            for (j, cj) in ct.chunks_exact_mut(m).enumerate() {
                let s = bv(p, j);
                if s != T::zero() {
                    cj.iter_mut().zip(arow).for_each(|(y, &x)| *y = *y + s * x);
                }
            }
        }
    } else {
        let mut bt = vec![T::zero(); n * k];
        for j in 0..n {
            for p in 0..k {
                bt[j * k + p] = bv(p, j);
            }
        }
        for i in 0..m {
            let arow = &a[i * k..][..k];
            for j in 0..n {
                ct[j * m + i] = dot(arow, &bt[j * k..][..k]);
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            let v = alpha * ct[j * m + i];
            let dst = &mut c[i * n + j];
            *dst = if beta == T::zero() { v } else { beta * *dst + v };
        }
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    const LANES: usize = 16;
    let mut acc = [T::zero(); LANES];
    let (xc, yc) = (x.chunks_exact(LANES), y.chunks_exact(LANES));
    let mut s = T::zero();
    for (&a, &b) in xc.remainder().iter().zip(yc.remainder()) {
        s = s + a * b;
    }
    for (xs, ys) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] = acc[l] + xs[l] * ys[l];
        }
    }
    acc.iter().fold(s, |t, &v| t + v)
}
