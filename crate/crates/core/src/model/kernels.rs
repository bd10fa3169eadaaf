//! Dense kernels: matrix multiply and 3D im2col/col2im.

/// Volume geometry of one `[T, H, W, C]` activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.t * self.h * self.w * self.c
    }

    pub fn positions(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// 3x3x3 convolution geometry with unit padding.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub input: Dims,
    pub output: Dims,
    pub t_stride: usize,
    pub s_stride: usize,
}

pub(crate) const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

impl ConvGeom {
    pub fn new(input: Dims, out_channels: usize, t_stride: usize, s_stride: usize) -> Self {
        let out = |n: usize, s: usize| (n - 1) / s + 1;
        let output = Dims { t: out(input.t, t_stride), h: out(input.h, s_stride), w: out(input.w, s_stride), c: out_channels };
        Self { input, output, t_stride, s_stride }
    }

    /// Row length of the unfolded input.
    pub fn patch(&self) -> usize {
        TAPS * self.input.c
    }
}

fn source(o: usize, k: usize, stride: usize, n: usize) -> Option<usize> {
    (o * stride + k).checked_sub(1).filter(|&i| i < n)
}

/// Unfolds one clip into `cols`, one row of `27 * C_in` values per output position.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (i, o) = (g.input, g.output);
    let patch = g.patch();
    debug_assert_eq!(cols.len(), o.positions() * patch);
    let mut row = 0;
    for to in 0..o.t {
        for ho in 0..o.h {
            for wo in 0..o.w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                let mut tap = 0;
                for kt in 0..KERNEL {
                    let ti = source(to, kt, g.t_stride, i.t);
                    for ky in 0..KERNEL {
                        let hi = source(ho, ky, g.s_stride, i.h);
                        for kx in 0..KERNEL {
                            let wi = source(wo, kx, g.s_stride, i.w);
                            let d = &mut dst[tap * i.c..(tap + 1) * i.c];
                            match (ti, hi, wi) {
                                (Some(ti), Some(hi), Some(wi)) => {
                                    let s = ((ti * i.h + hi) * i.w + wi) * i.c;
                                    d.copy_from_slice(&x[s..s + i.c]);
                                }
                                _ => d.fill(0.0),
                            }
                            tap += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (i, o) = (g.input, g.output);
    let patch = g.patch();
    let mut row = 0;
    for to in 0..o.t {
        for ho in 0..o.h {
            for wo in 0..o.w {
                let src = &cols[row * patch..(row + 1) * patch];
                let mut tap = 0;
                for kt in 0..KERNEL {
                    let ti = source(to, kt, g.t_stride, i.t);
                    for ky in 0..KERNEL {
                        let hi = source(ho, ky, g.s_stride, i.h);
                        for kx in 0..KERNEL {
                            let wi = source(wo, kx, g.s_stride, i.w);
                            if let (Some(ti), Some(hi), Some(wi)) = (ti, hi, wi) {
                                let d = ((ti * i.h + hi) * i.w + wi) * i.c;
                                for (a, b) in dx[d..d + i.c].iter_mut().zip(&src[tap * i.c..(tap + 1) * i.c]) {
                                    *a += b;
                                }
                            }
                            tap += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major operands, where `op` optionally
/// transposes. `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}
