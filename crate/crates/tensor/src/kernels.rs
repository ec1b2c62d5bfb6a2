//! Raw buffer kernels shared by forward and backward passes.

/// Geometry of a 2D sliding window over a `[B, C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Columns per patch row: `C * k * k`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn patches(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }
}

/// `c = a @ b` (or `c += ...` when `accumulate`), with optional transposes.
///
/// `a` is `m x k` (stored `k x m` when `trans_a`), `b` is `k x n` (stored
/// `n x k` when `trans_b`); `c` is `m x n`, row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
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
        );
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(data: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![0.0f32; data.len()];
    if data.is_empty() {
        return (out_shape, out);
    }
    let nd = out_shape.len();
    if nd == 0 {
        out[0] = data[0];
        return (out_shape, out);
    }
    // Walk the output in order; the innermost axis is copied with a fixed source stride.
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    let mut idx = vec![0usize; nd - 1];
    let mut offset = 0usize;
    for chunk in out.chunks_mut(inner) {
        let mut s = offset;
        for v in chunk.iter_mut() {
            *v = data[s];
            s += inner_stride;
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// im2col: `[B, C, H, W]` to `[B * Ho * Wo, C * k * k]`, zero padded.
pub(crate) fn unfold(x: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (ho, wo, k) = (g.out_height(), g.out_width(), g.kernel);
    let cols = g.patch_len();
    let mut out = vec![0.0f32; g.patches() * cols];
    let hw = g.height * g.width;
    for b in 0..g.batch {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * cols;
                let ix0 = (ox * g.stride) as isize - g.padding as isize;
                let interior = ix0 >= 0 && ix0 as usize + k <= g.width;
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * hw;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let src = plane + iy as usize * g.width;
                        let dst = row + (c * k + ky) * k;
                        if interior {
                            let s0 = src + ix0 as usize;
                            out[dst..dst + k].copy_from_slice(&x[s0..s0 + k]);
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                out[dst + kx] = x[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// col2im: adjoint of [`unfold`], accumulating overlapping patches.
pub(crate) fn fold(cols_data: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let (ho, wo, k) = (g.out_height(), g.out_width(), g.kernel);
    let cols = g.patch_len();
    let hw = g.height * g.width;
    let mut out = vec![0.0f32; g.batch * g.channels * hw];
    for b in 0..g.batch {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * cols;
                let ix0 = (ox * g.stride) as isize - g.padding as isize;
                let interior = ix0 >= 0 && ix0 as usize + k <= g.width;
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * hw;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy as usize >= g.height {
                            continue;
                        }
                        let dst = plane + iy as usize * g.width;
                        let src = row + (c * k + ky) * k;
                        if interior {
                            let d0 = dst + ix0 as usize;
                            for (o, v) in out[d0..d0 + k].iter_mut().zip(&cols_data[src..src + k]) {
                                *o += v;
                            }
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && (ix as usize) < g.width {
                                out[dst + ix as usize] += cols_data[src + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)
const GELU_A: f32 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
