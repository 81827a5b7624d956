//! Per-item kernels: convolution via im2col + GEMM, its transpose, instance
//! normalization and pointwise activations, each with a backward pass.
//!
//! All kernels work on a single `[c, h, w]` item stored row-major.

use crate::tensor::Scalar;

/// Upper bound on im2col buffer elements; larger problems are processed in
/// bands of output rows.
const COL_BUDGET: usize = 1 << 21;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Sliding-window geometry between a large grid and the small grid of window
/// positions (`small = (large + 2 * pad - kernel) / stride + 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub large_h: usize,
    pub large_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Output rows per band so that the column buffer stays within budget.
    fn band_rows(&self) -> usize {
        let per_row = self.col_rows() * self.small_w;
        (COL_BUDGET / per_row.max(1)).clamp(1, self.small_h)
    }

    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.band_rows();
        let total = self.small_h;
        (0..total)
            .step_by(step)
            .map(move |r0| (r0, (r0 + step).min(total)))
    }

    /// Fills `cols` (`col_rows x (rows * small_w)`) with windows of `src`
    /// for small-grid rows `r0..r1`.
    fn im2col<T: Scalar>(&self, src: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let k = self.kernel;
        let n = (r1 - r0) * self.small_w;
        let plane = self.large_h * self.large_w;
        for c in 0..self.channels {
            let src_c = &src[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in r0..r1 {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out = &mut dst[(oy - r0) * self.small_w..(oy - r0 + 1) * self.small_w];
                        if iy < 0 || iy >= self.large_h as isize {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src_row = &src_c[iy as usize * self.large_w..(iy as usize + 1) * self.large_w];
                        for (ox, v) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.large_w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto `dst` (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], r0: usize, r1: usize, dst: &mut [T]) {
        let k = self.kernel;
        let n = (r1 - r0) * self.small_w;
        let plane = self.large_h * self.large_w;
        for c in 0..self.channels {
            let dst_c = &mut dst[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in r0..r1 {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.large_h as isize {
                            continue;
                        }
                        let dst_row =
                            &mut dst_c[iy as usize * self.large_w..(iy as usize + 1) * self.large_w];
                        let vals = &src[(oy - r0) * self.small_w..(oy - r0 + 1) * self.small_w];
                        for (ox, &v) in vals.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.large_w {
                                dst_row[ix as usize] = dst_row[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution: `x` is `[cin, large]`, `weight` is `[cout, cin * k * k]`,
/// output is `[cout, small]`.
pub fn conv_forward<T: Scalar>(g: &Geometry, cout: usize, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let kdim = g.col_rows();
    let small = g.small_h * g.small_w;
    for (c, chunk) in out.chunks_mut(small).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[c]);
    }
    let mut cols = Vec::new();
    for (r0, r1) in g.bands() {
        let n = (r1 - r0) * g.small_w;
        cols.resize(kdim * n, T::zero());
        g.im2col(x, r0, r1, &mut cols);
        let off = r0 * g.small_w;
        T::gemm(
            cout,
            kdim,
            n,
            T::one(),
            weight,
            (kdim as isize, 1),
            &cols,
            (n as isize, 1),
            T::one(),
            &mut out[off..],
            (small as isize, 1),
        );
    }
}

/// Backward of [`conv_forward`]; accumulates into `dx`, `dweight`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &Geometry,
    cout: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dweight: &mut [T],
    dbias: &mut [T],
) {
    let kdim = g.col_rows();
    let small = g.small_h * g.small_w;
    for (c, chunk) in dy.chunks(small).enumerate() {
        dbias[c] = dbias[c] + chunk.iter().copied().sum::<T>();
    }
    let mut dx = dx;
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for (r0, r1) in g.bands() {
        let n = (r1 - r0) * g.small_w;
        let off = r0 * g.small_w;
        cols.resize(kdim * n, T::zero());
        g.im2col(x, r0, r1, &mut cols);
        T::gemm(
            cout,
            n,
            kdim,
            T::one(),
            &dy[off..],
            (small as isize, 1),
            &cols,
            (1, n as isize),
            T::one(),
            dweight,
            (kdim as isize, 1),
        );
        if let Some(dx) = dx.as_deref_mut() {
            dcols.resize(kdim * n, T::zero());
            T::gemm(
                kdim,
                cout,
                n,
                T::one(),
                weight,
                (1, kdim as isize),
                &dy[off..],
                (small as isize, 1),
                T::zero(),
                &mut dcols,
                (n as isize, 1),
            );
            g.col2im(&dcols, r0, r1, dx);
        }
    }
}

/// Transposed convolution: `x` is `[cin, small]`, `weight` is
/// `[cin, cout * k * k]`, output is `[cout, large]` where `g.channels == cout`.
pub fn conv_transpose_forward<T: Scalar>(g: &Geometry, cin: usize, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let kdim = g.col_rows();
    let small = g.small_h * g.small_w;
    let large = g.large_h * g.large_w;
    for (c, chunk) in out.chunks_mut(large).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[c]);
    }
    let mut cols = Vec::new();
    for (r0, r1) in g.bands() {
        let n = (r1 - r0) * g.small_w;
        let off = r0 * g.small_w;
        cols.resize(kdim * n, T::zero());
        T::gemm(
            kdim,
            cin,
            n,
            T::one(),
            weight,
            (1, kdim as isize),
            &x[off..],
            (small as isize, 1),
            T::zero(),
            &mut cols,
            (n as isize, 1),
        );
        g.col2im(&cols, r0, r1, out);
    }
}

/// Backward of [`conv_transpose_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Scalar>(
    g: &Geometry,
    cin: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dweight: &mut [T],
    dbias: &mut [T],
) {
    let kdim = g.col_rows();
    let small = g.small_h * g.small_w;
    let large = g.large_h * g.large_w;
    for (c, chunk) in dy.chunks(large).enumerate() {
        dbias[c] = dbias[c] + chunk.iter().copied().sum::<T>();
    }
    let mut dx = dx;
    let mut cols = Vec::new();
    for (r0, r1) in g.bands() {
        let n = (r1 - r0) * g.small_w;
        let off = r0 * g.small_w;
        cols.resize(kdim * n, T::zero());
        g.im2col(dy, r0, r1, &mut cols);
        T::gemm(
            cin,
            n,
            kdim,
            T::one(),
            &x[off..],
            (small as isize, 1),
            &cols,
            (1, n as isize),
            T::one(),
            dweight,
            (kdim as isize, 1),
        );
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(
                cin,
                kdim,
                n,
                T::one(),
                weight,
                (kdim as isize, 1),
                &cols,
                (n as isize, 1),
                T::one(),
                &mut dx[off..],
                (small as isize, 1),
            );
        }
    }
}

/// Per-channel statistics cached by the instance-norm forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes every channel plane to zero mean and unit variance, then
/// applies `scale`/`offset`.
pub fn instance_norm_forward<T: Scalar>(
    channels: usize,
    x: &[T],
    scale: &[T],
    offset: &[T],
    out: &mut [T],
) -> NormCache<T> {
    let plane = x.len() / channels;
    let count = T::from_f64(plane as f64);
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(channels);
    for c in 0..channels {
        let xs = &x[c * plane..(c + 1) * plane];
        let mean = xs.iter().copied().sum::<T>() / count;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let nrm = &mut normalized[c * plane..(c + 1) * plane];
        let o = &mut out[c * plane..(c + 1) * plane];
        for ((n, o), &v) in nrm.iter_mut().zip(o.iter_mut()).zip(xs) {
            *n = (v - mean) * inv;
            *o = *n * scale[c] + offset[c];
        }
    }
    NormCache { normalized, inv_std }
}

pub fn instance_norm_backward<T: Scalar>(
    channels: usize,
    cache: &NormCache<T>,
    scale: &[T],
    dy: &[T],
    dx: &mut [T],
    dscale: &mut [T],
    doffset: &mut [T],
) {
    let plane = dy.len() / channels;
    let count = T::from_f64(plane as f64);
    for c in 0..channels {
        let range = c * plane..(c + 1) * plane;
        let nrm = &cache.normalized[range.clone()];
        let g = &dy[range.clone()];
        let mut sum_g = T::zero();
        let mut sum_gn = T::zero();
        for (&gi, &ni) in g.iter().zip(nrm) {
            sum_g = sum_g + gi;
            sum_gn = sum_gn + gi * ni;
        }
        dscale[c] = dscale[c] + sum_gn;
        doffset[c] = doffset[c] + sum_g;
        let mean_g = sum_g * scale[c] / count;
        let mean_gn = sum_gn * scale[c] / count;
        let inv = cache.inv_std[c];
        for ((d, &gi), &ni) in dx[range].iter_mut().zip(g).zip(nrm) {
            *d = *d + inv * (gi * scale[c] - mean_g - ni * mean_gn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(c: usize, h: usize, k: usize, s: usize, p: usize) -> Geometry {
        let small = (h + 2 * p - k) / s + 1;
        Geometry {
            channels: c,
            large_h: h,
            large_w: h,
            small_h: small,
            small_w: small,
            kernel: k,
            stride: s,
            pad: p,
        }
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = geometry(2, 7, 4, 2, 1);
        let x = pseudo(2 * 49, 1);
        let n = g.small_h * g.small_w;
        let y = pseudo(g.col_rows() * n, 2);
        let mut cols = vec![0.0; g.col_rows() * n];
        g.im2col(&x, 0, g.small_h, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        g.col2im(&y, 0, g.small_h, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        let (cin, cout) = (3, 2);
        let g_in = geometry(cin, 8, 4, 2, 1);
        let w = pseudo(cout * cin * 16, 3);
        let x = pseudo(cin * 64, 4);
        let y = pseudo(cout * 16, 5);
        let mut cx = vec![0.0; cout * 16];
        conv_forward(&g_in, cout, &x, &w, &vec![0.0; cout], &mut cx);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        // transposed conv from cout channels back to cin: weight layout [cout, cin*k*k]
        let mut ty = vec![0.0; cin * 64];
        conv_transpose_forward(&g_in, cout, &y, &w, &vec![0.0; cin], &mut ty);
        let rhs: f64 = ty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn banded_conv_matches_single_band() {
        // Large enough to force multiple bands.
        let g = geometry(64, 96, 3, 1, 1);
        assert!(g.band_rows() < g.small_h);
        let x: Vec<f32> = pseudo(64 * 96 * 96, 6).into_iter().map(|v| v as f32).collect();
        let w: Vec<f32> = pseudo(2 * 64 * 9, 7).into_iter().map(|v| v as f32).collect();
        let mut out = vec![0.0f32; 2 * 96 * 96];
        conv_forward(&g, 2, &x, &w, &[0.0, 0.0], &mut out);
        // direct evaluation at a few positions
        for &(co, oy, ox) in &[(0usize, 0usize, 0usize), (1, 50, 17), (0, 95, 95), (1, 47, 3)] {
            let mut acc = 0.0f64;
            for ci in 0..64 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = oy as isize + ky as isize - 1;
                        let ix = ox as isize + kx as isize - 1;
                        if iy < 0 || ix < 0 || iy >= 96 || ix >= 96 {
                            continue;
                        }
                        acc += w[(co * 64 + ci) * 9 + ky * 3 + kx] as f64
                            * x[ci * 9216 + iy as usize * 96 + ix as usize] as f64;
                    }
                }
            }
            assert!((out[co * 9216 + oy * 96 + ox] as f64 - acc).abs() < 1e-4);
        }
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let x = pseudo(3 * 100, 8);
        let mut out = vec![0.0; x.len()];
        instance_norm_forward(3, &x, &[1.0; 3], &[0.0; 3], &mut out);
        for c in out.chunks(100) {
            let m: f64 = c.iter().sum::<f64>() / 100.0;
            let v: f64 = c.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
