//! Slice-level numeric kernels shared by the tape's forward and backward
//! passes. Reductions always run in index order so results are reproducible
//! bit for bit.

use crate::tensor::Scalar;

/// Variance floor used by instance normalisation and channel statistics.
pub const NORM_EPS: f64 = 1e-5;

/// Output extent of a strided, zero-padded correlation.
pub fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of one image-sized correlation.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `x` (C×H×W) into a `(C·kh·kw) × (out_h·out_w)` matrix. Row order is
/// (channel, ky, kx); positions falling in the padding read as zero.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the matrix back onto a C×H×W image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.channels {
        let plane = &mut x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Column block width for the axpy-style products; keeps one block of `b`
/// resident in cache across all output rows.
const BLOCK: usize = 256;

/// `c += a · b` with `a: m×k`, `b: k×n`. Each output accumulates over `k` in order.
pub fn gemm_nn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for j0 in (0..n).step_by(BLOCK) {
        let j1 = (j0 + BLOCK).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + j0..i * n + j1];
            for kk in 0..k {
                let av = a[i * k + kk];
                let brow = &b[kk * n + j0..kk * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`.
pub fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for j0 in (0..n).step_by(BLOCK) {
        let j1 = (j0 + BLOCK).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + j0..i * n + j1];
            for kk in 0..k {
                let av = a[kk * m + i];
                let brow = &b[kk * n + j0..kk * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = c[i * n + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight interleaved partial sums, combined pairwise.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ta.iter().zip(tb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Mirror index for reflection padding: the edge sample is not repeated.
#[inline]
pub fn reflect(i: usize, pad: usize, n: usize) -> usize {
    let j = i as isize - pad as isize;
    let n = n as isize;
    let r = if j < 0 {
        -j
    } else if j >= n {
        2 * (n - 1) - j
    } else {
        j
    };
    r as usize
}

/// Population mean and variance of a slice, summed in order.
pub fn mean_var<T: Scalar>(x: &[T]) -> (T, T) {
    let n = T::from_f64(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = x.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    (mean, var)
}
