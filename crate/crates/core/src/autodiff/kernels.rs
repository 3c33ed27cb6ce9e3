//! Forward/backward kernels on raw NCHW buffers.

use crate::error::TensorError;
use crate::tensor::{gemm, MatRef, Real};

/// Convolution output size `floor((size + 2p - k) / s) + 1`; errors when the
/// kernel does not fit.
pub fn conv_output_size(
    op: &'static str,
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize, TensorError> {
    let err = || TensorError::OutputSize { op, size, kernel, stride, padding };
    if stride == 0 || kernel == 0 {
        return Err(err());
    }
    let span = (size + 2 * padding).checked_sub(kernel).ok_or_else(err)?;
    Ok(span / stride + 1)
}

/// Pooling output size `(size - k) / s + 1`, which must be an exact integer.
pub fn pool_output_size(op: &'static str, size: usize, kernel: usize, stride: usize) -> Result<usize, TensorError> {
    let out = conv_output_size(op, size, kernel, stride, 0)?;
    if !(size - kernel).is_multiple_of(stride) {
        return Err(TensorError::OutputSize { op, size, kernel, stride, padding: 0 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one `C×H×W` sample into a `(C·K·K) × (Ho·Wo)` matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride as isize, g.padding as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    let hw_out = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_height {
                    let iy = oy as isize * s + ki as isize - p;
                    let drow = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= h {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *d = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back into a `C×H×W` sample, accumulating overlaps.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride as isize, g.padding as isize);
    let (h, w) = (g.height as isize, g.width as isize);
    let hw_out = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_height {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < w {
                            drow[ix as usize] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward. Returns the output and the unfolded input
/// (empty for pointwise convolutions, which reuse the input directly).
pub fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let (rows, hw_out) = (g.col_rows(), g.col_cols());
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * hw_out;
    let mut out = vec![T::zero(); g.batch * out_len];
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); g.batch * rows * hw_out] };
    let wmat = MatRef::new(weight, g.out_channels, rows);
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let out_n = &mut out[n * out_len..(n + 1) * out_len];
        if pointwise {
            gemm(wmat, MatRef::new(xn, rows, hw_out), out_n, false);
        } else {
            let cols_n = &mut cols[n * rows * hw_out..(n + 1) * rows * hw_out];
            im2col(xn, g, cols_n);
            gemm(wmat, MatRef::new(cols_n, rows, hw_out), out_n, false);
        }
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                out_n[o * hw_out..(o + 1) * hw_out].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    (out, cols)
}

/// Input, weight and bias gradients of a convolution.
pub type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

/// Gradients of the convolution with respect to its inputs. Each output is
/// computed only when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    dout: &[T],
    x: &[T],
    cols: &[T],
    weight: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<T> {
    let (rows, hw_out) = (g.col_rows(), g.col_cols());
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * hw_out;
    let pointwise = g.is_pointwise();
    let mut dw = want_dw.then(|| vec![T::zero(); g.out_channels * rows]);
    let mut db = want_db.then(|| vec![T::zero(); g.out_channels]);
    let mut dx = want_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dcols = if want_dx && !pointwise { vec![T::zero(); rows * hw_out] } else { Vec::new() };
    let wmat = MatRef::new(weight, g.out_channels, rows);
    for n in 0..g.batch {
        let dout_n = &dout[n * out_len..(n + 1) * out_len];
        let dmat = MatRef::new(dout_n, g.out_channels, hw_out);
        if let Some(dw) = dw.as_mut() {
            let cols_n = if pointwise {
                &x[n * in_len..(n + 1) * in_len]
            } else {
                &cols[n * rows * hw_out..(n + 1) * rows * hw_out]
            };
            gemm(dmat, MatRef::new(cols_n, rows, hw_out).t(), dw, true);
        }
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dout_n[o * hw_out..(o + 1) * hw_out].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dx_n = &mut dx[n * in_len..(n + 1) * in_len];
            if pointwise {
                gemm(wmat.t(), dmat, dx_n, false);
            } else {
                gemm(wmat.t(), dmat, &mut dcols, false);
                col2im(&dcols, g, dx_n);
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy)]
pub struct PoolGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Max pooling; also returns the flat input index chosen for every output.
pub fn maxpool_forward<T: Real>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let out_len = g.batch * g.channels * g.out_height * g.out_width;
    let mut out = Vec::with_capacity(out_len);
    let mut argmax = Vec::with_capacity(out_len);
    for nc in 0..g.batch * g.channels {
        let base = nc * g.height * g.width;
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let mut best = base + oy * g.stride * g.width + ox * g.stride;
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let idx = base + (oy * g.stride + ky) * g.width + ox * g.stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub fn avgpool_forward<T: Real>(x: &[T], g: &PoolGeom) -> Vec<T> {
    let inv = T::from_f64(1.0 / (g.kernel * g.kernel) as f64);
    let mut out = Vec::with_capacity(g.batch * g.channels * g.out_height * g.out_width);
    for nc in 0..g.batch * g.channels {
        let base = nc * g.height * g.width;
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let mut acc = T::zero();
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        acc += x[base + (oy * g.stride + ky) * g.width + ox * g.stride + kx];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    out
}

pub fn avgpool_backward<T: Real>(dout: &[T], g: &PoolGeom) -> Vec<T> {
    let inv = T::from_f64(1.0 / (g.kernel * g.kernel) as f64);
    let mut dx = vec![T::zero(); g.batch * g.channels * g.height * g.width];
    let mut i = 0;
    for nc in 0..g.batch * g.channels {
        let base = nc * g.height * g.width;
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let d = dout[i] * inv;
                i += 1;
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        dx[base + (oy * g.stride + ky) * g.width + ox * g.stride + kx] += d;
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel mean and biased variance over N, H, W.
pub fn channel_stats<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let m = T::from_f64((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for b in 0..n {
            for &xv in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                v += (xv - mu) * (xv - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_rules() {
        assert_eq!(conv_output_size("conv", 32, 3, 1, 1).unwrap(), 32);
        assert_eq!(conv_output_size("conv", 32, 3, 2, 1).unwrap(), 16);
        assert_eq!(conv_output_size("conv", 32, 1, 2, 0).unwrap(), 16);
        assert_eq!(pool_output_size("pool", 4, 2, 2).unwrap(), 2);
        assert!(pool_output_size("pool", 5, 2, 2).unwrap_err().to_string().contains("not a positive integer"));
        assert!(conv_output_size("conv", 2, 5, 1, 0).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y
        let g = ConvGeom {
            batch: 1,
            in_channels: 2,
            height: 5,
            width: 4,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_height: 3,
            out_width: 2,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
