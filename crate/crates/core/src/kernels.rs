//! Raw NCHW kernels used by the autodiff graph.
//!
//! All loops run in a fixed order so results are bitwise reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dDims {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output size of a sliding window along one axis, if positive.
pub fn window_out(len: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || window == 0 || window > padded {
        return None;
    }
    Some((padded - window) / stride + 1)
}

impl Conv2dDims {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        if input[1] != kernel[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        let out_h = window_out(input[2], kernel[2], stride, padding);
        let out_w = window_out(input[3], kernel[3], stride, padding);
        let (out_h, out_w) = match (out_h, out_w) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    detail: format!(
                        "input {input:?} with kernel {kernel:?}, stride {stride}, padding {padding} has no output"
                    ),
                })
            }
        };
        Ok(Conv2dDims {
            batch: input[0],
            in_channels: input[1],
            in_h: input[2],
            in_w: input[3],
            out_channels: kernel[0],
            kernel_h: kernel[2],
            kernel_w: kernel[3],
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Range of output columns whose input column `ox * stride + kx - padding`
    /// is inside the image.
    #[inline]
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // largest o with o*s + k - p <= in_len - 1
        let hi = if in_len + p < k + 1 {
            0
        } else {
            ((in_len - 1 + p - k) / s + 1).min(out_len)
        };
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward(d: &Conv2dDims, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.out_channels * d.out_h * d.out_w];
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    let ksize = d.kernel_h * d.kernel_w;
    for n in 0..d.batch {
        for o in 0..d.out_channels {
            let dst = &mut out[(n * d.out_channels + o) * out_plane..][..out_plane];
            for c in 0..d.in_channels {
                let src = &input[(n * d.in_channels + c) * in_plane..][..in_plane];
                let kern = &kernel[(o * d.in_channels + c) * ksize..][..ksize];
                for ky in 0..d.kernel_h {
                    let (oy_lo, oy_hi) = d.valid_range(ky, d.in_h, d.out_h);
                    for kx in 0..d.kernel_w {
                        let w = kern[ky * d.kernel_w + kx];
                        let (ox_lo, ox_hi) = d.valid_range(kx, d.in_w, d.out_w);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.padding;
                            let row = &src[iy * d.in_w..][..d.in_w];
                            let out_row = &mut dst[oy * d.out_w..][..d.out_w];
                            if d.stride == 1 {
                                let ix0 = ox_lo + kx - d.padding;
                                let len = ox_hi - ox_lo;
                                for (o_v, i_v) in out_row[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(&row[ix0..ix0 + len])
                                {
                                    *o_v += w * i_v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += w * row[ox * d.stride + kx - d.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward(
    d: &Conv2dDims,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_k = vec![0.0; kernel.len()];
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    let ksize = d.kernel_h * d.kernel_w;
    for n in 0..d.batch {
        for o in 0..d.out_channels {
            let g = &grad_out[(n * d.out_channels + o) * out_plane..][..out_plane];
            for c in 0..d.in_channels {
                let in_base = (n * d.in_channels + c) * in_plane;
                let k_base = (o * d.in_channels + c) * ksize;
                for ky in 0..d.kernel_h {
                    let (oy_lo, oy_hi) = d.valid_range(ky, d.in_h, d.out_h);
                    for kx in 0..d.kernel_w {
                        let w = kernel[k_base + ky * d.kernel_w + kx];
                        let (ox_lo, ox_hi) = d.valid_range(kx, d.in_w, d.out_w);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.padding;
                            let row_base = in_base + iy * d.in_w;
                            let g_row = &g[oy * d.out_w..][..d.out_w];
                            if d.stride == 1 {
                                let ix0 = row_base + ox_lo + kx - d.padding;
                                let len = ox_hi - ox_lo;
                                let g_seg = &g_row[ox_lo..ox_hi];
                                let in_seg = &input[ix0..ix0 + len];
                                for (gv, iv) in g_seg.iter().zip(in_seg) {
                                    acc += gv * iv;
                                }
                                for (gi, gv) in grad_in[ix0..ix0 + len].iter_mut().zip(g_seg) {
                                    *gi += w * gv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = row_base + ox * d.stride + kx - d.padding;
                                    acc += g_row[ox] * input[ix];
                                    grad_in[ix] += w * g_row[ox];
                                }
                            }
                        }
                        grad_k[k_base + ky * d.kernel_w + kx] += acc;
                    }
                }
            }
        }
    }
    (grad_in, grad_k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolDims {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolDims {
    pub fn new(input: &[usize], window: usize, stride: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::InvalidShape {
                op: "maxpool2d",
                detail: format!("expected NCHW input, got {input:?}"),
            });
        }
        let (Some(out_h), Some(out_w)) = (
            window_out(input[2], window, stride, 0),
            window_out(input[3], window, stride, 0),
        ) else {
            return Err(Error::InvalidShape {
                op: "maxpool2d",
                detail: format!("window {window} stride {stride} does not fit input {input:?}"),
            });
        };
        Ok(PoolDims {
            batch: input[0],
            channels: input[1],
            in_h: input[2],
            in_w: input[3],
            window,
            stride,
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_h, self.out_w]
    }
}

/// Returns the pooled values and, per output, the flat input index of the
/// maximum. Ties keep the first element in row-major window order.
pub fn maxpool_forward(d: &PoolDims, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let planes = d.batch * d.channels;
    let n_out = planes * d.out_h * d.out_w;
    let mut out = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for p in 0..planes {
        let base = p * d.in_h * d.in_w;
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let mut best_idx = base + (oy * d.stride) * d.in_w + ox * d.stride;
                let mut best = input[best_idx];
                for wy in 0..d.window {
                    let row = base + (oy * d.stride + wy) * d.in_w + ox * d.stride;
                    for wx in 0..d.window {
                        let v = input[row + wx];
                        if v > best {
                            best = v;
                            best_idx = row + wx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&i, &go) in argmax.iter().zip(grad_out) {
        g[i] += go;
    }
    g
}
