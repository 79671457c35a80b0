use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{debug_check_finite, Tensor};

/// C[m,n] += A[m,k] · B[k,n], all row-major. The i-k-j ordering keeps the
/// inner loop contiguous so it autovectorizes.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |arow: &[T], crow: &mut [T]| {
        for l in 0..k {
            let av = arow[l];
            let brow = &b[l * n..l * n + n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    };
    // Rows are disjoint, so the parallel split is bit-deterministic.
    if m >= 8 && m * k * n >= (1 << 17) {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| row(&a[i * k..i * k + k], crow));
    } else {
        for i in 0..m {
            row(&a[i * k..i * k + k], &mut c[i * n..i * n + n]);
        }
    }
}

pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn conv_out_dim(sz: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (sz + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Patch matrix of one sample: col[(c·k+ki)·k+kj, oy·wo+ox] =
/// src[c, oy·s−p+ki, ox·s−p+kj], zero outside the image.
pub(crate) fn im2col<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, usize, usize) {
    let ho = conv_out_dim(h, k, stride, pad).unwrap();
    let wo = conv_out_dim(w, k, stride, pad).unwrap();
    let mut col = vec![T::zero(); c * k * k * ho * wo];
    let area = ho * wo;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut col[((ci * k + ki) * k + kj) * area..][..area];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &plane[iy as usize * w..iy as usize * w + w];
                    let drow = &mut dst[oy * wo..oy * wo + wo];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ox] = srow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

/// Adjoint of `im2col`: scatter-add patches back into an image.
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let mut img = vec![T::zero(); c * h * w];
    let area = ho * wo;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let src = &col[((ci * k + ki) * k + kj) * area..][..area];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..iy as usize * w + w];
                    let srow = &src[oy * wo..oy * wo + wo];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += srow[ox];
                        }
                    }
                }
            }
        }
    }
    img
}

struct Nchw {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    rank3: bool,
}

fn as_nchw(op: &'static str, shape: &[usize]) -> Result<Nchw> {
    match shape.len() {
        3 => Ok(Nchw { n: 1, c: shape[0], h: shape[1], w: shape[2], rank3: true }),
        4 => Ok(Nchw { n: shape[0], c: shape[1], h: shape[2], w: shape[3], rank3: false }),
        r => Err(TensorError::shape(op, format!("expected rank 3 or 4 input, got rank {r}"))),
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation with square kernel. Input is [C,H,W] or
    /// [N,C,H,W]; weight is [C_out, C_in, k, k]; bias, when given, is
    /// [C_out]. Output spatial size is ⌊(H + 2·pad − k)/stride⌋ + 1.
    pub fn conv2d(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let ishape = input.shape();
        let g = as_nchw("conv2d", &ishape)?;
        let wshape = weight.shape();
        if wshape.len() != 4 || wshape[2] != wshape[3] {
            return Err(TensorError::shape(
                "conv2d",
                format!("weight must be [C_out, C_in, k, k], got {wshape:?}"),
            ));
        }
        let (c_out, c_in, k) = (wshape[0], wshape[1], wshape[2]);
        if c_in != g.c {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {} channels, weight expects {}", g.c, c_in),
            ));
        }
        if stride < 1 {
            return Err(TensorError::arg("conv2d", "stride must be >= 1"));
        }
        if g.h + 2 * pad < k || g.w + 2 * pad < k {
            return Err(TensorError::arg(
                "conv2d",
                format!("kernel {k} larger than padded input {}x{}", g.h + 2 * pad, g.w + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("bias must be [{c_out}], got {:?}", b.shape()),
                ));
            }
        }
        let ho = conv_out_dim(g.h, k, stride, pad).unwrap();
        let wo = conv_out_dim(g.w, k, stride, pad).unwrap();
        if ho == 0 || wo == 0 {
            return Err(TensorError::arg("conv2d", "zero-size output"));
        }

        let kk = c_in * k * k;
        let area = ho * wo;
        let mut out = vec![T::zero(); g.n * c_out * area];
        {
            let x = input.data();
            let wm = weight.data();
            for s in 0..g.n {
                let (col, _, _) = im2col(&x[s * g.c * g.h * g.w..], g.c, g.h, g.w, k, stride, pad);
                matmul_acc(&wm, &col, c_out, kk, area, &mut out[s * c_out * area..][..c_out * area]);
            }
            if let Some(b) = bias {
                let bv = b.data();
                for s in 0..g.n {
                    for co in 0..c_out {
                        let base = (s * c_out + co) * area;
                        for i in 0..area {
                            out[base + i] += bv[co];
                        }
                    }
                }
            }
        }
        let oshape = if g.rank3 { vec![c_out, ho, wo] } else { vec![g.n, c_out, ho, wo] };
        let out = Tensor::new_unchecked(oshape, out, false);
        debug_check_finite("conv2d", &out.data());
        if !self.is_recording() {
            return Ok(out);
        }

        let xv = input.to_vec();
        let wv = weight.to_vec();
        let has_bias = bias.is_some();
        let (n, c, h, w) = (g.n, g.c, g.h, g.w);
        let backward = Box::new(move |gout: &[T]| {
            let mut gx = vec![T::zero(); xv.len()];
            let mut gw = vec![T::zero(); wv.len()];
            let mut gb = vec![T::zero(); c_out];
            let wt = transpose(&wv, c_out, kk);
            for s in 0..n {
                let gy = &gout[s * c_out * area..][..c_out * area];
                let (col, _, _) = im2col(&xv[s * c * h * w..], c, h, w, k, stride, pad);
                // dW += gy · colᵀ
                let colt = transpose(&col, kk, area);
                matmul_acc(gy, &colt, c_out, area, kk, &mut gw);
                // dX = col2im(wᵀ · gy)
                let mut gcol = vec![T::zero(); kk * area];
                matmul_acc(&wt, gy, kk, c_out, area, &mut gcol);
                let gxs = col2im(&gcol, c, h, w, k, stride, pad, ho, wo);
                for (d, v) in gx[s * c * h * w..][..c * h * w].iter_mut().zip(gxs) {
                    *d += v;
                }
                for co in 0..c_out {
                    for i in 0..area {
                        gb[co] += gy[co * area + i];
                    }
                }
            }
            if has_bias {
                vec![gx, gw, gb]
            } else {
                vec![gx, gw]
            }
        });
        let mut inputs: Vec<&Tensor<T>> = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.record(&inputs, out, backward))
    }

    /// Stride-s transposed convolution, the adjoint of `conv2d`'s forward
    /// map. Weight is [C_in, C_out, k, k]; output spatial size is
    /// (H−1)·stride − 2·pad + k.
    pub fn conv_transpose2d(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let ishape = input.shape();
        let g = as_nchw("conv_transpose2d", &ishape)?;
        let wshape = weight.shape();
        if wshape.len() != 4 || wshape[2] != wshape[3] {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("weight must be [C_in, C_out, k, k], got {wshape:?}"),
            ));
        }
        let (c_in, c_out, k) = (wshape[0], wshape[1], wshape[2]);
        if c_in != g.c {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("input has {} channels, weight expects {}", g.c, c_in),
            ));
        }
        if stride < 1 {
            return Err(TensorError::arg("conv_transpose2d", "stride must be >= 1"));
        }
        let ho = ((g.h - 1) * stride + k).checked_sub(2 * pad);
        let wo = ((g.w - 1) * stride + k).checked_sub(2 * pad);
        let (ho, wo) = match (ho, wo) {
            (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
            _ => return Err(TensorError::arg("conv_transpose2d", "zero-size output")),
        };
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::shape(
                    "conv_transpose2d",
                    format!("bias must be [{c_out}], got {:?}", b.shape()),
                ));
            }
        }

        let kk = c_out * k * k;
        let in_area = g.h * g.w;
        let out_area = ho * wo;
        let mut out = vec![T::zero(); g.n * c_out * out_area];
        {
            let x = input.data();
            let wv = weight.data();
            let wt = transpose(&wv, c_in, kk); // [C_out·k², C_in]
            for s in 0..g.n {
                let mut prod = vec![T::zero(); kk * in_area];
                matmul_acc(&wt, &x[s * c_in * in_area..][..c_in * in_area], kk, c_in, in_area, &mut prod);
                let img = col2im(&prod, c_out, ho, wo, k, stride, pad, g.h, g.w);
                for (d, v) in out[s * c_out * out_area..][..c_out * out_area].iter_mut().zip(img) {
                    *d += v;
                }
            }
            if let Some(b) = bias {
                let bv = b.data();
                for s in 0..g.n {
                    for co in 0..c_out {
                        let base = (s * c_out + co) * out_area;
                        for i in 0..out_area {
                            out[base + i] += bv[co];
                        }
                    }
                }
            }
        }
        let oshape = if g.rank3 { vec![c_out, ho, wo] } else { vec![g.n, c_out, ho, wo] };
        let out = Tensor::new_unchecked(oshape, out, false);
        debug_check_finite("conv_transpose2d", &out.data());
        if !self.is_recording() {
            return Ok(out);
        }

        let xv = input.to_vec();
        let wv = weight.to_vec();
        let has_bias = bias.is_some();
        let (n, c, h, w) = (g.n, g.c, g.h, g.w);
        let backward = Box::new(move |gout: &[T]| {
            let mut gx = vec![T::zero(); xv.len()];
            let mut gw = vec![T::zero(); wv.len()];
            let mut gb = vec![T::zero(); c_out];
            for s in 0..n {
                let gy = &gout[s * c_out * out_area..][..c_out * out_area];
                // gcol[(co·k+ki)·k+kj, iy·w+ix] = gy[co, iy·s−p+ki, ix·s−p+kj]
                let (gcol, ih, iw) = im2col(gy, c_out, ho, wo, k, stride, pad);
                debug_assert_eq!((ih, iw), (h, w));
                // dX = W · gcol
                matmul_acc(&wv, &gcol, c, kk, in_area, &mut gx[s * c * in_area..][..c * in_area]);
                // dW += x · gcolᵀ
                let gcolt = transpose(&gcol, kk, in_area);
                matmul_acc(&xv[s * c * in_area..][..c * in_area], &gcolt, c, in_area, kk, &mut gw);
                for co in 0..c_out {
                    for i in 0..out_area {
                        gb[co] += gy[co * out_area + i];
                    }
                }
            }
            if has_bias {
                vec![gx, gw, gb]
            } else {
                vec![gx, gw]
            }
        });
        let mut inputs: Vec<&Tensor<T>> = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.record(&inputs, out, backward))
    }
}
