use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{debug_check_finite, Tensor};

/// Spatial-doubling mode for `upsample2x`.
pub enum UpsampleMode<'a, T: Scalar> {
    Nearest,
    /// Kernel-4 stride-2 pad-1 transposed convolution with the given
    /// [C_in, C_out, 4, 4] weight and optional bias.
    TransposedConv { weight: &'a Tensor<T>, bias: Option<&'a Tensor<T>> },
}

impl<T: Scalar> Tape<T> {
    /// Global average pooling to 1×1 per channel ([C,H,W] -> [C,1,1] or
    /// [N,C,H,W] -> [N,C,1,1]). The backward pass spreads the gradient
    /// uniformly (1/(H·W) per cell).
    pub fn adaptive_avg_pool(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = input.shape();
        let (groups, h, w, oshape) = match shape.as_slice() {
            [c, h, w] => (*c, *h, *w, vec![*c, 1, 1]),
            [n, c, h, w] => (n * c, *h, *w, vec![*n, *c, 1, 1]),
            _ => {
                return Err(TensorError::shape(
                    "adaptive_avg_pool",
                    format!("expected rank 3 or 4, got {shape:?}"),
                ))
            }
        };
        let plane = h * w;
        let inv = T::one() / T::from_usize(plane);
        let mut out = vec![T::zero(); groups];
        {
            let x = input.data();
            for g in 0..groups {
                let mut s = T::zero();
                for i in 0..plane {
                    s += x[g * plane + i];
                }
                out[g] = s * inv;
            }
        }
        let out = Tensor::new_unchecked(oshape, out, false);
        debug_check_finite("adaptive_avg_pool", &out.data());
        if !self.is_recording() {
            return Ok(out);
        }
        Ok(self.record(
            &[input],
            out,
            Box::new(move |gout| {
                let mut gx = vec![T::zero(); groups * plane];
                for g in 0..groups {
                    let gv = gout[g] * inv;
                    for i in 0..plane {
                        gx[g * plane + i] = gv;
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2x_nearest(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = input.shape();
        let (groups, h, w, oshape) = match shape.as_slice() {
            [c, h, w] => (*c, *h, *w, vec![*c, 2 * h, 2 * w]),
            [n, c, h, w] => (n * c, *h, *w, vec![*n, *c, 2 * h, 2 * w]),
            _ => {
                return Err(TensorError::shape(
                    "upsample2x",
                    format!("expected rank 3 or 4, got {shape:?}"),
                ))
            }
        };
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); groups * h2 * w2];
        {
            let x = input.data();
            for g in 0..groups {
                for y in 0..h2 {
                    let src = &x[g * h * w + (y / 2) * w..][..w];
                    let dst = &mut out[g * h2 * w2 + y * w2..][..w2];
                    for xo in 0..w2 {
                        dst[xo] = src[xo / 2];
                    }
                }
            }
        }
        let out = Tensor::new_unchecked(oshape, out, false);
        if !self.is_recording() {
            return Ok(out);
        }
        Ok(self.record(
            &[input],
            out,
            Box::new(move |gout| {
                let mut gx = vec![T::zero(); groups * h * w];
                for g in 0..groups {
                    for y in 0..h2 {
                        let dst = &mut gx[g * h * w + (y / 2) * w..][..w];
                        let src = &gout[g * h2 * w2 + y * w2..][..w2];
                        for xo in 0..w2 {
                            dst[xo / 2] += src[xo];
                        }
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Double the spatial size by the requested mode.
    pub fn upsample2x(&self, input: &Tensor<T>, mode: UpsampleMode<'_, T>) -> Result<Tensor<T>> {
        match mode {
            UpsampleMode::Nearest => self.upsample2x_nearest(input),
            UpsampleMode::TransposedConv { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 4 || ws[2] != 4 || ws[3] != 4 {
                    return Err(TensorError::shape(
                        "upsample2x",
                        format!("transposed-conv weight must be [C_in, C_out, 4, 4], got {ws:?}"),
                    ));
                }
                self.conv_transpose2d(input, weight, bias, 2, 1)
            }
        }
    }
}
