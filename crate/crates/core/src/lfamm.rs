//! Learnable frequency-domain amplitude modulation: transform a feature map
//! with a real 2-D FFT, scale each bin's amplitude by a learnable filter
//! while keeping its phase, and transform back.

use dreb_tensor::{Scalar, Tape, Tensor};

use crate::error::{CoreError, Result};

/// Learnable half-spectrum filter, shaped [C, H, ⌊W/2⌋+1] for the
/// configured resolution and initialized to 1 (identity response).
pub struct LfammFilter<T: Scalar> {
    pub weights: Tensor<T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> LfammFilter<T> {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        let wh = width / 2 + 1;
        let weights = Tensor::param(&[channels, height, wh], vec![T::one(); channels * height * wh])
            .expect("filter weights");
        LfammFilter { weights, channels, height, width }
    }

    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    /// Filter values for an input of (h, w): the stored grid when sizes
    /// match, otherwise a bilinear resample per channel (detached; gradients
    /// only flow at the native size).
    fn weights_for(&self, h: usize, w: usize) -> Result<FilterView<T>> {
        if h == self.height && w == self.width {
            return Ok(FilterView::Native);
        }
        let (sh, sw) = (self.height, self.half_width());
        let dw = w / 2 + 1;
        let src = self.weights.to_vec();
        let mut data = vec![T::zero(); self.channels * h * dw];
        for c in 0..self.channels {
            for y in 0..h {
                // Map destination cell centers onto the source grid.
                let fy = if h == 1 { 0.0 } else { y as f64 * (sh - 1) as f64 / (h - 1) as f64 };
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(sh - 1);
                let ty = fy - y0 as f64;
                for x in 0..dw {
                    let fx =
                        if dw == 1 { 0.0 } else { x as f64 * (sw - 1) as f64 / (dw - 1) as f64 };
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(sw - 1);
                    let tx = fx - x0 as f64;
                    let at = |yy: usize, xx: usize| src[(c * sh + yy) * sw + xx].as_f64();
                    let v = at(y0, x0) * (1.0 - ty) * (1.0 - tx)
                        + at(y0, x1) * (1.0 - ty) * tx
                        + at(y1, x0) * ty * (1.0 - tx)
                        + at(y1, x1) * ty * tx;
                    data[(c * h + y) * dw + x] = T::from_f64(v);
                }
            }
        }
        Ok(FilterView::Resampled(Tensor::from_vec(&[self.channels, h, dw], data)?))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.w"), self.weights.clone()));
    }
}

enum FilterView<T: Scalar> {
    Native,
    Resampled(Tensor<T>),
}

/// rfft2 → amplitude scaling (phase kept) → irfft2.
pub fn lfamm_apply<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    filter: &LfammFilter<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let (c, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 => (s[1], s[2], s[3]),
        _ => return Err(CoreError::Input(format!("lfamm_apply: rank 3/4 expected, got {s:?}"))),
    };
    if c != filter.channels {
        return Err(CoreError::Input(format!(
            "lfamm_apply: input has {c} channels, filter expects {}",
            filter.channels
        )));
    }
    let spec = tape.rfft2(x)?;
    let out = match filter.weights_for(h, w)? {
        FilterView::Native => {
            let m = tape.modulate_amplitude(&spec, &filter.weights)?;
            tape.irfft2(&m, w)?
        }
        FilterView::Resampled(wt) => {
            let m = tape.modulate_amplitude(&spec, &wt)?;
            tape.irfft2(&m, w)?
        }
    };
    Ok(out)
}
