use crate::error::{Result, TensorError};
use crate::fft;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{debug_check_finite, Tensor};

/// Half spectrum of a real signal, packed as one tensor with a leading
/// plane axis: [2, ..., H, ⌊W/2⌋+1] (plane 0 = real, plane 1 = imaginary).
/// Packing keeps the complex pair a single tape value, so ops that consume
/// both parts see one gradient.
pub struct ComplexGrid<T: Scalar> {
    pub packed: Tensor<T>,
    half_shape: Vec<usize>,
    full_w: usize,
}

impl<T: Scalar> ComplexGrid<T> {
    /// Wrap an existing packed [2, ...] tensor as a half spectrum of a
    /// width-`full_w` signal.
    pub fn from_packed(packed: Tensor<T>, half_shape: Vec<usize>, full_w: usize) -> Result<Self> {
        let mut expect = vec![2];
        expect.extend_from_slice(&half_shape);
        if packed.shape() != expect {
            return Err(TensorError::shape(
                "complex_grid",
                format!("packed shape {:?} != expected {:?}", packed.shape(), expect),
            ));
        }
        if fft::half_width(full_w) != *half_shape.last().unwrap_or(&0) {
            return Err(TensorError::arg(
                "complex_grid",
                format!("full width {full_w} inconsistent with half grid {half_shape:?}"),
            ));
        }
        Ok(ComplexGrid { packed, half_shape, full_w })
    }

    /// Shape of the real (and imaginary) part: [..., H, ⌊W/2⌋+1].
    pub fn shape(&self) -> &[usize] {
        &self.half_shape
    }

    /// Width of the spatial signal this grid was produced from.
    pub fn full_width(&self) -> usize {
        self.full_w
    }

    fn half_numel(&self) -> usize {
        self.half_shape.iter().product()
    }

    /// Snapshot of the real part (detached from the tape).
    pub fn real(&self) -> Tensor<T> {
        let n = self.half_numel();
        let d = self.packed.data();
        Tensor::from_vec(&self.half_shape, d[..n].to_vec()).expect("consistent grid")
    }

    /// Snapshot of the imaginary part (detached from the tape).
    pub fn imag(&self) -> Tensor<T> {
        let n = self.half_numel();
        let d = self.packed.data();
        Tensor::from_vec(&self.half_shape, d[n..].to_vec()).expect("consistent grid")
    }
}

fn spatial_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        3 => Ok((shape[0], shape[1], shape[2])),
        4 => Ok((shape[0] * shape[1], shape[2], shape[3])),
        r => Err(TensorError::shape(op, format!("expected rank 3 or 4, got rank {r}"))),
    }
}

impl<T: Scalar> Tape<T> {
    /// Real 2-D FFT over the last two axes, one half spectrum per channel.
    /// Registered on the tape with the exact adjoint as backward.
    pub fn rfft2(&self, input: &Tensor<T>) -> Result<ComplexGrid<T>> {
        let shape = input.shape();
        let (planes, h, w) = spatial_dims("rfft2", &shape)?;
        let wh = fft::half_width(w);
        let mut half_shape = shape.clone();
        let last = half_shape.len() - 1;
        half_shape[last] = wh;
        let half_n = planes * h * wh;
        let mut data = vec![T::zero(); 2 * half_n];
        {
            let x = input.data();
            for p in 0..planes {
                let (re, im) = fft::rfft2_plane(&x[p * h * w..(p + 1) * h * w], h, w);
                data[p * h * wh..(p + 1) * h * wh].copy_from_slice(&re);
                data[half_n + p * h * wh..half_n + (p + 1) * h * wh].copy_from_slice(&im);
            }
        }
        let mut packed_shape = vec![2];
        packed_shape.extend_from_slice(&half_shape);
        let packed = Tensor::new_unchecked(packed_shape, data, false);
        debug_check_finite("rfft2", &packed.data());
        let packed = if self.is_recording() {
            self.record(
                &[input],
                packed,
                Box::new(move |gout| {
                    let mut gx = vec![T::zero(); planes * h * w];
                    for p in 0..planes {
                        let gre = &gout[p * h * wh..(p + 1) * h * wh];
                        let gim = &gout[half_n + p * h * wh..half_n + (p + 1) * h * wh];
                        let gp = fft::rfft2_adjoint_plane(gre, gim, h, w);
                        gx[p * h * w..(p + 1) * h * w].copy_from_slice(&gp);
                    }
                    vec![gx]
                }),
            )
        } else {
            packed
        };
        Ok(ComplexGrid { packed, half_shape, full_w: w })
    }

    /// Inverse of `rfft2`. `out_w` resolves the even/odd width ambiguity of
    /// the half spectrum and must satisfy ⌊out_w/2⌋+1 == stored width.
    pub fn irfft2(&self, grid: &ComplexGrid<T>, out_w: usize) -> Result<Tensor<T>> {
        let half_shape = grid.half_shape.clone();
        let last = half_shape.len() - 1;
        let wh = half_shape[last];
        if fft::half_width(out_w) != wh {
            return Err(TensorError::arg(
                "irfft2",
                format!("out_w {out_w} inconsistent with half-spectrum width {wh}"),
            ));
        }
        let h = half_shape[last - 1];
        let planes: usize = half_shape[..last - 1].iter().product();
        let half_n = planes * h * wh;
        let mut out_shape = half_shape.clone();
        out_shape[last] = out_w;
        let mut data = vec![T::zero(); planes * h * out_w];
        {
            let p_data = grid.packed.data();
            for p in 0..planes {
                let re = &p_data[p * h * wh..(p + 1) * h * wh];
                let im = &p_data[half_n + p * h * wh..half_n + (p + 1) * h * wh];
                let img = fft::irfft2_plane(re, im, h, out_w);
                data[p * h * out_w..(p + 1) * h * out_w].copy_from_slice(&img);
            }
        }
        let out = Tensor::new_unchecked(out_shape, data, false);
        debug_check_finite("irfft2", &out.data());
        if !self.is_recording() {
            return Ok(out);
        }
        Ok(self.record(
            &[&grid.packed],
            out,
            Box::new(move |gout| {
                let mut gp = vec![T::zero(); 2 * half_n];
                for p in 0..planes {
                    let g = &gout[p * h * out_w..(p + 1) * h * out_w];
                    let (gre, gim) = fft::irfft2_adjoint_plane(g, h, out_w);
                    gp[p * h * wh..(p + 1) * h * wh].copy_from_slice(&gre);
                    gp[half_n + p * h * wh..half_n + (p + 1) * h * wh].copy_from_slice(&gim);
                }
                vec![gp]
            }),
        ))
    }

    /// Scale each spectral bin's amplitude by a learnable real factor while
    /// keeping its phase: out = (|F|·w)·exp(i·arg F), which contracts to
    /// (w·Re F, w·Im F). At exactly-zero bins the amplitude/phase
    /// decomposition is non-differentiable and the gradient w.r.t. the
    /// spectrum is defined as 0 there.
    pub fn modulate_amplitude(
        &self,
        grid: &ComplexGrid<T>,
        weights: &Tensor<T>,
    ) -> Result<ComplexGrid<T>> {
        let half_shape = grid.half_shape.clone();
        let wshape = weights.shape();
        // Weights cover the trailing dims; leading dims (batch) broadcast.
        if wshape.len() > half_shape.len()
            || wshape[..] != half_shape[half_shape.len() - wshape.len()..]
        {
            return Err(TensorError::shape(
                "modulate_amplitude",
                format!("filter {wshape:?} does not match spectrum {half_shape:?}"),
            ));
        }
        let wn: usize = wshape.iter().product();
        let half_n: usize = half_shape.iter().product();
        let reps = half_n / wn;
        let mut data = vec![T::zero(); 2 * half_n];
        {
            let p = grid.packed.data();
            let wv = weights.data();
            for r in 0..reps {
                for i in 0..wn {
                    let idx = r * wn + i;
                    data[idx] = p[idx] * wv[i];
                    data[half_n + idx] = p[half_n + idx] * wv[i];
                }
            }
        }
        let mut packed_shape = vec![2];
        packed_shape.extend_from_slice(&half_shape);
        let packed = Tensor::new_unchecked(packed_shape, data, false);
        debug_check_finite("modulate_amplitude", &packed.data());
        let full_w = grid.full_w;
        if !self.is_recording() {
            return Ok(ComplexGrid { packed, half_shape, full_w });
        }
        let pv = grid.packed.to_vec();
        let wv = weights.to_vec();
        let packed = self.record(
            &[&grid.packed, weights],
            packed,
            Box::new(move |gout| {
                let mut gp = vec![T::zero(); 2 * half_n];
                let mut gw = vec![T::zero(); wn];
                for r in 0..reps {
                    for i in 0..wn {
                        let idx = r * wn + i;
                        let (a, b) = (pv[idx], pv[half_n + idx]);
                        let (gu, gv) = (gout[idx], gout[half_n + idx]);
                        gw[i] += gu * a + gv * b;
                        if a != T::zero() || b != T::zero() {
                            gp[idx] = gu * wv[i];
                            gp[half_n + idx] = gv * wv[i];
                        }
                    }
                }
                vec![gp, gw]
            }),
        );
        Ok(ComplexGrid { packed, half_shape, full_w })
    }
}
