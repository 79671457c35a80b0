use std::cell::{Cell, RefCell};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{debug_check_finite, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer. Updated in train mode,
/// consumed in eval mode; not part of the gradient graph.
pub struct BnState<T> {
    pub mean: RefCell<Vec<T>>,
    pub var: RefCell<Vec<T>>,
    pub momentum: T,
    pub eps: T,
    initialized: Cell<bool>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize, momentum: T, eps: T) -> Self {
        BnState {
            mean: RefCell::new(vec![T::zero(); channels]),
            var: RefCell::new(vec![T::one(); channels]),
            momentum,
            eps,
            initialized: Cell::new(false),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.borrow().len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.get()
    }

    /// Install externally-saved statistics (checkpoint load, tests).
    pub fn load_stats(&self, mean: &[T], var: &[T]) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(TensorError::shape("bn_load_stats", "channel count mismatch"));
        }
        self.mean.borrow_mut().copy_from_slice(mean);
        self.var.borrow_mut().copy_from_slice(var);
        self.initialized.set(true);
        Ok(())
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalization over [N, C, H, W]. Train mode
    /// normalizes by batch statistics (biased variance) and folds them into
    /// the running estimates; eval mode uses the running estimates.
    pub fn batch_norm(
        &self,
        input: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        state: &BnState<T>,
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let shape = input.shape();
        if shape.len() != 4 {
            return Err(TensorError::shape(
                "batch_norm",
                format!("expected [N,C,H,W], got {shape:?}"),
            ));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if gamma.shape() != [c] || beta.shape() != [c] || state.channels() != c {
            return Err(TensorError::shape(
                "batch_norm",
                format!("gamma/beta/state must all have {c} channels"),
            ));
        }
        let m = n * h * w;
        if mode == BnMode::Train && m < 2 {
            return Err(TensorError::arg(
                "batch_norm",
                "train mode needs at least 2 values per channel (variance undefined)",
            ));
        }
        if mode == BnMode::Eval && !state.is_initialized() {
            return Err(TensorError::arg(
                "batch_norm",
                "eval mode requires populated running statistics",
            ));
        }
        let eps = state.eps;
        let plane = h * w;
        let m_t = T::from_usize(m);

        // Per-channel mean/inv-std used for this pass.
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        {
            let x = input.data();
            match mode {
                BnMode::Train => {
                    for ci in 0..c {
                        let mut s = T::zero();
                        for s_i in 0..n {
                            let base = (s_i * c + ci) * plane;
                            for i in 0..plane {
                                s += x[base + i];
                            }
                        }
                        let mu = s / m_t;
                        let mut v = T::zero();
                        for s_i in 0..n {
                            let base = (s_i * c + ci) * plane;
                            for i in 0..plane {
                                let d = x[base + i] - mu;
                                v += d * d;
                            }
                        }
                        mean[ci] = mu;
                        var[ci] = v / m_t;
                    }
                    // Fold into running stats (unbiased variance, torch-style).
                    let mom = state.momentum;
                    let unbias = m_t / T::from_usize(m - 1);
                    let mut rm = state.mean.borrow_mut();
                    let mut rv = state.var.borrow_mut();
                    for ci in 0..c {
                        rm[ci] = (T::one() - mom) * rm[ci] + mom * mean[ci];
                        rv[ci] = (T::one() - mom) * rv[ci] + mom * var[ci] * unbias;
                    }
                    state.initialized.set(true);
                }
                BnMode::Eval => {
                    mean.copy_from_slice(&state.mean.borrow());
                    var.copy_from_slice(&state.var.borrow());
                }
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut out = vec![T::zero(); input.numel()];
        let mut xhat = vec![T::zero(); input.numel()];
        {
            let x = input.data();
            let gm = gamma.data();
            let bt = beta.data();
            for s_i in 0..n {
                for ci in 0..c {
                    let base = (s_i * c + ci) * plane;
                    for i in 0..plane {
                        let xh = (x[base + i] - mean[ci]) * inv_std[ci];
                        xhat[base + i] = xh;
                        out[base + i] = gm[ci] * xh + bt[ci];
                    }
                }
            }
        }
        let out = Tensor::new_unchecked(shape.clone(), out, false);
        debug_check_finite("batch_norm", &out.data());
        if !self.is_recording() {
            return Ok(out);
        }

        let gv = gamma.to_vec();
        let backward = Box::new(move |gout: &[T]| {
            let mut gx = vec![T::zero(); xhat.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for ci in 0..c {
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for s_i in 0..n {
                    let base = (s_i * c + ci) * plane;
                    for i in 0..plane {
                        sum_g += gout[base + i];
                        sum_gx += gout[base + i] * xhat[base + i];
                    }
                }
                gb[ci] = sum_g;
                gg[ci] = sum_gx;
                let a = gv[ci] * inv_std[ci];
                match mode {
                    BnMode::Train => {
                        let mg = sum_g / m_t;
                        let mgx = sum_gx / m_t;
                        for s_i in 0..n {
                            let base = (s_i * c + ci) * plane;
                            for i in 0..plane {
                                gx[base + i] =
                                    a * (gout[base + i] - mg - xhat[base + i] * mgx);
                            }
                        }
                    }
                    BnMode::Eval => {
                        for s_i in 0..n {
                            let base = (s_i * c + ci) * plane;
                            for i in 0..plane {
                                gx[base + i] = a * gout[base + i];
                            }
                        }
                    }
                }
            }
            vec![gx, gg, gb]
        });
        Ok(self.record(&[input, gamma, beta], out, backward))
    }
}
