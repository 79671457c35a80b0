use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// lr(t) = lr0 · (1 − t/total), clamped at zero.
    LinearToZero { total_steps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam_default() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: step counter, schedule, and per-slot moment buffers.
/// Slots are stable caller-chosen indices, so a subset of the parameters
/// (e.g. one training phase) can be stepped without disturbing the moments
/// of the rest.
pub struct OptimState<T: Scalar> {
    pub lr0: f64,
    pub schedule: LrSchedule,
    pub rule: UpdateRule,
    step: usize,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(lr0: f64, schedule: LrSchedule, rule: UpdateRule) -> Result<Self> {
        if lr0 < 0.0 {
            return Err(TensorError::Optimizer("learning rate must be >= 0".into()));
        }
        Ok(OptimState { lr0, schedule, rule, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn effective_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr0,
            LrSchedule::LinearToZero { total_steps } => {
                let t = self.step as f64 / total_steps.max(1) as f64;
                (self.lr0 * (1.0 - t)).max(0.0)
            }
        }
    }

    /// One update over `(slot, param)` pairs. Every passed parameter must
    /// hold a gradient; gradients are cleared afterwards.
    pub fn step(&mut self, params: &[(usize, &Tensor<T>)]) -> Result<()> {
        for &(slot, p) in params {
            if p.grad().is_none() {
                return Err(TensorError::Optimizer(format!(
                    "parameter in slot {slot} has no gradient; run backward first"
                )));
            }
        }
        let lr = self.effective_lr();
        match self.rule {
            UpdateRule::Sgd => {
                for &(_, p) in params {
                    let g = p.grad().unwrap();
                    let mut data = p.to_vec();
                    for (d, gi) in data.iter_mut().zip(&g) {
                        *d = *d - T::from_f64(lr) * *gi;
                    }
                    p.copy_from(&data)?;
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                for &(slot, p) in params {
                    if slot >= self.m.len() {
                        self.m.resize_with(slot + 1, || None);
                        self.v.resize_with(slot + 1, || None);
                    }
                    let g = p.grad().unwrap();
                    let m = self.m[slot].get_or_insert_with(|| vec![T::zero(); g.len()]);
                    let v = self.v[slot].get_or_insert_with(|| vec![T::zero(); g.len()]);
                    if m.len() != g.len() {
                        return Err(TensorError::Optimizer(format!(
                            "slot {slot} moment size changed ({} -> {})",
                            m.len(),
                            g.len()
                        )));
                    }
                    let mut data = p.to_vec();
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mhat = m[i].as_f64() / bc1;
                        let vhat = v[i].as_f64() / bc2;
                        data[i] = data[i] - T::from_f64(lr * mhat / (vhat.sqrt() + eps));
                    }
                    p.copy_from(&data)?;
                }
            }
        }
        for &(_, p) in params {
            p.zero_grad();
        }
        self.step += 1;
        Ok(())
    }

    /// Convenience wrapper: slots are the positions in `params`.
    pub fn step_all(&mut self, params: &[Tensor<T>]) -> Result<()> {
        let pairs: Vec<(usize, &Tensor<T>)> =
            params.iter().enumerate().map(|(i, p)| (i, p)).collect();
        self.step(&pairs)
    }

    /// Moment buffers for checkpointing: (slot, m, v) triples.
    pub fn moments(&self) -> Vec<(usize, Vec<T>, Vec<T>)> {
        self.m
            .iter()
            .zip(&self.v)
            .enumerate()
            .filter_map(|(i, (m, v))| match (m, v) {
                (Some(m), Some(v)) => Some((i, m.clone(), v.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn restore(&mut self, step: usize, moments: Vec<(usize, Vec<T>, Vec<T>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (slot, m, v) in moments {
            if slot >= self.m.len() {
                self.m.resize_with(slot + 1, || None);
                self.v.resize_with(slot + 1, || None);
            }
            self.m[slot] = Some(m);
            self.v[slot] = Some(v);
        }
    }
}
