//! The five training losses and their weighted sum: penalty-reduced focal
//! loss on the center heatmaps, L1 on sizes and offsets at positive cells,
//! and MSE + windowed SSIM on the restored image.

use dreb_tensor::{Scalar, Tape, Tensor};

use crate::error::{CoreError, Result};
use crate::model::Phase;

pub const PROB_CLAMP: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub w_hm: f64,
    pub w_wh: f64,
    pub w_off: f64,
    pub w_mse: f64,
    pub w_ssim: f64,
    /// Focal focusing exponent on the prediction.
    pub gamma: f64,
    /// Penalty-reduction exponent on (1 − target) at negatives.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_hm: 1.0, w_wh: 0.1, w_off: 1.0, w_mse: 1.0, w_ssim: 0.5, gamma: 2.0, beta: 4.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_hm", self.w_hm),
            ("w_wh", self.w_wh),
            ("w_off", self.w_off),
            ("w_mse", self.w_mse),
            ("w_ssim", self.w_ssim),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(CoreError::Config(format!("loss weight {name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Loss values of one step; restoration parts present only when the
/// restoration branch ran.
pub struct LossParts<T: Scalar> {
    pub hm: Tensor<T>,
    pub wh: Tensor<T>,
    pub off: Tensor<T>,
    pub mse: Option<Tensor<T>>,
    pub ssim: Option<Tensor<T>>,
}

/// Penalty-reduced focal loss over sigmoid heatmaps:
/// −(1/N)·[Σ_pos (1−p)^γ·log p + Σ_neg (1−t)^β·p^γ·log(1−p)],
/// N = max(#positives, 1). Positives are the cells where the target is
/// exactly 1.
pub fn focal_loss<T: Scalar>(
    tape: &Tape<T>,
    hm_pred: &Tensor<T>,
    hm_target: &[T],
    gamma: f64,
    beta: f64,
) -> Result<Tensor<T>> {
    if hm_pred.numel() != hm_target.len() {
        return Err(CoreError::Input(format!(
            "focal_loss: prediction has {} cells, target {}",
            hm_pred.numel(),
            hm_target.len()
        )));
    }
    let shape = hm_pred.shape();
    let mut pos = vec![T::zero(); hm_target.len()];
    let mut neg_w = vec![T::zero(); hm_target.len()];
    let mut num_pos = 0usize;
    for (i, &t) in hm_target.iter().enumerate() {
        if t == T::one() {
            pos[i] = T::one();
            num_pos += 1;
        } else {
            neg_w[i] = (T::one() - t).powf(T::from_f64(beta));
        }
    }
    let pos = Tensor::from_vec(&shape, pos)?;
    let neg_w = Tensor::from_vec(&shape, neg_w)?;
    let n = T::from_usize(num_pos.max(1));

    let g = T::from_f64(gamma);
    let p = tape.clamp(hm_pred, T::from_f64(PROB_CLAMP), T::from_f64(1.0 - PROB_CLAMP));
    let one_minus_p = tape.rsub_scalar(T::one(), &p);
    // Positive branch: (1−p)^γ·log(p) at positives.
    let pos_term = tape.mul(&tape.pow_scalar(&one_minus_p, g), &tape.ln(&p))?;
    let pos_term = tape.mul(&pos_term, &pos)?;
    // Negative branch: (1−t)^β·p^γ·log(1−p) elsewhere.
    let neg_term = tape.mul(&tape.pow_scalar(&p, g), &tape.ln(&one_minus_p))?;
    let neg_term = tape.mul(&neg_term, &neg_w)?;
    let total = tape.add(&tape.sum_all(&pos_term), &tape.sum_all(&neg_term))?;
    Ok(tape.scale(&total, -T::one() / n))
}

fn masked_l1<T: Scalar>(
    op: &'static str,
    tape: &Tape<T>,
    pred: &Tensor<T>,
    target: &[T],
    pos_mask: &[bool],
    num_pos: usize,
) -> Result<Tensor<T>> {
    if pred.numel() != target.len() {
        return Err(CoreError::Input(format!(
            "{op}: prediction has {} cells, target {}",
            pred.numel(),
            target.len()
        )));
    }
    let shape = pred.shape();
    // Layout [N, ch, H, W] with a per-(image, cell) mask of length N·H·W.
    if target.len() % pos_mask.len() != 0 {
        return Err(CoreError::Input(format!("{op}: mask does not tile the prediction")));
    }
    let channels = target.len() / pos_mask.len();
    let plane = *shape.last().unwrap_or(&1) * shape[shape.len().saturating_sub(2)];
    let mask: Vec<T> = (0..target.len())
        .map(|i| {
            let n = i / (channels * plane);
            let sp = i % plane;
            if pos_mask[n * plane + sp] {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let mask = Tensor::from_vec(&shape, mask)?;
    let tgt = Tensor::from_vec(&shape, target.to_vec())?;
    let diff = tape.sub(pred, &tgt)?;
    let l1 = tape.abs(&diff);
    let masked = tape.mul(&l1, &mask)?;
    let sum = tape.sum_all(&masked);
    Ok(tape.scale(&sum, T::one() / T::from_usize(num_pos.max(1))))
}

/// L1 size loss over positive cells, normalized by the positive count.
pub fn wh_loss<T: Scalar>(
    tape: &Tape<T>,
    wh_pred: &Tensor<T>,
    wh_target: &[T],
    pos_mask: &[bool],
    num_pos: usize,
) -> Result<Tensor<T>> {
    masked_l1("wh_loss", tape, wh_pred, wh_target, pos_mask, num_pos)
}

/// L1 center-offset loss over positive cells.
pub fn offset_loss<T: Scalar>(
    tape: &Tape<T>,
    reg_pred: &Tensor<T>,
    reg_target: &[T],
    pos_mask: &[bool],
    num_pos: usize,
) -> Result<Tensor<T>> {
    masked_l1("offset_loss", tape, reg_pred, reg_target, pos_mask, num_pos)
}

/// Mean squared pixel error.
pub fn mse_loss<T: Scalar>(
    tape: &Tape<T>,
    restored: &Tensor<T>,
    sharp: &Tensor<T>,
) -> Result<Tensor<T>> {
    if restored.shape() != sharp.shape() {
        return Err(CoreError::Input(format!(
            "mse_loss: shapes differ: {:?} vs {:?}",
            restored.shape(),
            sharp.shape()
        )));
    }
    let d = tape.sub(restored, sharp)?;
    let sq = tape.mul(&d, &d)?;
    Ok(tape.mean_all(&sq))
}

fn gaussian_window<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = vec![0.0f64; size * size];
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            w[y * size + x] = v;
            sum += v;
        }
    }
    w.iter().map(|v| T::from_f64(v / sum)).collect()
}

/// 1 − mean SSIM over 11×11 Gaussian windows (σ 1.5, valid padding),
/// channels treated independently; range [0, 2].
pub fn ssim_loss<T: Scalar>(
    tape: &Tape<T>,
    restored: &Tensor<T>,
    sharp: &Tensor<T>,
    dynamic_range: f64,
) -> Result<Tensor<T>> {
    let s = restored.shape();
    if s != sharp.shape() {
        return Err(CoreError::Input(format!(
            "ssim_loss: shapes differ: {:?} vs {:?}",
            s,
            sharp.shape()
        )));
    }
    let (planes, h, w) = match s.len() {
        3 => (s[0], s[1], s[2]),
        4 => (s[0] * s[1], s[2], s[3]),
        _ => return Err(CoreError::Input(format!("ssim_loss: rank 3/4 expected, got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Input(format!(
            "ssim_loss: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let win = Tensor::from_vec(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], gaussian_window(SSIM_WINDOW, SSIM_SIGMA))?;
    let c1 = T::from_f64((SSIM_K1 * dynamic_range).powi(2));
    let c2 = T::from_f64((SSIM_K2 * dynamic_range).powi(2));

    let x = tape.reshape(restored, &[planes, 1, h, w])?;
    let y = tape.reshape(sharp, &[planes, 1, h, w])?;
    let blur = |t: &Tensor<T>| tape.conv2d(t, &win, None, 1, 0);
    let mu_x = blur(&x)?;
    let mu_y = blur(&y)?;
    let mu_xx = tape.mul(&mu_x, &mu_x)?;
    let mu_yy = tape.mul(&mu_y, &mu_y)?;
    let mu_xy = tape.mul(&mu_x, &mu_y)?;
    let sigma_xx = tape.sub(&blur(&tape.mul(&x, &x)?)?, &mu_xx)?;
    let sigma_yy = tape.sub(&blur(&tape.mul(&y, &y)?)?, &mu_yy)?;
    let sigma_xy = tape.sub(&blur(&tape.mul(&x, &y)?)?, &mu_xy)?;

    let num = tape.mul(
        &tape.add_scalar(&tape.scale(&mu_xy, T::from_f64(2.0)), c1),
        &tape.add_scalar(&tape.scale(&sigma_xy, T::from_f64(2.0)), c2),
    )?;
    let den = tape.mul(
        &tape.add_scalar(&tape.add(&mu_xx, &mu_yy)?, c1),
        &tape.add_scalar(&tape.add(&sigma_xx, &sigma_yy)?, c2),
    )?;
    let ssim_map = tape.div(&num, &den)?;
    let mean = tape.mean_all(&ssim_map);
    Ok(tape.rsub_scalar(T::one(), &mean))
}

/// Plain SSIM value (1 − ssim_loss) evaluated off the tape; the stats
/// machinery reuses the loss core so both report the same quantity.
pub fn ssim_index<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dynamic_range: f64) -> Result<f64> {
    let tape = Tape::no_grad();
    let l = ssim_loss(&tape, a, b, dynamic_range)?;
    Ok(1.0 - l.item()?.as_f64())
}

/// Weighted sum of the parts. The joint phase requires both restoration
/// parts; the detached phase contributes detection terms only.
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    parts: &LossParts<T>,
    w: &LossWeights,
    phase: Phase,
) -> Result<Tensor<T>> {
    let mut total = tape.scale(&parts.hm, T::from_f64(w.w_hm));
    total = tape.add(&total, &tape.scale(&parts.wh, T::from_f64(w.w_wh)))?;
    total = tape.add(&total, &tape.scale(&parts.off, T::from_f64(w.w_off)))?;
    if phase == Phase::Joint {
        let (mse, ssim) = match (&parts.mse, &parts.ssim) {
            (Some(m), Some(s)) => (m, s),
            _ => {
                return Err(CoreError::Input(
                    "total_loss: joint phase requires MSE and SSIM parts".into(),
                ))
            }
        };
        total = tape.add(&total, &tape.scale(mse, T::from_f64(w.w_mse)))?;
        total = tape.add(&total, &tape.scale(ssim, T::from_f64(w.w_ssim)))?;
    }
    Ok(total)
}
