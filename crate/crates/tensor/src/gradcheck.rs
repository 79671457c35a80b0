use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Compare reverse-mode gradients against central finite differences.
///
/// `build_loss` must construct the same scalar loss from the current values
/// of `params` every time it is called; the numeric side only ever runs it
/// on no-grad tapes, so it is independent of the backward pass it checks.
/// Returns max over all parameter elements of
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-12).
pub fn grad_check<T: Scalar>(
    params: &[Tensor<T>],
    eps: T,
    build_loss: impl Fn(&Tape<T>) -> Result<Tensor<T>>,
) -> Result<T> {
    if eps <= T::zero() {
        return Err(TensorError::arg("grad_check", "eps must be positive"));
    }
    for p in params {
        p.zero_grad();
        p.set_requires_grad(true);
    }
    let tape = Tape::new();
    let loss = build_loss(&tape)?;
    let l0 = loss.item()?;
    if !l0.is_finite() {
        return Err(TensorError::NonFinite("grad_check loss"));
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<T>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
        .collect();

    let eval = |params_snapshot: &[Tensor<T>]| -> Result<T> {
        let tape = Tape::no_grad();
        let loss = build_loss(&tape)?;
        let v = loss.item()?;
        if !v.is_finite() {
            return Err(TensorError::NonFinite("grad_check probe loss"));
        }
        let _ = params_snapshot;
        Ok(v)
    };

    let floor = T::from_f64(1e-12);
    let mut max_rel = T::zero();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            p.nudge(j, eps);
            let fp = eval(params)?;
            p.nudge(j, -(eps + eps));
            let fm = eval(params)?;
            p.nudge(j, eps); // restore
            let numeric = (fp - fm) / (eps + eps);
            let a = analytic[pi][j];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
