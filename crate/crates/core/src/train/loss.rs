use crate::error::{Error, Result};
use crate::NOTES;

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before taking logs.
pub const P_MIN: f64 = 1e-7;

/// `−[y ln p + (1−y) ln(1−p)]` with `p` clamped.
#[inline]
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(P_MIN, 1.0 - P_MIN);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce`]`(σ(a), y)` with respect to the logit `a`: `p − y`
/// inside the clamp range, zero where the clamp is active.
#[inline]
pub fn bce_logit_grad(p: f64, y: f64) -> f64 {
    if (P_MIN..=1.0 - P_MIN).contains(&p) {
        p - y
    } else {
        0.0
    }
}

/// Sum over notes of [`bce`] for one timestep.
pub fn frame_nll(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum()
}

/// Per-timestep negative log-likelihood: the mean over valid timesteps of the
/// per-note binary cross-entropy summed over the 88 notes.
///
/// `predictions` and `targets` hold one 88-vector per timestep; `mask[t] > 0`
/// marks timestep `t` as valid. Returns 0 when no timestep is valid.
///
/// ```
/// use tensor_rnn::train::bce_nll;
/// let p = vec![vec![0.5; 88]; 3];
/// let y = vec![vec![0.0; 88]; 3];
/// let nll = bce_nll(&p, &y, &[1.0, 1.0, 0.0]).unwrap();
/// assert!((nll - 88.0 * 2f64.ln()).abs() < 1e-12);
/// ```
pub fn bce_nll(predictions: &[Vec<f64>], targets: &[Vec<f64>], mask: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.len() != mask.len() {
        return Err(Error::shape(format!(
            "{} prediction frames, {} target frames and {} mask entries",
            predictions.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((p, y), &m) in predictions.iter().zip(targets).zip(mask) {
        if p.len() != NOTES || y.len() != NOTES {
            return Err(Error::shape(format!(
                "frames must have {NOTES} notes, got {} and {}",
                p.len(),
                y.len()
            )));
        }
        if m > 0.0 {
            total += frame_nll(p, y);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
