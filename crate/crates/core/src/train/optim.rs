use crate::error::{Error, Result};

/// Scales `grads` in place so that their joint L2 norm is at most `threshold`.
/// Returns the norm before clipping.
///
/// ```
/// use tensor_rnn::train::clip_global_norm;
/// let mut a = vec![6.0, 0.0];
/// let mut b = vec![8.0];
/// let norm = clip_global_norm(&mut [&mut a[..], &mut b[..]], 5.0).unwrap();
/// assert_eq!(norm, 10.0);
/// assert_eq!((a[0], b[0]), (3.0, 4.0));
/// ```
pub fn clip_global_norm(grads: &mut [&mut [f64]], threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::config(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {norm}")));
    }
    if norm > threshold {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    Ok(norm)
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments for parameters laid out as `sizes`, with the usual
    /// `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(lr: f64, sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One step: `θ ← θ − α m̂ / (√v̂ + ε)`.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "Adam holds {} slices but got {} parameter and {} gradient slices",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::shape("parameter slice length changed between Adam steps"));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_update(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    state.update(params, grads)
}
