use super::{add_assign, check_len, sigmoid, CellLayout, RecurrentCell};
use crate::error::{Error, Result};
use crate::factorized::FactorizedLinear;

/// The six GRU projections. Each is factorized independently; the gate biases
/// `b_r`, `b_z`, `b_h` live in the input-to-hidden operators.
///
/// ```text
/// r = σ(W_xr x + W_hr h + b_r)
/// z = σ(W_xz x + W_hz h + b_z)
/// h̃ = tanh(W_xh x + W_hh (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub xr: FactorizedLinear,
    pub hr: FactorizedLinear,
    pub xz: FactorizedLinear,
    pub hz: FactorizedLinear,
    pub xh: FactorizedLinear,
    pub hh: FactorizedLinear,
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruGates {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// Forward values kept for the backward pass of one step.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    reset_h: Vec<f64>,
    gates: GruGates,
}

impl GruCache {
    pub fn gates(&self) -> &GruGates {
        &self.gates
    }
}

impl GruWeights {
    pub fn new([xr, hr, xz, hz, xh, hh]: [FactorizedLinear; 6]) -> Result<Self> {
        let n = xr.in_dim();
        let m = xr.out_dim();
        for (name, op) in [("W_xr", &xr), ("W_xz", &xz), ("W_xh", &xh)] {
            if op.in_dim() != n || op.out_dim() != m {
                return Err(Error::shape(format!(
                    "{name} maps {} -> {} but the cell maps {n} -> {m}",
                    op.in_dim(),
                    op.out_dim()
                )));
            }
        }
        for (name, op) in [("W_hr", &hr), ("W_hz", &hz), ("W_hh", &hh)] {
            if op.in_dim() != m || op.out_dim() != m {
                return Err(Error::shape(format!(
                    "{name} maps {} -> {} but the hidden size is {m}",
                    op.in_dim(),
                    op.out_dim()
                )));
            }
        }
        Ok(GruWeights { xr, hr, xz, hz, xh, hh })
    }

    /// Glorot-matched random operators with zero biases. Each operator gets its own stream.
    pub fn init(layout: &CellLayout, seed: u64) -> Result<Self> {
        let s = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        GruWeights::new([
            layout.init_input_op(s(1))?,
            layout.init_hidden_op(s(2))?,
            layout.init_input_op(s(3))?,
            layout.init_hidden_op(s(4))?,
            layout.init_input_op(s(5))?,
            layout.init_hidden_op(s(6))?,
        ])
    }

    pub fn operators(&self) -> [(&'static str, &FactorizedLinear); 6] {
        [
            ("xr", &self.xr),
            ("hr", &self.hr),
            ("xz", &self.xz),
            ("hz", &self.hz),
            ("xh", &self.xh),
            ("hh", &self.hh),
        ]
    }

    fn operators_mut(&mut self) -> [&mut FactorizedLinear; 6] {
        [
            &mut self.xr,
            &mut self.hr,
            &mut self.xz,
            &mut self.hz,
            &mut self.xh,
            &mut self.hh,
        ]
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.operators().into_iter().flat_map(|(_, op)| op.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.operators_mut()
            .into_iter()
            .flat_map(|op| op.params_mut())
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let [xr, hr, xz, hz, xh, hh] = self.operators().map(|(_, op)| op.zeros_like());
        GruWeights { xr, hr, xz, hz, xh, hh }
    }

    /// Copy with every operator materialized to a dense matrix.
    pub fn to_dense(&self) -> Self {
        let [xr, hr, xz, hz, xh, hh] = self.operators().map(|(_, op)| op.to_dense());
        GruWeights { xr, hr, xz, hz, xh, hh }
    }

    /// Weight scalars over all six operators (biases excluded).
    pub fn param_count(&self) -> usize {
        self.operators().iter().map(|(_, op)| op.param_count()).sum()
    }

    pub fn param_count_with_bias(&self) -> usize {
        self.operators().iter().map(|(_, op)| op.param_count_with_bias()).sum()
    }

    /// One step, keeping what the backward pass needs.
    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
        check_len("GRU input", x, self.xr.in_dim())?;
        check_len("GRU hidden state", h_prev, self.hr.in_dim())?;
        let mut ar = self.xr.apply(x)?;
        add_assign(&mut ar, &self.hr.apply(h_prev)?);
        let r: Vec<f64> = ar.into_iter().map(sigmoid).collect();

        let mut az = self.xz.apply(x)?;
        add_assign(&mut az, &self.hz.apply(h_prev)?);
        let z: Vec<f64> = az.into_iter().map(sigmoid).collect();

        let reset_h: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut ac = self.xh.apply(x)?;
        add_assign(&mut ac, &self.hh.apply(&reset_h)?);
        let candidate: Vec<f64> = ac.into_iter().map(f64::tanh).collect();

        let h: Vec<f64> = h_prev
            .iter()
            .zip(&z)
            .zip(&candidate)
            .map(|((hp, zi), c)| (1.0 - zi) * hp + zi * c)
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            reset_h,
            gates: GruGates { r, z, candidate },
        };
        Ok((h, cache))
    }

    /// Backward through one step: accumulates parameter gradients into `grad`
    /// and returns `(dL/dx, dL/dh_prev)` for the given `dL/dh`.
    pub fn backward(&self, cache: &GruCache, dh: &[f64], grad: &mut GruWeights) -> Result<(Vec<f64>, Vec<f64>)> {
        let GruGates { r, z, candidate } = &cache.gates;
        let h_prev = &cache.h_prev;
        let m = dh.len();
        check_len("GRU hidden gradient", dh, self.hr.in_dim())?;

        let mut dh_prev: Vec<f64> = (0..m).map(|i| dh[i] * (1.0 - z[i])).collect();
        let dz: Vec<f64> = (0..m).map(|i| dh[i] * (candidate[i] - h_prev[i])).collect();
        let dac: Vec<f64> = (0..m)
            .map(|i| dh[i] * z[i] * (1.0 - candidate[i] * candidate[i]))
            .collect();

        let mut dx = self.xh.accumulate_vjp(&cache.x, &dac, &mut grad.xh)?;
        let d_reset_h = self.hh.accumulate_vjp(&cache.reset_h, &dac, &mut grad.hh)?;
        let mut dr = vec![0.0; m];
        for i in 0..m {
            dr[i] = d_reset_h[i] * h_prev[i];
            dh_prev[i] += d_reset_h[i] * r[i];
        }

        let daz: Vec<f64> = (0..m).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
        add_assign(&mut dx, &self.xz.accumulate_vjp(&cache.x, &daz, &mut grad.xz)?);
        add_assign(&mut dh_prev, &self.hz.accumulate_vjp(h_prev, &daz, &mut grad.hz)?);

        let dar: Vec<f64> = (0..m).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
        add_assign(&mut dx, &self.xr.accumulate_vjp(&cache.x, &dar, &mut grad.xr)?);
        add_assign(&mut dh_prev, &self.hr.accumulate_vjp(h_prev, &dar, &mut grad.hr)?);

        Ok((dx, dh_prev))
    }
}

/// One GRU step. `dropout_mask`, when given, multiplies `x` elementwise
/// (entries are `0` or `1/(1-p)`); the recurrent path is never dropped.
pub fn gru_step(w: &GruWeights, x: &[f64], h_prev: &[f64], dropout_mask: Option<&[f64]>) -> Result<Vec<f64>> {
    match dropout_mask {
        Some(mask) => {
            check_len("dropout mask", mask, x.len())?;
            let dropped: Vec<f64> = x.iter().zip(mask).map(|(a, b)| a * b).collect();
            Ok(w.forward(&dropped, h_prev)?.0)
        }
        None => Ok(w.forward(x, h_prev)?.0),
    }
}

impl RecurrentCell for GruWeights {
    type State = Vec<f64>;

    fn input_size(&self) -> usize {
        self.xr.in_dim()
    }

    fn hidden_size(&self) -> usize {
        self.xr.out_dim()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.hidden_size()]
    }

    fn step(&self, x: &[f64], state: &Vec<f64>) -> Result<Vec<f64>> {
        gru_step(self, x, state, None)
    }

    fn hidden<'a>(&self, state: &'a Vec<f64>) -> &'a [f64] {
        state
    }
}
