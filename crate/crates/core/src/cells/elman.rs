use super::{add_assign, check_len, CellLayout, RecurrentCell};
use crate::error::{Error, Result};
use crate::factorized::FactorizedLinear;

/// Simple recurrent cell: `h' = tanh(W_xh x + W_hh h + b_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmanWeights {
    pub xh: FactorizedLinear,
    pub hh: FactorizedLinear,
}

impl ElmanWeights {
    pub fn new(xh: FactorizedLinear, hh: FactorizedLinear) -> Result<Self> {
        let m = xh.out_dim();
        if hh.in_dim() != m || hh.out_dim() != m {
            return Err(Error::shape(format!(
                "W_hh maps {} -> {} but the hidden size is {m}",
                hh.in_dim(),
                hh.out_dim()
            )));
        }
        Ok(ElmanWeights { xh, hh })
    }

    pub fn init(layout: &CellLayout, seed: u64) -> Result<Self> {
        ElmanWeights::new(
            layout.init_input_op(seed.wrapping_mul(2))?,
            layout.init_hidden_op(seed.wrapping_mul(2).wrapping_add(1))?,
        )
    }
}

pub fn elman_step(w: &ElmanWeights, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    check_len("Elman hidden state", h_prev, w.hh.in_dim())?;
    let mut a = w.xh.apply(x)?;
    add_assign(&mut a, &w.hh.apply(h_prev)?);
    Ok(a.into_iter().map(f64::tanh).collect())
}

impl RecurrentCell for ElmanWeights {
    type State = Vec<f64>;

    fn input_size(&self) -> usize {
        self.xh.in_dim()
    }

    fn hidden_size(&self) -> usize {
        self.xh.out_dim()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.hidden_size()]
    }

    fn step(&self, x: &[f64], state: &Vec<f64>) -> Result<Vec<f64>> {
        elman_step(self, x, state)
    }

    fn hidden<'a>(&self, state: &'a Vec<f64>) -> &'a [f64] {
        state
    }
}
