use super::{add_assign, check_len, sigmoid, CellLayout, RecurrentCell};
use crate::error::{Error, Result};
use crate::factorized::FactorizedLinear;

/// LSTM with diagonal peephole connections:
///
/// ```text
/// i = σ(W_xi x + W_hi h + w_ci ⊙ c + b_i)
/// f = σ(W_xf x + W_hf h + w_cf ⊙ c + b_f)
/// c' = f ⊙ c + i ⊙ tanh(W_xc x + W_hc h + b_c)
/// o = σ(W_xo x + W_ho h + w_co ⊙ c' + b_o)
/// h' = o ⊙ tanh(c')
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub xi: FactorizedLinear,
    pub hi: FactorizedLinear,
    pub xf: FactorizedLinear,
    pub hf: FactorizedLinear,
    pub xc: FactorizedLinear,
    pub hc: FactorizedLinear,
    pub xo: FactorizedLinear,
    pub ho: FactorizedLinear,
    pub peep_i: Vec<f64>,
    pub peep_f: Vec<f64>,
    pub peep_o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmWeights {
    pub fn init(layout: &CellLayout, seed: u64) -> Result<Self> {
        let s = |k: u64| seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(k);
        let m = layout.hidden_size();
        let w = LstmWeights {
            xi: layout.init_input_op(s(1))?,
            hi: layout.init_hidden_op(s(2))?,
            xf: layout.init_input_op(s(3))?,
            hf: layout.init_hidden_op(s(4))?,
            xc: layout.init_input_op(s(5))?,
            hc: layout.init_hidden_op(s(6))?,
            xo: layout.init_input_op(s(7))?,
            ho: layout.init_hidden_op(s(8))?,
            peep_i: vec![0.0; m],
            peep_f: vec![0.0; m],
            peep_o: vec![0.0; m],
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.xi.in_dim();
        let m = self.xi.out_dim();
        for op in [&self.xi, &self.xf, &self.xc, &self.xo] {
            if op.in_dim() != n || op.out_dim() != m {
                return Err(Error::shape("input-to-hidden operators disagree on sizes"));
            }
        }
        for op in [&self.hi, &self.hf, &self.hc, &self.ho] {
            if op.in_dim() != m || op.out_dim() != m {
                return Err(Error::shape(
                    "hidden-to-hidden operators must be square of the hidden size",
                ));
            }
        }
        for p in [&self.peep_i, &self.peep_f, &self.peep_o] {
            check_len("peephole weights", p, m)?;
        }
        Ok(())
    }
}

fn gate(x_op: &FactorizedLinear, h_op: &FactorizedLinear, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let mut a = x_op.apply(x)?;
    add_assign(&mut a, &h_op.apply(h)?);
    Ok(a)
}

pub fn lstm_step(w: &LstmWeights, x: &[f64], state: &LstmState) -> Result<LstmState> {
    let m = w.xi.out_dim();
    check_len("LSTM hidden state", &state.h, m)?;
    check_len("LSTM memory cell", &state.c, m)?;
    let c_prev = &state.c;

    let mut ai = gate(&w.xi, &w.hi, x, &state.h)?;
    let mut af = gate(&w.xf, &w.hf, x, &state.h)?;
    let ac = gate(&w.xc, &w.hc, x, &state.h)?;
    let mut ao = gate(&w.xo, &w.ho, x, &state.h)?;

    let mut c = vec![0.0; m];
    for k in 0..m {
        ai[k] = sigmoid(ai[k] + w.peep_i[k] * c_prev[k]);
        af[k] = sigmoid(af[k] + w.peep_f[k] * c_prev[k]);
        c[k] = af[k] * c_prev[k] + ai[k] * ac[k].tanh();
    }
    let mut h = vec![0.0; m];
    for k in 0..m {
        ao[k] = sigmoid(ao[k] + w.peep_o[k] * c[k]);
        h[k] = ao[k] * c[k].tanh();
    }
    Ok(LstmState { h, c })
}

impl RecurrentCell for LstmWeights {
    type State = LstmState;

    fn input_size(&self) -> usize {
        self.xi.in_dim()
    }

    fn hidden_size(&self) -> usize {
        self.xi.out_dim()
    }

    fn initial_state(&self) -> LstmState {
        let m = self.hidden_size();
        LstmState {
            h: vec![0.0; m],
            c: vec![0.0; m],
        }
    }

    fn step(&self, x: &[f64], state: &LstmState) -> Result<LstmState> {
        lstm_step(self, x, state)
    }

    fn hidden<'a>(&self, state: &'a LstmState) -> &'a [f64] {
        &state.h
    }
}
