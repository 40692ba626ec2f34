//! Recurrent cells whose weight matrices are [`FactorizedLinear`] operators.
//!
//! Input-to-hidden operators map `N → M` and carry the gate bias;
//! hidden-to-hidden operators map `M → M` and have no bias of their own.

mod elman;
mod gru;
mod lstm;

pub use elman::{elman_step, ElmanWeights};
pub use gru::{gru_step, GruCache, GruGates, GruWeights};
pub use lstm::{lstm_step, LstmState, LstmWeights};

use crate::error::{Error, Result};
use crate::factorized::{FactorizedLinear, Kind, TensorizedShape};

/// A recurrent cell advanced one input at a time.
pub trait RecurrentCell {
    type State: Clone;

    fn input_size(&self) -> usize;

    fn hidden_size(&self) -> usize;

    /// Zero state.
    fn initial_state(&self) -> Self::State;

    fn step(&self, x: &[f64], state: &Self::State) -> Result<Self::State>;

    fn hidden<'a>(&self, state: &'a Self::State) -> &'a [f64];
}

/// Folds `cell.step` over `inputs` starting from `state`; returns every state
/// produced, one per input.
pub fn run_from<C: RecurrentCell>(cell: &C, state: C::State, inputs: &[Vec<f64>]) -> Result<Vec<C::State>> {
    if let Some(bad) = inputs.iter().find(|x| x.len() != cell.input_size()) {
        return Err(Error::shape(format!(
            "sequence input of length {} for a cell with input size {}",
            bad.len(),
            cell.input_size()
        )));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut cur = state;
    for x in inputs {
        cur = cell.step(x, &cur)?;
        states.push(cur.clone());
    }
    Ok(states)
}

/// Hidden states for `inputs` starting from the zero state.
pub fn run_sequence<C: RecurrentCell>(cell: &C, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let states = run_from(cell, cell.initial_state(), inputs)?;
    Ok(states.iter().map(|s| cell.hidden(s).to_vec()).collect())
}

/// Shapes and ranks for every projection inside a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub kind: Kind,
    /// Input-to-hidden tensorization: `m_dims` factor the hidden size, `n_dims` the input size.
    pub input_shape: TensorizedShape,
    /// Hidden-to-hidden tensorization: both sides factor the hidden size.
    pub hidden_shape: TensorizedShape,
    pub input_ranks: Vec<usize>,
    pub hidden_ranks: Vec<usize>,
}

impl CellLayout {
    /// Builds a layout from one rank specification shared by both operator families.
    /// See [`expand_ranks`] for the accepted forms.
    pub fn new(kind: Kind, m_dims: &[usize], n_dims: &[usize], ranks: &[usize]) -> Result<Self> {
        let input_shape = TensorizedShape::from_dims(m_dims, n_dims)?;
        let hidden_shape = TensorizedShape::from_dims(m_dims, m_dims)?;
        let (input_shape, hidden_shape) = if kind == Kind::Dense {
            (
                TensorizedShape::matrix(input_shape.rows(), input_shape.cols())?,
                TensorizedShape::matrix(hidden_shape.rows(), hidden_shape.cols())?,
            )
        } else {
            (input_shape, hidden_shape)
        };
        Ok(CellLayout {
            kind,
            input_ranks: expand_ranks(kind, ranks, &input_shape)?,
            hidden_ranks: expand_ranks(kind, ranks, &hidden_shape)?,
            input_shape,
            hidden_shape,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_shape.rows()
    }

    /// Glorot-initialized input-to-hidden operator (with bias).
    pub(crate) fn init_input_op(&self, seed: u64) -> Result<FactorizedLinear> {
        let sigma = glorot_std(self.input_shape.rows(), self.input_shape.cols());
        FactorizedLinear::init(self.kind, &self.input_shape, &self.input_ranks, sigma, true, seed)
    }

    /// Glorot-initialized hidden-to-hidden operator (no bias).
    pub(crate) fn init_hidden_op(&self, seed: u64) -> Result<FactorizedLinear> {
        let sigma = glorot_std(self.hidden_shape.rows(), self.hidden_shape.cols());
        FactorizedLinear::init(self.kind, &self.hidden_shape, &self.hidden_ranks, sigma, false, seed)
    }
}

/// `sqrt(2 / (fan_in + fan_out))`.
pub fn glorot_std(rows: usize, cols: usize) -> f64 {
    (2.0 / (rows + cols) as f64).sqrt()
}

/// Expands a compact rank specification to the full list a [`FactorizedLinear`] expects.
///
/// - dense: ignored, always `[]`;
/// - CP: `[R]`;
/// - Tucker: `[r]` (every mode), `d` values (used for both the row and column
///   side) or all `2d` values;
/// - TT: `[r]` (every interior rank), the `d - 1` interior ranks, or all `d + 1`.
pub fn expand_ranks(kind: Kind, spec: &[usize], shape: &TensorizedShape) -> Result<Vec<usize>> {
    let d = shape.order();
    let out = match kind {
        Kind::Dense => Vec::new(),
        Kind::Cp => spec.to_vec(),
        Kind::Tucker => match spec.len() {
            1 => vec![spec[0]; 2 * d],
            n if n == d => spec.iter().chain(spec).copied().collect(),
            _ => spec.to_vec(),
        },
        Kind::Tt => match spec.len() {
            n if n == d + 1 => spec.to_vec(),
            n if n + 1 == d => std::iter::once(1).chain(spec.iter().copied()).chain([1]).collect(),
            1 => std::iter::once(1)
                .chain(std::iter::repeat_n(spec[0], d - 1))
                .chain([1])
                .collect(),
            _ => spec.to_vec(),
        },
    };
    crate::factorized::validate_ranks(kind, shape, &out)?;
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub(crate) fn check_len(what: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::shape(format!(
            "{what} has length {} but {want} is required",
            v.len()
        )));
    }
    Ok(())
}
