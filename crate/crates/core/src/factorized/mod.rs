//! Linear maps `y = W x + b` whose weight matrix is stored in factored form.
//!
//! A weight `W` of size `M × N` is tensorized into a tensor with modes
//! `(m_1, …, m_d, n_1, …, n_d)` where `M = Π m_k` and `N = Π n_k`. Row `p`
//! corresponds to the multi-index `linear_to_multi(p, m_dims)` and column `q`
//! to `linear_to_multi(q, n_dims)`. That tensor is then kept as CP factors,
//! a Tucker core with factor matrices, or a chain of tensor-train cores.
//!
//! Every representation supports:
//! - [`FactorizedLinear::apply`], evaluated by contracting the input with the
//!   factors directly (the full matrix is never built);
//! - [`FactorizedLinear::materialize`], the elementwise reconstruction, used as
//!   the reference for `apply`;
//! - [`FactorizedLinear::vjp`], hand-derived reverse-mode gradients;
//! - variance-matched random initialization ([`FactorizedLinear::init`]).

mod cp;
mod dense;
mod serial;
mod tt;
mod tucker;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use cp::CpFactors;
pub use dense::DenseWeights;
pub use serial::FactorizedLinearWire;
pub use tt::TtCores;
pub use tucker::TuckerFactors;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Shape};

/// Factorization of a matrix's row count `M` into `m_dims` and column count `N` into `n_dims`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorizedShape {
    m_dims: Shape,
    n_dims: Shape,
}

impl TensorizedShape {
    pub fn new(m_dims: Shape, n_dims: Shape) -> Result<Self> {
        if m_dims.order() != n_dims.order() {
            return Err(Error::shape(format!(
                "row factorization {m_dims} and column factorization {n_dims} have different orders"
            )));
        }
        Ok(TensorizedShape { m_dims, n_dims })
    }

    pub fn from_dims(m_dims: &[usize], n_dims: &[usize]) -> Result<Self> {
        TensorizedShape::new(Shape::new(m_dims.to_vec())?, Shape::new(n_dims.to_vec())?)
    }

    /// Trivial order-1 factorization of an `M × N` matrix.
    pub fn matrix(rows: usize, cols: usize) -> Result<Self> {
        TensorizedShape::from_dims(&[rows], &[cols])
    }

    pub fn m_dims(&self) -> &Shape {
        &self.m_dims
    }

    pub fn n_dims(&self) -> &Shape {
        &self.n_dims
    }

    /// Number of modes `d` on each side.
    pub fn order(&self) -> usize {
        self.m_dims.order()
    }

    pub fn rows(&self) -> usize {
        self.m_dims.numel()
    }

    pub fn cols(&self) -> usize {
        self.n_dims.numel()
    }
}

impl fmt::Display for TensorizedShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.m_dims, self.n_dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dense,
    Cp,
    Tucker,
    Tt,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Dense, Kind::Cp, Kind::Tucker, Kind::Tt];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Dense => "dense",
            Kind::Cp => "cp",
            Kind::Tucker => "tucker",
            Kind::Tt => "tt",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" | "gru" => Ok(Kind::Dense),
            "cp" => Ok(Kind::Cp),
            "tucker" => Ok(Kind::Tucker),
            "tt" => Ok(Kind::Tt),
            other => Err(Error::config(format!(
                "unknown model kind {other:?} (expected dense, cp, tucker or tt)"
            ))),
        }
    }
}

/// The stored weight representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Dense(DenseWeights),
    Cp(CpFactors),
    Tucker(TuckerFactors),
    Tt(TtCores),
}

macro_rules! dispatch {
    ($w:expr, $v:ident => $body:expr) => {
        match $w {
            Weights::Dense($v) => $body,
            Weights::Cp($v) => $body,
            Weights::Tucker($v) => $body,
            Weights::Tt($v) => $body,
        }
    };
}

impl Weights {
    pub fn kind(&self) -> Kind {
        match self {
            Weights::Dense(_) => Kind::Dense,
            Weights::Cp(_) => Kind::Cp,
            Weights::Tucker(_) => Kind::Tucker,
            Weights::Tt(_) => Kind::Tt,
        }
    }

    pub fn shape(&self) -> &TensorizedShape {
        dispatch!(self, w => w.shape())
    }

    /// Rank parameters: `[]` dense, `[R]` CP, `r_1..r_2d` Tucker, `d + 1` TT ranks.
    pub fn ranks(&self) -> Vec<usize> {
        match self {
            Weights::Dense(_) => Vec::new(),
            Weights::Cp(w) => vec![w.rank()],
            Weights::Tucker(w) => w.ranks().to_vec(),
            Weights::Tt(w) => w.tt_ranks().to_vec(),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        dispatch!(self, w => w.slices())
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        dispatch!(self, w => w.slices_mut())
    }

    fn materialize(&self) -> Matrix {
        dispatch!(self, w => w.materialize())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        dispatch!(self, w => w.apply(x))
    }

    fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut Weights) -> Result<Vec<f64>> {
        match (self, grad) {
            (Weights::Dense(w), Weights::Dense(g)) => Ok(w.accumulate_vjp(x, upstream, g)),
            (Weights::Cp(w), Weights::Cp(g)) => Ok(w.accumulate_vjp(x, upstream, g)),
            (Weights::Tucker(w), Weights::Tucker(g)) => Ok(w.accumulate_vjp(x, upstream, g)),
            (Weights::Tt(w), Weights::Tt(g)) => Ok(w.accumulate_vjp(x, upstream, g)),
            (w, g) => Err(Error::shape(format!(
                "gradient buffer of kind {} for weights of kind {}",
                g.kind(),
                w.kind()
            ))),
        }
    }
}

/// Exact closed-form count of the scalars stored by a factorization, excluding bias.
pub fn closed_form_param_count(kind: Kind, shape: &TensorizedShape, ranks: &[usize]) -> Result<usize> {
    validate_ranks(kind, shape, ranks)?;
    let m = shape.m_dims().dims();
    let n = shape.n_dims().dims();
    let d = shape.order();
    Ok(match kind {
        Kind::Dense => shape.rows() * shape.cols(),
        Kind::Cp => ranks[0] * m.iter().zip(n).map(|(a, b)| a + b).sum::<usize>(),
        Kind::Tucker => {
            let factors: usize = (0..d).map(|k| m[k] * ranks[k] + n[k] * ranks[d + k]).sum();
            factors + ranks.iter().product::<usize>()
        }
        Kind::Tt => (0..d).map(|k| ranks[k] * m[k] * n[k] * ranks[k + 1]).sum(),
    })
}

pub(crate) fn validate_ranks(kind: Kind, shape: &TensorizedShape, ranks: &[usize]) -> Result<()> {
    let d = shape.order();
    let m = shape.m_dims().dims();
    let n = shape.n_dims().dims();
    let bad = |msg: String| Err(Error::config(msg));
    match kind {
        Kind::Dense => {
            if !ranks.is_empty() {
                return bad(format!("dense weights take no ranks, got {ranks:?}"));
            }
        }
        Kind::Cp => {
            if ranks.len() != 1 || ranks[0] == 0 {
                return bad(format!("CP needs a single positive rank, got {ranks:?}"));
            }
        }
        Kind::Tucker => {
            if ranks.len() != 2 * d || ranks.contains(&0) {
                return bad(format!(
                    "Tucker of order {d} needs {} positive ranks, got {ranks:?}",
                    2 * d
                ));
            }
            let limits = m.iter().chain(n);
            if let Some((k, (r, lim))) = ranks.iter().zip(limits).enumerate().find(|(_, (r, l))| r > l) {
                return bad(format!("Tucker rank {k} is {r} but the mode has size {lim}"));
            }
            if ranks.iter().zip(m.iter().chain(n)).any(|(r, l)| r == l) {
                log::warn!(
                    "Tucker ranks {ranks:?} are not strictly below the mode sizes of {shape}; \
                     the factorization does not compress those modes"
                );
            }
        }
        Kind::Tt => {
            if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 || ranks.contains(&0) {
                return bad(format!(
                    "TT of order {d} needs {} positive ranks with 1 at both ends, got {ranks:?}",
                    d + 1
                ));
            }
        }
    }
    Ok(())
}

/// Standard deviation for every stored factor scalar so that the reconstructed
/// weight entries have variance `sigma_w²`.
///
/// - CP: an entry sums `R` products of `2d` factors, so `R·σ_g^{4d} = σ_w²`.
/// - Tucker: an entry sums `Π r_k` products of one core value and `2d` factors,
///   so `Π r_k · σ_g^{4d+2} = σ_w²`.
/// - TT: an entry sums `Π_{k=1}^{d-1} r_k` products of `d` core values,
///   so `Π r_k · σ_g^{2d} = σ_w²`.
pub fn factor_std(kind: Kind, order: usize, ranks: &[usize], sigma_w: f64) -> f64 {
    let var_w = sigma_w * sigma_w;
    let d = order as f64;
    match kind {
        Kind::Dense => sigma_w,
        Kind::Cp => (var_w / ranks[0] as f64).powf(1.0 / (4.0 * d)),
        Kind::Tucker => {
            let terms: f64 = ranks.iter().map(|&r| r as f64).product();
            (var_w / terms).powf(1.0 / (4.0 * d + 2.0))
        }
        Kind::Tt => {
            let terms: f64 = ranks[1..ranks.len() - 1].iter().map(|&r| r as f64).product();
            (var_w / terms).powf(1.0 / (2.0 * d))
        }
    }
}

/// A linear map `y = W x + b` with `W` in one of the supported representations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedLinear {
    weights: Weights,
    bias: Option<Vec<f64>>,
}

impl FactorizedLinear {
    pub fn new(weights: Weights, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            let m = weights.shape().rows();
            if b.len() != m {
                return Err(Error::shape(format!(
                    "bias of length {} for an operator with {m} rows",
                    b.len()
                )));
            }
        }
        Ok(FactorizedLinear { weights, bias })
    }

    /// All-zero operator of the given kind, with a zero bias when `with_bias`.
    pub fn zeros(kind: Kind, shape: &TensorizedShape, ranks: &[usize], with_bias: bool) -> Result<Self> {
        validate_ranks(kind, shape, ranks)?;
        let weights = match kind {
            Kind::Dense => Weights::Dense(DenseWeights::zeros(shape.clone())),
            Kind::Cp => Weights::Cp(CpFactors::zeros(shape.clone(), ranks[0])),
            Kind::Tucker => Weights::Tucker(TuckerFactors::zeros(shape.clone(), ranks)?),
            Kind::Tt => Weights::Tt(TtCores::zeros(shape.clone(), ranks)?),
        };
        let bias = with_bias.then(|| vec![0.0; shape.rows()]);
        FactorizedLinear::new(weights, bias)
    }

    /// Random operator whose materialized entries have mean 0 and variance
    /// `sigma_w²`; every stored scalar is drawn i.i.d. from `N(0, σ_g²)` with
    /// σ_g from [`factor_std`]. The bias starts at zero.
    pub fn init(
        kind: Kind,
        shape: &TensorizedShape,
        ranks: &[usize],
        sigma_w: f64,
        with_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::config(format!("sigma_w must be positive, got {sigma_w}")));
        }
        let mut op = FactorizedLinear::zeros(kind, shape, ranks, with_bias)?;
        let std = factor_std(kind, shape.order(), ranks, sigma_w);
        let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slice in op.weights.slices_mut() {
            for v in slice.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(op)
    }

    pub fn kind(&self) -> Kind {
        self.weights.kind()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn shape(&self) -> &TensorizedShape {
        self.weights.shape()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.weights.ranks()
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn in_dim(&self) -> usize {
        self.shape().cols()
    }

    pub fn out_dim(&self) -> usize {
        self.shape().rows()
    }

    /// Stored weight scalars from the closed-form count (bias excluded).
    pub fn param_count(&self) -> usize {
        closed_form_param_count(self.kind(), self.shape(), &self.ranks())
            .expect("constructed operators always have valid ranks")
    }

    pub fn param_count_with_bias(&self) -> usize {
        self.param_count() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Every trainable scalar, weights first then bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.weights.slices();
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.weights.slices_mut();
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    /// Same structure with every scalar set to zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.params_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Dense `M × N` matrix `W[p][q] = 𝒲(f_i(p), f_j(q))`, reconstructed from the factors.
    pub fn materialize(&self) -> Matrix {
        self.weights.materialize()
    }

    /// Dense copy of this operator with the same bias.
    pub fn to_dense(&self) -> Self {
        FactorizedLinear {
            weights: Weights::Dense(
                DenseWeights::from_matrix(self.shape().clone(), self.materialize())
                    .expect("materialized matrix matches its shape"),
            ),
            bias: self.bias.clone(),
        }
    }

    /// `W x + b`, evaluated by contracting `x` with the factors.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut y = self.weights.apply(x);
        if let Some(b) = &self.bias {
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
        }
        Ok(y)
    }

    /// Adds the gradient of `upstreamᵀ · apply(x)` with respect to every stored
    /// scalar into `grad` and returns the gradient with respect to `x`.
    pub fn accumulate_vjp(&self, x: &[f64], upstream: &[f64], grad: &mut FactorizedLinear) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "upstream gradient of length {} for an operator with {} outputs",
                upstream.len(),
                self.out_dim()
            )));
        }
        if grad.shape() != self.shape() || grad.ranks() != self.ranks() {
            return Err(Error::shape("gradient buffer does not match the operator layout"));
        }
        match (&self.bias, &mut grad.bias) {
            (Some(_), Some(gb)) => {
                for (g, u) in gb.iter_mut().zip(upstream) {
                    *g += u;
                }
            }
            (None, None) => {}
            _ => return Err(Error::shape("gradient buffer bias does not match the operator")),
        }
        self.weights.accumulate_vjp(x, upstream, &mut grad.weights)
    }

    /// Gradients of `upstreamᵀ · apply(x)`: `(d/d params, d/d x)`.
    pub fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<(FactorizedLinear, Vec<f64>)> {
        let mut grad = self.zeros_like();
        let gx = self.accumulate_vjp(x, upstream, &mut grad)?;
        Ok((grad, gx))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "input of length {} for an operator with {} columns",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }
}
