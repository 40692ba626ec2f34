//! The piano-roll next-step model.
//!
//! ```text
//! u_t = LeakyReLU(W_in x_t + b_in)          88 → N, dense
//! h_t = GRU(u_t, h_{t-1})                  N → M, factorized
//! p_t = σ(W_out h_t + b_out)               M → 88, dense
//! ```
//!
//! `p_t` is the predicted probability of each key being active at `t + 1`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{glorot_std, sigmoid, CellLayout, GruCache, GruWeights};
use crate::error::{Error, Result};
use crate::factorized::{FactorizedLinear, Kind, TensorizedShape};
use crate::train::loss::{bce, bce_logit_grad};
use crate::NOTES;

fn default_slope() -> f64 {
    0.01
}

/// Architecture of a [`GruModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: Kind,
    /// Width `N` of the input projection, which is the GRU input size.
    pub input_size: usize,
    /// GRU hidden size `M`.
    pub hidden_size: usize,
    /// Factorization of `M`.
    pub m_dims: Vec<usize>,
    /// Factorization of `N`.
    pub n_dims: Vec<usize>,
    /// Compact rank specification, see [`crate::cells::expand_ranks`].
    #[serde(default)]
    pub ranks: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let prod = |v: &[usize]| v.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let show = |p: Option<usize>| p.map_or_else(|| "more than usize::MAX".to_string(), |p| p.to_string());
        if prod(&self.m_dims) != Some(self.hidden_size) {
            return Err(Error::config(format!(
                "m_dims {:?} multiply to {}, not the hidden size {}",
                self.m_dims,
                show(prod(&self.m_dims)),
                self.hidden_size
            )));
        }
        if prod(&self.n_dims) != Some(self.input_size) {
            return Err(Error::config(format!(
                "n_dims {:?} multiply to {}, not the input size {}",
                self.n_dims,
                show(prod(&self.n_dims)),
                self.input_size
            )));
        }
        if self.m_dims.len() != self.n_dims.len() {
            return Err(Error::config(format!(
                "m_dims has {} modes but n_dims has {}",
                self.m_dims.len(),
                self.n_dims.len()
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config(format!(
                "leaky_slope must be ≥ 0, got {}",
                self.leaky_slope
            )));
        }
        self.layout().map(|_| ())
    }

    pub fn layout(&self) -> Result<CellLayout> {
        CellLayout::new(self.kind, &self.m_dims, &self.n_dims, &self.ranks).map_err(|e| match e {
            Error::Shape(msg) => Error::Config(msg),
            other => other,
        })
    }
}

/// Where dropout is applied during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    /// On the GRU input `u_t` (the non-recurrent connection).
    #[default]
    CellInput,
    /// On `h_t` as it enters the output layer; the recurrence still sees the full state.
    HiddenOutput,
}

/// Inverted-dropout mask generator. Masks hold `0` or `1/(1-rate)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub placement: DropoutPlacement,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, placement: DropoutPlacement, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate, placement, rng })
    }

    pub fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

/// The assembled next-step model.
#[derive(Debug, Clone, PartialEq)]
pub struct GruModel {
    spec: ModelSpec,
    pub input: FactorizedLinear,
    pub cell: GruWeights,
    pub output: FactorizedLinear,
}

struct StepTrace {
    x: Vec<f64>,
    pre: Vec<f64>,
    input_mask: Option<Vec<f64>>,
    cache: GruCache,
    readout: Vec<f64>,
    hidden_mask: Option<Vec<f64>>,
    probs: Vec<f64>,
}

impl GruModel {
    /// Random model: Glorot-matched weights, zero biases, deterministic in `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout()?;
        let n = spec.input_size;
        let m = spec.hidden_size;
        let s = |k: u64| seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(k);
        let input = FactorizedLinear::init(
            Kind::Dense,
            &TensorizedShape::matrix(n, NOTES)?,
            &[],
            glorot_std(n, NOTES),
            true,
            s(1),
        )?;
        let output = FactorizedLinear::init(
            Kind::Dense,
            &TensorizedShape::matrix(NOTES, m)?,
            &[],
            glorot_std(NOTES, m),
            true,
            s(2),
        )?;
        let cell = GruWeights::init(&layout, s(3))?;
        GruModel::from_parts(spec.clone(), input, cell, output)
    }

    pub fn from_parts(
        spec: ModelSpec,
        input: FactorizedLinear,
        cell: GruWeights,
        output: FactorizedLinear,
    ) -> Result<Self> {
        spec.validate()?;
        let (n, m) = (spec.input_size, spec.hidden_size);
        let checks = [
            ("input projection", input.in_dim(), input.out_dim(), NOTES, n),
            ("GRU", cell.xr.in_dim(), cell.xr.out_dim(), n, m),
            ("output layer", output.in_dim(), output.out_dim(), m, NOTES),
        ];
        for (name, i, o, want_i, want_o) in checks {
            if i != want_i || o != want_o {
                return Err(Error::shape(format!(
                    "{name} maps {i} -> {o}, expected {want_i} -> {want_o}"
                )));
            }
        }
        if cell.operators().iter().any(|(_, op)| op.kind() != spec.kind) {
            return Err(Error::config(format!(
                "GRU operators are not all of kind {}",
                spec.kind
            )));
        }
        Ok(GruModel {
            spec,
            input,
            cell,
            output,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Every trainable slice: input projection, the six GRU operators, output layer.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.input.params();
        v.extend(self.cell.params());
        v.extend(self.output.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.input.params_mut();
        v.extend(self.cell.params_mut());
        v.extend(self.output.params_mut());
        v
    }

    pub fn zeros_like(&self) -> Self {
        GruModel {
            spec: self.spec.clone(),
            input: self.input.zeros_like(),
            cell: self.cell.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Copy whose GRU operators are materialized dense matrices.
    pub fn to_dense(&self) -> Self {
        let mut spec = self.spec.clone();
        spec.kind = Kind::Dense;
        spec.ranks.clear();
        GruModel {
            spec,
            input: self.input.clone(),
            cell: self.cell.to_dense(),
            output: self.output.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn leaky(&self, a: f64) -> f64 {
        if a > 0.0 {
            a
        } else {
            self.spec.leaky_slope * a
        }
    }

    fn forward(&self, inputs: &[Vec<f64>], mut dropout: Option<&mut Dropout>) -> Result<Vec<StepTrace>> {
        let mut h = vec![0.0; self.spec.hidden_size];
        let mut trace = Vec::with_capacity(inputs.len());
        for x in inputs {
            let pre = self.input.apply(x)?;
            let mut u: Vec<f64> = pre.iter().map(|&a| self.leaky(a)).collect();
            let mut input_mask = None;
            let mut hidden_mask = None;
            if let Some(d) = dropout.as_deref_mut() {
                match d.placement {
                    DropoutPlacement::CellInput => {
                        let mask = d.mask(u.len());
                        for (v, k) in u.iter_mut().zip(&mask) {
                            *v *= k;
                        }
                        input_mask = Some(mask);
                    }
                    DropoutPlacement::HiddenOutput => hidden_mask = Some(d.mask(h.len())),
                }
            }
            let (h_next, cache) = self.cell.forward(&u, &h)?;
            h = h_next;
            let readout = match &hidden_mask {
                Some(mask) => h.iter().zip(mask).map(|(a, b)| a * b).collect(),
                None => h.clone(),
            };
            let probs = self.output.apply(&readout)?.into_iter().map(sigmoid).collect();
            trace.push(StepTrace {
                x: x.clone(),
                pre,
                input_mask,
                cache,
                readout,
                hidden_mask,
                probs,
            });
        }
        Ok(trace)
    }

    /// Predicted note probabilities for every step of `inputs` (no dropout).
    pub fn predict_sequence(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(inputs, None)?.into_iter().map(|s| s.probs).collect())
    }

    /// Summed (not averaged) clamped BCE of the predictions for `inputs`
    /// against `targets`. `scale · ∂loss/∂θ` is added into `grad`.
    pub fn loss_and_grad(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        dropout: Option<&mut Dropout>,
        scale: f64,
        grad: &mut GruModel,
    ) -> Result<f64> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} input frames but {} target frames",
                inputs.len(),
                targets.len()
            )));
        }
        let trace = self.forward(inputs, dropout)?;
        let mut loss = 0.0;
        for (step, y) in trace.iter().zip(targets) {
            if y.len() != NOTES {
                return Err(Error::shape(format!("target frame of length {}", y.len())));
            }
            loss += step.probs.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>();
        }

        let m = self.spec.hidden_size;
        let mut dh_next = vec![0.0; m];
        for (step, y) in trace.iter().zip(targets).rev() {
            let dlogit: Vec<f64> = step
                .probs
                .iter()
                .zip(y)
                .map(|(&p, &y)| scale * bce_logit_grad(p, y))
                .collect();
            let mut dh = self.output.accumulate_vjp(&step.readout, &dlogit, &mut grad.output)?;
            if let Some(mask) = &step.hidden_mask {
                for (g, k) in dh.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            for (g, n) in dh.iter_mut().zip(&dh_next) {
                *g += n;
            }
            let (mut du, dh_prev) = self.cell.backward(&step.cache, &dh, &mut grad.cell)?;
            dh_next = dh_prev;
            if let Some(mask) = &step.input_mask {
                for (g, k) in du.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            for (g, &a) in du.iter_mut().zip(&step.pre) {
                if a <= 0.0 {
                    *g *= self.spec.leaky_slope;
                }
            }
            self.input.accumulate_vjp(&step.x, &du, &mut grad.input)?;
        }
        Ok(loss)
    }

    /// Per-operator parameter audit.
    pub fn audit(&self) -> ParamAudit {
        let mut rows = vec![OperatorCount::of("input", &self.input)];
        rows.extend(
            self.cell
                .operators()
                .iter()
                .map(|(name, op)| OperatorCount::of(name, op)),
        );
        rows.push(OperatorCount::of("output", &self.output));
        let (n, m) = (self.spec.input_size, self.spec.hidden_size);
        let dense_cell = 3 * (m * n + m * m + m);
        let cell_total = self.cell.param_count_with_bias();
        ParamAudit {
            kind: self.spec.kind,
            operators: rows,
            cell_weights: self.cell.param_count(),
            cell_total,
            dense_cell_total: dense_cell,
            compression_ratio: dense_cell as f64 / cell_total as f64,
            model_total: self.params().iter().map(|s| s.len()).sum(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelFile {
            spec: self.spec.clone(),
            operators: ModelOperators {
                input: self.input.clone(),
                xr: self.cell.xr.clone(),
                hr: self.cell.hr.clone(),
                xz: self.cell.xz.clone(),
                hz: self.cell.hz.clone(),
                xh: self.cell.xh.clone(),
                hh: self.cell.hh.clone(),
                output: self.output.clone(),
            },
        };
        serde_json::to_string(&doc).map_err(|e| {
            if self.all_finite() {
                Error::from(e)
            } else {
                Error::Numerical("cannot save a model holding NaN or infinite values".into())
            }
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelFile = serde_json::from_str(s)?;
        let o = doc.operators;
        let cell = GruWeights::new([o.xr, o.hr, o.xz, o.hz, o.xh, o.hh])?;
        GruModel::from_parts(doc.spec, o.input, cell, o.output)
    }
}

/// On-disk model: `{"spec": {...}, "operators": {"input": ..., "xr": ..., ..., "output": ...}}`
/// where each operator uses the [`FactorizedLinear`] JSON form.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    spec: ModelSpec,
    operators: ModelOperators,
}

#[derive(Serialize, Deserialize)]
struct ModelOperators {
    input: FactorizedLinear,
    xr: FactorizedLinear,
    hr: FactorizedLinear,
    xz: FactorizedLinear,
    hz: FactorizedLinear,
    xh: FactorizedLinear,
    hh: FactorizedLinear,
    output: FactorizedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorCount {
    pub name: String,
    pub kind: Kind,
    pub rows: usize,
    pub cols: usize,
    pub ranks: Vec<usize>,
    pub weights: usize,
    pub bias: usize,
}

impl OperatorCount {
    fn of(name: &str, op: &FactorizedLinear) -> Self {
        OperatorCount {
            name: name.to_string(),
            kind: op.kind(),
            rows: op.out_dim(),
            cols: op.in_dim(),
            ranks: op.ranks(),
            weights: op.param_count(),
            bias: op.bias().map_or(0, <[f64]>::len),
        }
    }
}

/// Parameter counts of a model. The GRU totals mirror the usual table
/// convention: six weight matrices plus three gate biases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamAudit {
    pub kind: Kind,
    pub operators: Vec<OperatorCount>,
    /// GRU weight scalars, biases excluded.
    pub cell_weights: usize,
    /// GRU weights plus gate biases.
    pub cell_total: usize,
    /// `cell_total` of an uncompressed GRU of the same sizes.
    pub dense_cell_total: usize,
    pub compression_ratio: f64,
    /// Everything trainable, including the dense input and output layers.
    pub model_total: usize,
}
