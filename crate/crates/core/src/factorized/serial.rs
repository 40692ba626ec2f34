//! JSON form of a [`FactorizedLinear`]:
//!
//! ```json
//! {"kind": "tt", "m_dims": [4,4], "n_dims": [4,4], "ranks": [1,3,1],
//!  "arrays": [[...], [...]], "bias": [...]}
//! ```
//!
//! `arrays` holds every stored array flattened row-major, in this order:
//! dense `[W]`; CP `[gm_1..gm_d, gn_1..gn_d]`; Tucker `[core, gm_1..gm_d, gn_1..gn_d]`;
//! TT `[core_1..core_d]`. `bias` is `null` for operators without one. Numbers
//! are written as shortest round-trip decimals, so a save/load cycle is bit-exact.

use serde::{Deserialize, Serialize};

use super::{validate_ranks, FactorizedLinear, Kind, TensorizedShape};
use crate::error::{Error, Result};
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedLinearWire {
    pub kind: Kind,
    pub m_dims: Vec<usize>,
    pub n_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub arrays: Vec<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

impl From<&FactorizedLinear> for FactorizedLinearWire {
    fn from(op: &FactorizedLinear) -> Self {
        FactorizedLinearWire {
            kind: op.kind(),
            m_dims: op.shape().m_dims().dims().to_vec(),
            n_dims: op.shape().n_dims().dims().to_vec(),
            ranks: op.ranks(),
            arrays: op.weights.slices().into_iter().map(<[f64]>::to_vec).collect(),
            bias: op.bias.clone(),
        }
    }
}

impl TryFrom<FactorizedLinearWire> for FactorizedLinear {
    type Error = Error;

    fn try_from(w: FactorizedLinearWire) -> Result<Self> {
        let shape = TensorizedShape::new(Shape::new(w.m_dims)?, Shape::new(w.n_dims)?)?;
        validate_ranks(w.kind, &shape, &w.ranks)?;
        let mut op = FactorizedLinear::zeros(w.kind, &shape, &w.ranks, w.bias.is_some())?;
        let mut slots = op.weights.slices_mut();
        if slots.len() != w.arrays.len() {
            return Err(Error::Serde(format!(
                "{} operator needs {} arrays, found {}",
                w.kind,
                slots.len(),
                w.arrays.len()
            )));
        }
        for (k, (slot, src)) in slots.iter_mut().zip(&w.arrays).enumerate() {
            if slot.len() != src.len() {
                return Err(Error::Serde(format!(
                    "array {k} of a {} operator needs {} values, found {}",
                    w.kind,
                    slot.len(),
                    src.len()
                )));
            }
            slot.copy_from_slice(src);
        }
        if let Some(b) = w.bias {
            if b.len() != shape.rows() {
                return Err(Error::Serde(format!(
                    "bias needs {} values, found {}",
                    shape.rows(),
                    b.len()
                )));
            }
            op.bias = Some(b);
        }
        Ok(op)
    }
}

impl FactorizedLinear {
    pub fn to_json(&self) -> Result<String> {
        ensure_finite(self)?;
        Ok(serde_json::to_string(&FactorizedLinearWire::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: FactorizedLinearWire = serde_json::from_str(s)?;
        wire.try_into()
    }
}

pub(crate) fn ensure_finite(op: &FactorizedLinear) -> Result<()> {
    if op.params().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical(
            "cannot serialize an operator holding NaN or infinite values".into(),
        ));
    }
    Ok(())
}

impl Serialize for FactorizedLinear {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ensure_finite(self).map_err(serde::ser::Error::custom)?;
        FactorizedLinearWire::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FactorizedLinear {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = FactorizedLinearWire::deserialize(d)?;
        FactorizedLinear::try_from(wire).map_err(serde::de::Error::custom)
    }
}
