//! Simulated symmetric weight quantization.
//!
//! Weights are snapped to a signed integer grid and immediately dequantized,
//! so the perturbation of low-bit deployment is applied while storage stays
//! f64. INT4 defaults to per-row scales (s_r = row max / 7), INT8 to one
//! global scale over the whole scope (s = max / 127). Rounding is
//! half-away-from-zero, which keeps the grid symmetric: Q(-W) = -Q(W).
//!
//! Grid endpoints dequantize to exactly the scale-defining maximum (the
//! real-arithmetic value of divisor * (max / divisor)), so the row maximum is
//! preserved and quantization is exactly idempotent.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{ParamEntry, ParamKind, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Granularity {
    PerRow,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
}

/// Which entries of a `ParamSet` the simulator perturbs.
///
/// Scope selection ignores frozen flags: `AllTrainable` covers every weight
/// the training-time model form carries (base and adapters), matching a
/// deployment that quantizes the whole artifact, while `AdaptersOnly`
/// perturbs just the adapter patch. `MergedModel` is the same full selection
/// but named for use on sets whose adapters were merged away. `None` is the
/// identity control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum QuantScope {
    AdaptersOnly,
    AllTrainable,
    MergedModel,
    None,
}

impl QuantScope {
    pub fn selects(&self, entry: &ParamEntry) -> bool {
        match self {
            QuantScope::AdaptersOnly => {
                matches!(entry.kind, ParamKind::AdapterA | ParamKind::AdapterB)
            }
            QuantScope::AllTrainable | QuantScope::MergedModel => true,
            QuantScope::None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantSpec {
    pub bits: u8,
    pub granularity: Granularity,
    #[cfg_attr(feature = "serde", serde(default))]
    pub rounding: Rounding,
    pub scope: QuantScope,
}

impl QuantSpec {
    /// INT4: per-row scales.
    pub fn int4(scope: QuantScope) -> Self {
        QuantSpec {
            bits: 4,
            granularity: Granularity::PerRow,
            rounding: Rounding::HalfAwayFromZero,
            scope,
        }
    }

    /// INT8: one scale across the whole scope.
    pub fn int8(scope: QuantScope) -> Self {
        QuantSpec {
            bits: 8,
            granularity: Granularity::Global,
            rounding: Rounding::HalfAwayFromZero,
            scope,
        }
    }

    /// 2^(bits-1) - 1: 7 for INT4, 127 for INT8.
    pub fn divisor(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits != 4 && self.bits != 8 {
            return Err(Error::InvalidConfig(alloc::format!(
                "quant bits must be 4 or 8, got {}",
                self.bits
            )));
        }
        Ok(())
    }
}

/// Perturbation norms between a set and its quantized image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStats {
    /// Max absolute per-element perturbation.
    pub delta_inf: f64,
    /// Euclidean norm of the perturbation over the scope.
    pub delta_2: f64,
    /// delta_2 / l2 norm of the original in-scope values.
    pub relative_2: f64,
}

/// Snap one slice of weights to the grid defined by `scale`.
///
/// The clamp never binds for the scope that defined `scale`; it guards the
/// last-ulp case where division rounds the maximum just past the divisor.
fn snap(values: &[f64], scale: f64, scale_max: f64, divisor: f64, out: &mut Vec<f64>) {
    for &w in values {
        let q = libm::round(w / scale);
        let q = q.clamp(-divisor, divisor);
        let dq = if q == divisor {
            scale_max
        } else if q == -divisor {
            -scale_max
        } else {
            q * scale
        };
        out.push(dq);
    }
}

/// Quantize a matrix with per-row scales. Zero rows pass through unchanged.
pub fn quantize_rows(m: &Tensor, divisor: f64) -> Tensor {
    let rows = m.rows();
    let cols = m.cols();
    let mut out = Vec::with_capacity(m.len());
    for r in 0..rows {
        let row = &m.data()[r * cols..(r + 1) * cols];
        let max = row.iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)));
        if max == 0.0 {
            out.extend_from_slice(row);
            continue;
        }
        let scale = max / divisor;
        snap(row, scale, max, divisor, &mut out);
    }
    Tensor::from_vec(m.shape().to_vec(), out).expect("shape preserved")
}

/// Quantize a matrix with a fixed scale computed elsewhere (global mode).
/// `scale_max` is the value grid endpoints dequantize to (divisor * scale in
/// real arithmetic). A zero scale passes values through unchanged.
pub fn quantize_fixed(m: &Tensor, scale: f64, scale_max: f64, divisor: f64) -> Tensor {
    if scale == 0.0 {
        return m.clone();
    }
    let mut out = Vec::with_capacity(m.len());
    snap(m.data(), scale, scale_max, divisor, &mut out);
    Tensor::from_vec(m.shape().to_vec(), out).expect("shape preserved")
}

/// Largest absolute value over the in-scope entries.
pub fn scope_max_abs(params: &ParamSet, scope: QuantScope) -> f64 {
    let mut max = 0.0f64;
    for (_, entry) in params.iter() {
        if scope.selects(entry) {
            max = max.max(entry.tensor.max_abs());
        }
    }
    max
}

/// Simulated quantization of every in-scope matrix; out-of-scope entries are
/// returned unchanged. Rows (or a whole scope) with zero maximum pass
/// through exactly — zeros are already on the grid.
pub fn quantize(params: &ParamSet, spec: &QuantSpec) -> Result<ParamSet> {
    spec.validate()?;
    let divisor = spec.divisor();
    let mut out = params.clone();
    match spec.granularity {
        Granularity::PerRow => {
            for (name, entry) in params.iter() {
                if spec.scope.selects(entry) {
                    out.set_tensor(name, quantize_rows(&entry.tensor, divisor))?;
                }
            }
        }
        Granularity::Global => {
            let max = scope_max_abs(params, spec.scope);
            if max == 0.0 {
                return Ok(out);
            }
            let scale = max / divisor;
            for (name, entry) in params.iter() {
                if spec.scope.selects(entry) {
                    out.set_tensor(name, quantize_fixed(&entry.tensor, scale, max, divisor))?;
                }
            }
        }
    }
    Ok(out)
}

/// Perturbation norms of `quantized` against `original` over `scope`.
pub fn noise_stats(
    original: &ParamSet,
    quantized: &ParamSet,
    scope: QuantScope,
) -> Result<NoiseStats> {
    let mut delta_inf = 0.0f64;
    let mut delta_sq = 0.0f64;
    let mut orig_sq = 0.0f64;
    for (name, entry) in original.iter() {
        if !scope.selects(entry) {
            continue;
        }
        let q = quantized.tensor(name)?;
        if q.shape() != entry.tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "noise_stats",
                left: entry.tensor.shape().to_vec(),
                right: q.shape().to_vec(),
            });
        }
        for (a, b) in entry.tensor.data().iter().zip(q.data()) {
            let d = libm::fabs(a - b);
            delta_inf = delta_inf.max(d);
            delta_sq += d * d;
            orig_sq += a * a;
        }
    }
    let delta_2 = libm::sqrt(delta_sq);
    let norm = libm::sqrt(orig_sq);
    let relative_2 = if norm > 0.0 { delta_2 / norm } else { 0.0 };
    Ok(NoiseStats {
        delta_inf,
        delta_2,
        relative_2,
    })
}

/// Wrap in-scope parameter nodes with straight-through quantization.
///
/// Forward values equal `quantize(params, spec)` bit-for-bit; the backward
/// pass treats the rounding as identity, so gradients reach the underlying
/// leaves unchanged. Out-of-scope nodes are passed through as-is.
pub fn ste_wrap(
    tape: &mut Tape,
    nodes: &alloc::collections::BTreeMap<String, NodeId>,
    params: &ParamSet,
    spec: &QuantSpec,
) -> Result<alloc::collections::BTreeMap<String, NodeId>> {
    spec.validate()?;
    let divisor = spec.divisor();
    let global = match spec.granularity {
        Granularity::Global => {
            let max = scope_max_abs(params, spec.scope);
            Some((max / divisor, max))
        }
        Granularity::PerRow => None,
    };
    let mut out = alloc::collections::BTreeMap::new();
    for (name, entry) in params.iter() {
        let node = *nodes.get(name).ok_or_else(|| Error::MissingParam {
            name: name.clone(),
        })?;
        let wrapped = if spec.scope.selects(entry) {
            let qvalue = match global {
                Some((scale, max)) => {
                    if max == 0.0 {
                        entry.tensor.clone()
                    } else {
                        quantize_fixed(&entry.tensor, scale, max, divisor)
                    }
                }
                None => quantize_rows(&entry.tensor, divisor),
            };
            tape.ste_quant(node, qvalue)?
        } else {
            node
        };
        out.insert(name.clone(), wrapped);
    }
    Ok(out)
}
