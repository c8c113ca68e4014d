//! Deterministic AdamW with cosine learning-rate annealing and global
//! gradient-norm clipping.
//!
//! Clipping is applied to the raw gradient before the moment updates, decay
//! is decoupled, and frozen parameters are never touched. Updates iterate in
//! sorted name order, so trajectories are bit-reproducible.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::autodiff::GradMap;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimHyper {
    pub base_lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl OptimHyper {
    pub fn with_lr(base_lr: f64) -> Self {
        OptimHyper {
            base_lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

/// base_lr * (1 + cos(pi * t / total)) / 2, annealing to exactly 0 at
/// t = total.
pub fn cosine_lr(t: usize, total: usize, base_lr: f64) -> Result<f64> {
    if t > total {
        return Err(Error::InvalidConfig(alloc::format!(
            "cosine_lr step {t} past horizon {total}"
        )));
    }
    let phase = core::f64::consts::PI * t as f64 / total as f64;
    Ok(base_lr * 0.5 * (1.0 + libm::cos(phase)))
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub t: usize,
    pub total_steps: usize,
    pub hyper: OptimHyper,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new(hyper: OptimHyper, total_steps: usize) -> Self {
        OptimState {
            t: 0,
            total_steps,
            hyper,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Learning rate the next `step` call will use (cosine-annealed so the
    /// first step runs at the full base rate).
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.t, self.total_steps, self.hyper.base_lr).unwrap_or(0.0)
    }

    /// One AdamW step over the unfrozen parameters.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        // Global norm over unfrozen entries, then a single scale factor.
        let mut norm_sq = 0.0;
        for (name, entry) in params.iter() {
            if entry.frozen {
                continue;
            }
            let g = grads.get(name).ok_or_else(|| Error::MissingParam {
                name: name.clone(),
            })?;
            for &x in g.data() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteGradient { name: name.clone() });
                }
                norm_sq += x * x;
            }
        }
        let norm = libm::sqrt(norm_sq);
        let clip_scale = if norm > self.hyper.clip_norm {
            self.hyper.clip_norm / norm
        } else {
            1.0
        };

        let lr = cosine_lr(self.t, self.total_steps, self.hyper.base_lr)?;
        self.t += 1;
        let (b1, b2) = self.hyper.betas;
        let bc1 = 1.0 - libm::pow(b1, self.t as f64);
        let bc2 = 1.0 - libm::pow(b2, self.t as f64);

        let names: alloc::vec::Vec<String> = params
            .iter()
            .filter(|(_, e)| !e.frozen)
            .map(|(n, _)| n.clone())
            .collect();
        for name in names {
            let entry = params.get(&name)?;
            let shape = entry.tensor.shape().to_vec();
            let g = &grads[&name];
            if g.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "optim_step",
                    left: shape,
                    right: g.shape().to_vec(),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape.clone()));

            let mut new_values = entry.tensor.data().to_vec();
            for i in 0..new_values.len() {
                let gi = g.data()[i] * clip_scale;
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let mut x = new_values[i];
                x -= lr * self.hyper.weight_decay * x;
                x -= lr * m_hat / (libm::sqrt(v_hat) + self.hyper.eps);
                new_values[i] = x;
            }
            let updated = Tensor::from_vec(entry.tensor.shape().to_vec(), new_values)?;
            if !updated.all_finite() {
                return Err(Error::NonFiniteGradient { name });
            }
            params.set_tensor(&name, updated)?;
        }
        Ok(())
    }
}
