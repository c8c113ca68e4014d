//! Named parameter collections.
//!
//! A `ParamSet` is the unit that checkpoints, quantizers, optimizers, and
//! unlearning methods all operate on: a sorted map from name to matrix plus
//! per-entry frozen/kind metadata. Sorted iteration keeps every reduction
//! over parameters bit-reproducible.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ParamKind {
    Base,
    AdapterA,
    AdapterB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub frozen: bool,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, frozen: bool, kind: ParamKind) {
        self.entries.insert(
            String::from(name),
            ParamEntry {
                tensor,
                frozen,
                kind,
            },
        );
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries.get(name).ok_or_else(|| Error::MissingParam {
            name: String::from(name),
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.tensor)
    }

    /// Replace the tensor of an existing entry, keeping its metadata.
    pub fn set_tensor(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam {
                name: String::from(name),
            })?;
        entry.tensor = tensor;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam {
                name: String::from(name),
            })?;
        entry.frozen = frozen;
        Ok(())
    }

    /// Freeze every entry, then unfreeze the ones the predicate selects.
    pub fn set_trainable<F: Fn(&str, &ParamEntry) -> bool>(&mut self, trainable: F) {
        // Two passes so the predicate sees the original flags.
        let names: Vec<String> = self.entries.keys().cloned().collect();
        let selected: Vec<bool> = names
            .iter()
            .map(|n| trainable(n, &self.entries[n]))
            .collect();
        for (name, sel) in names.iter().zip(selected) {
            self.entries.get_mut(name).unwrap().frozen = !sel;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iteration is in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter().filter(|(_, e)| !e.frozen)
    }

    pub fn has_adapters(&self) -> bool {
        self.entries
            .values()
            .any(|e| matches!(e.kind, ParamKind::AdapterA | ParamKind::AdapterB))
    }

    /// Total element count across entries the filter selects.
    pub fn element_count<F: Fn(&str, &ParamEntry) -> bool>(&self, filter: F) -> usize {
        self.iter()
            .filter(|(n, e)| filter(n, e))
            .map(|(_, e)| e.tensor.len())
            .sum()
    }

    /// Concatenate selected entries into one flat vector, sorted name order.
    pub fn flatten<F: Fn(&str, &ParamEntry) -> bool>(&self, filter: F) -> Vec<f64> {
        let mut out = Vec::new();
        for (name, entry) in self.iter() {
            if filter(name, entry) {
                out.extend_from_slice(entry.tensor.data());
            }
        }
        out
    }

    /// Inverse of `flatten`: write a flat vector back into the selected
    /// entries of a copy of `self`, in the same sorted order.
    pub fn unflatten<F: Fn(&str, &ParamEntry) -> bool>(
        &self,
        filter: F,
        flat: &[f64],
    ) -> Result<ParamSet> {
        let mut out = self.clone();
        let mut offset = 0;
        for (name, entry) in self.iter() {
            if filter(name, entry) {
                let n = entry.tensor.len();
                if offset + n > flat.len() {
                    return Err(Error::InvalidConfig(String::from(
                        "flat vector shorter than selected parameters",
                    )));
                }
                let tensor = Tensor::from_vec(
                    entry.tensor.shape().to_vec(),
                    flat[offset..offset + n].to_vec(),
                )?;
                out.set_tensor(name, tensor)?;
                offset += n;
            }
        }
        if offset != flat.len() {
            return Err(Error::InvalidConfig(String::from(
                "flat vector longer than selected parameters",
            )));
        }
        Ok(out)
    }

    /// Euclidean distance between two sets over the selected entries.
    pub fn l2_distance<F: Fn(&str, &ParamEntry) -> bool>(
        &self,
        other: &ParamSet,
        filter: F,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for (name, entry) in self.iter() {
            if !filter(name, entry) {
                continue;
            }
            let o = other.tensor(name)?;
            if o.shape() != entry.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "l2_distance",
                    left: entry.tensor.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
            for (a, b) in entry.tensor.data().iter().zip(o.data()) {
                let d = a - b;
                acc += d * d;
            }
        }
        Ok(libm::sqrt(acc))
    }
}
