//! Synthetic fact dataset.
//!
//! Every (entity, attribute) pair is assigned an independently drawn value
//! token, so the attribute alone carries no information about the value and
//! the only route to accuracy is memorization. Forgetting is entity-level:
//! the forget split holds every fact of the designated forget entities.
//! Holdout entities are never trained and serve as the membership-inference
//! non-member population.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fact {
    pub entity: usize,
    pub attribute: usize,
    pub value: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Split {
    Forget,
    Retain,
    Holdout,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetConfig {
    pub entities: usize,
    pub attributes: usize,
    pub value_vocab: usize,
    pub forget_entities: usize,
    pub holdout_entities: usize,
    /// First entity token; lets a second dataset occupy a disjoint entity
    /// range of the same embedding table (the unrelated fine-tuning corpus).
    #[cfg_attr(feature = "serde", serde(default))]
    pub entity_offset: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entities == 0 || self.attributes == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "entities and attributes must be positive",
            )));
        }
        if self.value_vocab < 2 {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "value_vocab must be at least 2",
            )));
        }
        if self.forget_entities + self.holdout_entities >= self.entities {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "forget_entities + holdout_entities must be less than entities",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactDataset {
    facts: Vec<Fact>,
    splits: Vec<Split>,
    pub seed: u64,
}

impl FactDataset {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn fact(&self, idx: usize) -> Fact {
        self.facts[idx]
    }

    pub fn split_of(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    pub fn split(&self, which: Split) -> Vec<Fact> {
        self.facts
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(f, _)| *f)
            .collect()
    }

    /// Forget and retain facts together: everything the model trains on.
    pub fn trained(&self) -> Vec<Fact> {
        self.facts
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| !matches!(s, Split::Holdout))
            .map(|(f, _)| *f)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Fact, Split)> + '_ {
        self.facts.iter().zip(&self.splits).map(|(f, s)| (*f, *s))
    }
}

/// Deterministically generate a dataset. Entity layout within
/// [offset, offset + entities): forget entities first, then retain, with the
/// holdout block at the end.
pub fn generate(cfg: &DatasetConfig) -> Result<FactDataset> {
    cfg.validate()?;
    let mut rng = Rng::new(Rng::derive(cfg.seed, "fact-values"));
    let mut facts = Vec::with_capacity(cfg.entities * cfg.attributes);
    let mut splits = Vec::with_capacity(cfg.entities * cfg.attributes);
    let holdout_start = cfg.entities - cfg.holdout_entities;
    for e in 0..cfg.entities {
        let split = if e < cfg.forget_entities {
            Split::Forget
        } else if e < holdout_start {
            Split::Retain
        } else {
            Split::Holdout
        };
        for a in 0..cfg.attributes {
            facts.push(Fact {
                entity: cfg.entity_offset + e,
                attribute: a,
                value: rng.below(cfg.value_vocab),
            });
            splits.push(split);
        }
    }
    Ok(FactDataset {
        facts,
        splits,
        seed: cfg.seed,
    })
}

/// Seeded shuffled cycling over a split: each epoch reshuffles and yields
/// batches of `batch_size` (the last batch of an epoch may be shorter).
#[derive(Debug, Clone)]
pub struct BatchSampler {
    facts: Vec<Fact>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: Rng,
}

impl BatchSampler {
    pub fn new(facts: Vec<Fact>, batch_size: usize, seed: u64) -> Result<Self> {
        if facts.is_empty() {
            return Err(Error::EmptySplit { what: "sampler split" });
        }
        if batch_size == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "batch_size must be positive",
            )));
        }
        let mut rng = Rng::new(seed);
        let mut order: Vec<usize> = (0..facts.len()).collect();
        rng.shuffle(&mut order);
        Ok(BatchSampler {
            facts,
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<Fact> {
        if self.cursor >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| self.facts[i])
            .collect();
        self.cursor = end;
        batch
    }
}
