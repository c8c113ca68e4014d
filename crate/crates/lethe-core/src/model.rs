//! The fact-memorization network.
//!
//! Two embedding tables feed a three-layer GELU MLP that classifies
//! (entity, attribute) pairs into value tokens. Each linear layer carries an
//! optional low-rank adapter pair: h = W x + scale * B (A x), with B
//! initialized to zero so adapters start as an identity delta. The base can
//! be frozen while adapters train, mirroring a frozen quantized base with
//! trainable adapters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

pub const ENTITY_EMBED: &str = "embed.entity";
pub const ATTR_EMBED: &str = "embed.attribute";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub entity_vocab: usize,
    pub attribute_vocab: usize,
    pub value_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Adapter rank r; 0 disables adapters entirely.
    pub adapter_rank: usize,
    /// Adapter output scale (lora-alpha / r convention).
    pub adapter_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("entity_vocab", self.entity_vocab),
            ("attribute_vocab", self.attribute_vocab),
            ("value_vocab", self.value_vocab),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.adapter_scale.is_finite() {
            return Err(Error::InvalidConfig(String::from(
                "adapter_scale must be finite",
            )));
        }
        Ok(())
    }

    /// (in, out) dimensions of the three linear layers.
    fn layer_dims(&self) -> [(usize, usize); 3] {
        [
            (2 * self.embed_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, self.value_vocab),
        ]
    }
}

fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::matrix(rows, cols, data).expect("sized data")
}

/// Deterministic seeded initialization. Base weights and adapter-A matrices
/// draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); adapter-B starts at
/// zero so the initial adapter delta is exactly zero. Each tensor uses its
/// own named substream, so parameters do not depend on creation order.
pub fn init_model(cfg: &ModelConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let init = |name: &str, rows: usize, cols: usize, fan_in: usize| {
        let mut rng = Rng::new(Rng::derive(cfg.seed, name));
        uniform_init(&mut rng, rows, cols, fan_in)
    };

    params.insert(
        ENTITY_EMBED,
        init(ENTITY_EMBED, cfg.entity_vocab, cfg.embed_dim, cfg.embed_dim),
        false,
        ParamKind::Base,
    );
    params.insert(
        ATTR_EMBED,
        init(ATTR_EMBED, cfg.attribute_vocab, cfg.embed_dim, cfg.embed_dim),
        false,
        ParamKind::Base,
    );
    for (i, (d_in, d_out)) in cfg.layer_dims().into_iter().enumerate() {
        let layer = i + 1;
        let wname = format!("layer{layer}.weight");
        params.insert(&wname, init(&wname, d_out, d_in, d_in), false, ParamKind::Base);
        if cfg.adapter_rank > 0 {
            let aname = format!("layer{layer}.adapter_a");
            let bname = format!("layer{layer}.adapter_b");
            params.insert(
                &aname,
                init(&aname, cfg.adapter_rank, d_in, d_in),
                false,
                ParamKind::AdapterA,
            );
            params.insert(
                &bname,
                Tensor::zeros(alloc::vec![d_out, cfg.adapter_rank]),
                false,
                ParamKind::AdapterB,
            );
        }
    }
    Ok(params)
}

/// x W^T plus the scaled adapter delta when the node map carries one.
fn adapted_linear(
    tape: &mut Tape,
    nodes: &BTreeMap<String, NodeId>,
    x: NodeId,
    layer: usize,
    scale: f64,
) -> Result<NodeId> {
    let w = *nodes
        .get(&format!("layer{layer}.weight"))
        .ok_or_else(|| Error::MissingParam {
            name: format!("layer{layer}.weight"),
        })?;
    let base = tape.matmul_tb(x, w)?;
    let aname = format!("layer{layer}.adapter_a");
    let bname = format!("layer{layer}.adapter_b");
    match (nodes.get(&aname), nodes.get(&bname)) {
        (Some(&a), Some(&b)) => {
            let xa = tape.matmul_tb(x, a)?;
            let xab = tape.matmul_tb(xa, b)?;
            let delta = tape.scale(xab, scale)?;
            tape.add(base, delta)
        }
        (None, None) => Ok(base),
        _ => Err(Error::MissingParam {
            name: format!("layer{layer} adapter pair incomplete"),
        }),
    }
}

/// Build the forward graph for a batch of (entity, attribute) pairs on an
/// existing tape whose node map came from `Tape::register` (possibly with
/// straight-through wrappers applied). Returns the logits node.
pub fn logits_node(
    tape: &mut Tape,
    cfg: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    pairs: &[(usize, usize)],
) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::EmptySplit { what: "batch" });
    }
    let entity_table = *nodes.get(ENTITY_EMBED).ok_or_else(|| Error::MissingParam {
        name: String::from(ENTITY_EMBED),
    })?;
    let attr_table = *nodes.get(ATTR_EMBED).ok_or_else(|| Error::MissingParam {
        name: String::from(ATTR_EMBED),
    })?;
    let entities: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let attributes: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let e = tape.embed_lookup(entity_table, &entities)?;
    let a = tape.embed_lookup(attr_table, &attributes)?;
    let mut h = tape.concat_cols(e, a)?;
    h = adapted_linear(tape, nodes, h, 1, cfg.adapter_scale)?;
    h = tape.gelu(h)?;
    h = adapted_linear(tape, nodes, h, 2, cfg.adapter_scale)?;
    h = tape.gelu(h)?;
    adapted_linear(tape, nodes, h, 3, cfg.adapter_scale)
}

/// Mean softmax cross-entropy of a fact batch: the forget/retain loss.
pub fn ce_mean_node(
    tape: &mut Tape,
    cfg: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    facts: &[crate::data::Fact],
) -> Result<NodeId> {
    if facts.is_empty() {
        return Err(Error::EmptySplit { what: "batch" });
    }
    let pairs: Vec<(usize, usize)> = facts.iter().map(|f| (f.entity, f.attribute)).collect();
    let targets: Vec<usize> = facts.iter().map(|f| f.value).collect();
    let logits = logits_node(tape, cfg, nodes, &pairs)?;
    let ce = tape.softmax_cross_entropy(logits, &targets)?;
    tape.mean(ce)
}

/// Logits without gradient tracking (a throwaway tape).
pub fn logits_value(
    cfg: &ModelConfig,
    params: &ParamSet,
    pairs: &[(usize, usize)],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let logits = logits_node(&mut tape, cfg, &nodes, pairs)?;
    Ok(tape.value(logits).clone())
}

/// Mean cross-entropy of a batch without gradient tracking.
pub fn batch_loss(cfg: &ModelConfig, params: &ParamSet, facts: &[crate::data::Fact]) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let loss = ce_mean_node(&mut tape, cfg, &nodes, facts)?;
    Ok(tape.value(loss).scalar_value())
}

/// Per-example cross-entropy losses without gradient tracking.
pub fn per_example_losses(
    cfg: &ModelConfig,
    params: &ParamSet,
    facts: &[crate::data::Fact],
) -> Result<Vec<f64>> {
    if facts.is_empty() {
        return Err(Error::EmptySplit { what: "batch" });
    }
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let pairs: Vec<(usize, usize)> = facts.iter().map(|f| (f.entity, f.attribute)).collect();
    let targets: Vec<usize> = facts.iter().map(|f| f.value).collect();
    let logits = logits_node(&mut tape, cfg, &nodes, &pairs)?;
    let ce = tape.softmax_cross_entropy(logits, &targets)?;
    Ok(tape.value(ce).data().to_vec())
}

/// Fold adapter deltas into the base weights: W <- W + scale * B * A.
/// Adapter entries are removed; the forward function is preserved.
pub fn merge_adapters(cfg: &ModelConfig, params: &ParamSet) -> Result<ParamSet> {
    let mut out = params.clone();
    for layer in 1..=3 {
        let wname = format!("layer{layer}.weight");
        let aname = format!("layer{layer}.adapter_a");
        let bname = format!("layer{layer}.adapter_b");
        let (a, b) = match (params.get(&aname), params.get(&bname)) {
            (Ok(a), Ok(b)) => (a.tensor.clone(), b.tensor.clone()),
            _ => continue,
        };
        let w = params.tensor(&wname)?;
        let (out_dim, r) = (b.rows(), b.cols());
        let in_dim = a.cols();
        if a.rows() != r {
            return Err(Error::ShapeMismatch {
                op: "merge_adapters",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let delta = matmul(b.data(), a.data(), out_dim, r, in_dim);
        let merged: Vec<f64> = w
            .data()
            .iter()
            .zip(&delta)
            .map(|(wv, dv)| wv + cfg.adapter_scale * dv)
            .collect();
        out.set_tensor(&wname, Tensor::matrix(out_dim, in_dim, merged)?)?;
        out.remove(&aname);
        out.remove(&bname);
    }
    Ok(out)
}
