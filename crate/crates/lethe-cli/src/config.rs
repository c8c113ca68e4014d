//! Experiment configuration: one JSON document drives dataset generation,
//! pretraining, unlearning, evaluation, attacks, and sweeps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lethe_core::data::DatasetConfig;
use lethe_core::eval::{EvalConfig, Precision};
use lethe_core::model::ModelConfig;
use lethe_core::optim::OptimHyper;
use lethe_core::quant::{QuantScope, QuantSpec};
use lethe_core::unlearn::{MethodConfig, PretrainConfig, RunConfig, TrainScope};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSection {
    pub entity_vocab: usize,
    pub attribute_vocab: usize,
    pub value_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub adapter_rank: usize,
    pub adapter_scale: f64,
}

impl ModelSection {
    /// Bind the architecture to a run seed (the seed drives initialization).
    pub fn with_seed(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            entity_vocab: self.entity_vocab,
            attribute_vocab: self.attribute_vocab,
            value_vocab: self.value_vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            adapter_rank: self.adapter_rank,
            adapter_scale: self.adapter_scale,
            seed,
        }
    }
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimSection {
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

impl OptimSection {
    pub fn hyper(&self) -> OptimHyper {
        OptimHyper {
            base_lr: self.lr,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimSection,
    #[serde(default)]
    pub train_adapters: bool,
}

impl PretrainSection {
    pub fn with_seed(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            opt: self.optim.hyper(),
            train_adapters: self.train_adapters,
        }
    }
}

fn default_train_scope() -> TrainScope {
    TrainScope::AdaptersOnly
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UnlearnSection {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimSection,
    #[serde(default = "default_train_scope")]
    pub train_scope: TrainScope,
}

impl UnlearnSection {
    pub fn with_seed(&self, seed: u64) -> RunConfig {
        RunConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            seed,
            train_scope: self.train_scope,
            opt: self.optim.hyper(),
            record_fa_every: None,
            capture_at: Vec::new(),
        }
    }
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_precisions() -> Vec<Precision> {
    vec![Precision::Full, Precision::Int8, Precision::Int4]
}
fn default_quant_scope() -> QuantScope {
    QuantScope::AdaptersOnly
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_precisions")]
    pub precisions: Vec<Precision>,
    /// Which weights the deployment quantizer perturbs.
    #[serde(default = "default_quant_scope")]
    pub quant_scope: QuantScope,
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            int4: QuantSpec::int4(self.quant_scope),
            int8: QuantSpec::int8(self.quant_scope),
            precisions: self.precisions.clone(),
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// One run per method and seed (the default experiment grid).
    Methods,
    /// SAF alpha_max grid; writes the frontier CSV.
    Alpha,
    /// SAF lambda grid at the configured alpha_max.
    Lambda,
    /// SAF with and without the warmup phase.
    Warmup,
    /// SAF straight-through scope: adapters-only vs all-trainable.
    SteScope,
    /// All three ablation axes (warmup, ste-scope, lambda).
    Ablations,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepSection {
    /// alpha_max grid for the Pareto sweep.
    pub alpha_values: Vec<f64>,
    /// lambda grid for the sensitivity ablation.
    #[serde(default)]
    pub lambda_values: Vec<f64>,
    /// Retain weight pinned across the alpha sweep; when absent each point
    /// uses the lambda rule max(1, alpha + 1).
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Learning-rate override for sweep runs (the arm default otherwise).
    #[serde(default)]
    pub lr: Option<f64>,
    /// Seed the sweeps run on (first experiment seed when absent).
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FinetuneSection {
    pub steps: usize,
    pub batch_size: usize,
    pub record_every: usize,
    pub optim: OptimSection,
    #[serde(default = "default_train_scope")]
    pub scope: TrainScope,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct AttackSection {
    #[serde(default)]
    pub quant: bool,
    #[serde(default)]
    pub adapter_vs_merged: bool,
    #[serde(default)]
    pub finetune: Option<FinetuneSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub output_dir: String,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    /// Disjoint-entity corpus for the fine-tuning attack.
    #[serde(default)]
    pub unrelated: Option<DatasetConfig>,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub unlearn: UnlearnSection,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_eval_section")]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub attacks: AttackSection,
}

fn default_eval_section() -> EvalSection {
    EvalSection {
        epsilon: default_epsilon(),
        precisions: default_precisions(),
        quant_scope: default_quant_scope(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "config field schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            );
        }
        if self.seeds.is_empty() {
            bail!("config field seeds: at least one seed is required");
        }
        if self.methods.is_empty() {
            bail!("config field methods: at least one method is required");
        }
        self.dataset
            .validate()
            .map_err(|e| anyhow::anyhow!("config field dataset: {e}"))?;
        if let Some(u) = &self.unrelated {
            u.validate()
                .map_err(|e| anyhow::anyhow!("config field unrelated: {e}"))?;
            let main_end = self.dataset.entity_offset + self.dataset.entities;
            if u.entity_offset < main_end && u.entity_offset + u.entities > self.dataset.entity_offset
            {
                bail!("config field unrelated: entity range overlaps the main dataset");
            }
            if u.entity_offset + u.entities > self.model.entity_vocab {
                bail!("config field unrelated: entity range exceeds model entity_vocab");
            }
        }
        if self.dataset.entity_offset + self.dataset.entities > self.model.entity_vocab {
            bail!("config field dataset: entity range exceeds model entity_vocab");
        }
        if self.dataset.attributes > self.model.attribute_vocab {
            bail!("config field dataset: attributes exceed model attribute_vocab");
        }
        if self.dataset.value_vocab != self.model.value_vocab {
            bail!("config field dataset: value_vocab must match the model");
        }
        self.model
            .with_seed(0)
            .validate()
            .map_err(|e| anyhow::anyhow!("config field model: {e}"))?;
        for m in &self.methods {
            m.validate(self.unlearn.steps)
                .map_err(|e| anyhow::anyhow!("config field methods: {e}"))?;
        }
        if !(0.0..=1.0).contains(&self.eval.epsilon) {
            bail!("config field eval.epsilon: must lie in [0, 1]");
        }
        Ok(())
    }

    /// Content hash of the whole config; any field change changes it.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex_digest(canonical.as_bytes())
    }

    /// Hash of everything a pretrained checkpoint depends on.
    pub fn pretrain_fingerprint(&self, seed: u64) -> String {
        let key = serde_json::json!({
            "dataset": &self.dataset,
            "model": &self.model,
            "pretrain": &self.pretrain,
            "seed": seed,
        });
        hex_digest(key.to_string().as_bytes())
    }

    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os("LETHE_OUTPUT_ROOT") {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => PathBuf::from(&self.output_dir),
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lethe_core::unlearn::Method;

    pub(crate) fn sample_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "sample".into(),
            output_dir: "out/sample".into(),
            seeds: vec![42],
            dataset: DatasetConfig {
                entities: 30,
                attributes: 4,
                value_vocab: 16,
                forget_entities: 4,
                holdout_entities: 4,
                entity_offset: 0,
                seed: 7,
            },
            unrelated: None,
            model: ModelSection {
                entity_vocab: 30,
                attribute_vocab: 4,
                value_vocab: 16,
                embed_dim: 8,
                hidden_dim: 16,
                adapter_rank: 2,
                adapter_scale: 2.0,
            },
            pretrain: PretrainSection {
                epochs: 2,
                batch_size: 8,
                optim: OptimSection {
                    lr: 3e-3,
                    betas: default_betas(),
                    eps: default_eps(),
                    weight_decay: 0.0,
                    clip_norm: default_clip(),
                },
                train_adapters: false,
            },
            unlearn: UnlearnSection {
                steps: 10,
                batch_size: 4,
                optim: OptimSection {
                    lr: 1e-3,
                    betas: default_betas(),
                    eps: default_eps(),
                    weight_decay: default_weight_decay(),
                    clip_norm: default_clip(),
                },
                train_scope: TrainScope::AdaptersOnly,
            },
            methods: vec![MethodConfig::new(Method::Ga)],
            eval: default_eval_section(),
            sweep: None,
            attacks: AttackSection::default(),
        }
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = sample_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn fingerprint_changes_with_any_field() {
        let cfg = sample_config();
        let fp = cfg.fingerprint();
        let mut tweaked = cfg.clone();
        tweaked.unlearn.steps += 1;
        assert_ne!(fp, tweaked.fingerprint());
        let mut tweaked2 = cfg.clone();
        tweaked2.seeds = vec![43];
        assert_ne!(fp, tweaked2.fingerprint());
        assert_eq!(fp, sample_config().fingerprint());
    }

    #[test]
    fn validation_names_bad_field() {
        let mut cfg = sample_config();
        cfg.dataset.value_vocab = 8; // mismatch with model
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("value_vocab"), "{err}");

        let mut cfg2 = sample_config();
        cfg2.schema_version = 99;
        let err2 = cfg2.validate().unwrap_err().to_string();
        assert!(err2.contains("schema_version"), "{err2}");
    }

    #[test]
    fn warmup_longer_than_run_is_rejected() {
        let mut cfg = sample_config();
        cfg.methods = vec![MethodConfig::saf_with(1.0)]; // t_w = 100 > 10 steps
        assert!(cfg.validate().is_err());
    }
}
