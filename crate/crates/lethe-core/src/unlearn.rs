//! Unlearning procedures: memorization pretraining, six baselines, and the
//! quantization-aware sharpness-aware forgetting (SAF) objective.
//!
//! SAF minimizes  -L_f(theta) - alpha(t) * L_f(Q_ste(theta)) + lambda * L_r(theta)
//! where Q_ste applies INT4 rounding in the forward pass with an identity
//! backward. alpha ramps in linearly after a pure-ascent warmup. With
//! alpha = 0 the objective degenerates to gradient difference, and with
//! alpha = lambda = 0 to plain gradient ascent; the loop builds identical
//! tapes in those cases, so the trajectories match bitwise.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{GradMap, NodeId, Tape};
use crate::data::{BatchSampler, Fact, FactDataset, Split};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{self, ModelConfig};
use crate::optim::{OptimHyper, OptimState};
use crate::params::{ParamKind, ParamSet};
use crate::quant::{self, QuantScope, QuantSpec};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    Ga,
    GradDiff,
    Npo,
    Scrub,
    SalUn,
    TaskArith,
    Saf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ga => "ga",
            Method::GradDiff => "grad-diff",
            Method::Npo => "npo",
            Method::Scrub => "scrub",
            Method::SalUn => "salun",
            Method::TaskArith => "task-arith",
            Method::Saf => "saf",
        }
    }
}

/// Which parameters an unlearning or fine-tuning run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TrainScope {
    AdaptersOnly,
    AllTrainable,
}

impl TrainScope {
    fn apply(&self, params: &mut ParamSet) {
        match self {
            TrainScope::AdaptersOnly => params.set_trainable(|_, e| {
                matches!(e.kind, ParamKind::AdapterA | ParamKind::AdapterB)
            }),
            TrainScope::AllTrainable => params.set_trainable(|_, _| true),
        }
    }
}

/// Knobs of the SAF objective itself; the shared loop knobs (steps, lr,
/// batch size, seed) live in `RunConfig`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SafConfig {
    pub alpha_max: f64,
    /// Retain weight; `None` applies the rule lambda = max(1, alpha_max + 1).
    pub lambda: Option<f64>,
    /// Warmup steps of pure ascent before the quantization-aware term ramps.
    pub t_w: usize,
    pub ste_scope: QuantScope,
}

impl Default for SafConfig {
    fn default() -> Self {
        SafConfig {
            alpha_max: 3.0,
            lambda: None,
            t_w: 100,
            ste_scope: QuantScope::AllTrainable,
        }
    }
}

impl SafConfig {
    pub fn effective_lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| (self.alpha_max + 1.0).max(1.0))
    }

    fn ste_spec(&self) -> QuantSpec {
        QuantSpec::int4(self.ste_scope)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MethodConfig {
    pub method: Method,
    /// Retain weight for grad-diff, NPO, and salun; default 1.0.
    #[cfg_attr(feature = "serde", serde(default))]
    pub lambda: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_npo_beta"))]
    pub npo_beta: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_salun_fraction"))]
    pub salun_fraction: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_scrub_kl_weight"))]
    pub scrub_kl_weight: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_task_eta"))]
    pub task_eta: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_task_ft_steps"))]
    pub task_ft_steps: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub saf: SafConfig,
}

fn default_npo_beta() -> f64 {
    0.1
}
fn default_salun_fraction() -> f64 {
    0.5
}
fn default_scrub_kl_weight() -> f64 {
    1.0
}
fn default_task_eta() -> f64 {
    1.0
}
fn default_task_ft_steps() -> usize {
    100
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            lambda: None,
            npo_beta: default_npo_beta(),
            salun_fraction: default_salun_fraction(),
            scrub_kl_weight: default_scrub_kl_weight(),
            task_eta: default_task_eta(),
            task_ft_steps: default_task_ft_steps(),
            saf: SafConfig::default(),
        }
    }

    pub fn saf_with(alpha_max: f64) -> Self {
        let mut cfg = MethodConfig::new(Method::Saf);
        cfg.saf.alpha_max = alpha_max;
        cfg
    }

    fn retain_lambda(&self) -> f64 {
        self.lambda.unwrap_or(1.0)
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.method == Method::Saf {
            if self.saf.t_w >= steps {
                return Err(Error::InvalidConfig(alloc::format!(
                    "warmup t_w {} must be below total steps {}",
                    self.saf.t_w,
                    steps
                )));
            }
            if self.saf.alpha_max < 0.0 {
                return Err(Error::InvalidConfig(String::from(
                    "alpha_max must be non-negative",
                )));
            }
        }
        if self.method == Method::SalUn
            && !(0.0..=1.0).contains(&self.salun_fraction)
        {
            return Err(Error::InvalidConfig(String::from(
                "salun_fraction must lie in [0, 1]",
            )));
        }
        if self.method == Method::Npo && self.npo_beta <= 0.0 {
            return Err(Error::InvalidConfig(String::from(
                "npo_beta must be positive",
            )));
        }
        Ok(())
    }
}

/// Shared loop knobs for one unlearning run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_scope: TrainScope,
    pub opt: OptimHyper,
    /// Record forget accuracy every k steps (plus the final step).
    #[cfg_attr(feature = "serde", serde(default))]
    pub record_fa_every: Option<usize>,
    /// Snapshot parameters after these steps (tests and ablations).
    #[cfg_attr(feature = "serde", serde(default))]
    pub capture_at: Vec<usize>,
}

impl RunConfig {
    pub fn new(steps: usize, batch_size: usize, seed: u64, lr: f64) -> Self {
        RunConfig {
            steps,
            batch_size,
            seed,
            train_scope: TrainScope::AdaptersOnly,
            opt: OptimHyper::with_lr(lr),
            record_fa_every: None,
            capture_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub params: ParamSet,
    /// (step, forget accuracy) samples when recording was requested.
    pub fa_trajectory: Vec<(usize, f64)>,
    pub snapshots: BTreeMap<usize, ParamSet>,
}

/// Warmup-gated linear ramp: zero through t_w, then
/// min(alpha_max, 2 * alpha_max * (t - t_w) / (T - t_w)).
pub fn alpha_schedule(t: usize, t_w: usize, total: usize, alpha_max: f64) -> f64 {
    if t <= t_w {
        return 0.0;
    }
    let ramp = 2.0 * alpha_max * (t - t_w) as f64 / (total - t_w) as f64;
    alpha_max.min(ramp)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub opt: OptimHyper,
    /// Train adapters together with the base; off by default so the
    /// memorized knowledge lives entirely in the base weights.
    #[cfg_attr(feature = "serde", serde(default))]
    pub train_adapters: bool,
}

/// Memorization phase: train until the model stores the fact table.
/// Returns the pretrained parameters with the base unfrozen as trained.
pub fn pretrain(
    model_cfg: &ModelConfig,
    dataset: &FactDataset,
    cfg: &PretrainConfig,
) -> Result<ParamSet> {
    let mut params = model::init_model(model_cfg)?;
    let train_adapters = cfg.train_adapters;
    params.set_trainable(|_, e| match e.kind {
        ParamKind::Base => true,
        ParamKind::AdapterA | ParamKind::AdapterB => train_adapters,
    });
    let facts = dataset.trained();
    if facts.is_empty() {
        return Err(Error::EmptySplit { what: "training set" });
    }
    let steps_per_epoch = facts.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut sampler =
        BatchSampler::new(facts, cfg.batch_size, Rng::derive(cfg.seed, "pretrain"))?;
    let mut opt = OptimState::new(cfg.opt, total.max(1));
    for step in 1..=total {
        let batch = sampler.next_batch();
        let mut tape = Tape::new();
        let nodes = tape.register(&params)?;
        let loss = model::ce_mean_node(&mut tape, model_cfg, &nodes, &batch)?;
        if !tape.value(loss).scalar_value().is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = tape.backward(loss)?;
        opt.step(&mut params, &grads)?;
    }
    Ok(params)
}

/// The combined unlearning objective (minimized):
///   -L_f(theta, b_f) - alpha * L_f(Q_ste(theta), b_f) + lambda * L_r(theta, b_r)
/// The straight-through forward is skipped entirely at alpha = 0 and the
/// retain term at lambda = 0, so the degenerate tapes match gradient ascent
/// and gradient difference exactly.
#[allow(clippy::too_many_arguments)]
fn eq3_loss(
    tape: &mut Tape,
    model_cfg: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    params: &ParamSet,
    b_f: &[Fact],
    b_r: Option<&[Fact]>,
    alpha: f64,
    lambda: f64,
    ste_spec: &QuantSpec,
) -> Result<NodeId> {
    let lf = model::ce_mean_node(tape, model_cfg, nodes, b_f)?;
    let mut loss = tape.scale(lf, -1.0)?;
    if alpha > 0.0 {
        let wrapped = quant::ste_wrap(tape, nodes, params, ste_spec)?;
        let lq = model::ce_mean_node(tape, model_cfg, &wrapped, b_f)?;
        let term = tape.scale(lq, -alpha)?;
        loss = tape.add(loss, term)?;
    }
    if lambda != 0.0 {
        let batch = b_r.ok_or(Error::EmptySplit { what: "retain batch" })?;
        let lr_node = model::ce_mean_node(tape, model_cfg, nodes, batch)?;
        let term = tape.scale(lr_node, lambda)?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

/// One SAF update: build the objective on a fresh tape, backpropagate, and
/// apply the optimizer. Returns the loss value.
#[allow(clippy::too_many_arguments)]
pub fn saf_step(
    model_cfg: &ModelConfig,
    params: &mut ParamSet,
    opt: &mut OptimState,
    b_f: &[Fact],
    b_r: Option<&[Fact]>,
    alpha: f64,
    lambda: f64,
    ste_spec: &QuantSpec,
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let loss = eq3_loss(
        &mut tape, model_cfg, &nodes, params, b_f, b_r, alpha, lambda, ste_spec,
    )?;
    let value = tape.value(loss).scalar_value();
    let grads = tape.backward(loss)?;
    opt.step(params, &grads)?;
    Ok(value)
}

/// Saliency mask: 1.0 for the top `fraction` of trainable coordinates ranked
/// by |grad of the forget loss at theta_0|, else 0.0. Ties break
/// deterministically by (name, index).
fn salun_mask(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    forget: &[Fact],
    fraction: f64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let loss = model::ce_mean_node(&mut tape, model_cfg, &nodes, forget)?;
    let grads = tape.backward(loss)?;

    let mut coords: Vec<(f64, &String, usize)> = Vec::new();
    for (name, entry) in params.iter() {
        if entry.frozen {
            continue;
        }
        for (idx, g) in grads[name].data().iter().enumerate() {
            coords.push((libm::fabs(*g), name, idx));
        }
    }
    let total = coords.len();
    let keep = (libm::ceil(fraction * total as f64) as usize).min(total);
    coords.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(&b.2))
    });

    let mut mask: BTreeMap<String, Vec<f64>> = params
        .iter()
        .filter(|(_, e)| !e.frozen)
        .map(|(n, e)| (n.clone(), alloc::vec![0.0; e.tensor.len()]))
        .collect();
    for (_, name, idx) in coords.into_iter().take(keep) {
        mask.get_mut(name).unwrap()[idx] = 1.0;
    }
    Ok(mask)
}

fn apply_mask(grads: &mut GradMap, mask: &BTreeMap<String, Vec<f64>>) {
    for (name, m) in mask {
        if let Some(g) = grads.get_mut(name) {
            for (gi, mi) in g.data_mut().iter_mut().zip(m) {
                *gi *= mi;
            }
        }
    }
}

/// Run one unlearning method for the configured number of steps.
pub fn run_method(
    cfg: &MethodConfig,
    run: &RunConfig,
    model_cfg: &ModelConfig,
    theta0: &ParamSet,
    dataset: &FactDataset,
) -> Result<RunOutput> {
    cfg.validate(run.steps)?;
    if cfg.method == Method::TaskArith {
        return task_arithmetic(cfg, run, model_cfg, theta0, dataset);
    }

    let mut params = theta0.clone();
    run.train_scope.apply(&mut params);

    let forget = dataset.split(Split::Forget);
    let retain = dataset.split(Split::Retain);
    if forget.is_empty() {
        return Err(Error::EmptySplit { what: "forget split" });
    }
    let mut forget_sampler =
        BatchSampler::new(forget.clone(), run.batch_size, Rng::derive(run.seed, "forget"))?;
    let mut retain_sampler = if retain.is_empty() {
        None
    } else {
        Some(BatchSampler::new(
            retain,
            run.batch_size,
            Rng::derive(run.seed, "retain"),
        )?)
    };

    let reference = theta0.clone();
    let mask = if cfg.method == Method::SalUn {
        Some(salun_mask(model_cfg, &params, &forget, cfg.salun_fraction)?)
    } else {
        None
    };

    let ste_spec = cfg.saf.ste_spec();
    let mut opt = OptimState::new(run.opt, run.steps);
    let mut out = RunOutput {
        params: ParamSet::new(),
        fa_trajectory: Vec::new(),
        snapshots: BTreeMap::new(),
    };

    for t in 1..=run.steps {
        let b_f = forget_sampler.next_batch();
        let b_r = retain_sampler.as_mut().map(|s| s.next_batch());

        let mut tape = Tape::new();
        let nodes = tape.register(&params)?;
        let loss = match cfg.method {
            Method::Ga => eq3_loss(
                &mut tape, model_cfg, &nodes, &params, &b_f, b_r.as_deref(), 0.0, 0.0, &ste_spec,
            )?,
            Method::GradDiff | Method::SalUn => eq3_loss(
                &mut tape,
                model_cfg,
                &nodes,
                &params,
                &b_f,
                b_r.as_deref(),
                0.0,
                cfg.retain_lambda(),
                &ste_spec,
            )?,
            Method::Saf => {
                let alpha = alpha_schedule(t, cfg.saf.t_w, run.steps, cfg.saf.alpha_max);
                eq3_loss(
                    &mut tape,
                    model_cfg,
                    &nodes,
                    &params,
                    &b_f,
                    b_r.as_deref(),
                    alpha,
                    cfg.saf.effective_lambda(),
                    &ste_spec,
                )?
            }
            Method::Npo => npo_loss(
                &mut tape,
                model_cfg,
                &nodes,
                &reference,
                &b_f,
                b_r.as_deref(),
                cfg.npo_beta,
                cfg.retain_lambda(),
            )?,
            Method::Scrub => scrub_loss(
                &mut tape,
                model_cfg,
                &nodes,
                &reference,
                &b_f,
                b_r.as_deref(),
                cfg.scrub_kl_weight,
            )?,
            Method::TaskArith => unreachable!(),
        };
        if !tape.value(loss).scalar_value().is_finite() {
            return Err(Error::Diverged { step: t });
        }
        let mut grads = tape.backward(loss)?;
        if let Some(m) = &mask {
            apply_mask(&mut grads, m);
        }
        opt.step(&mut params, &grads)?;

        if let Some(every) = run.record_fa_every {
            if every > 0 && (t % every == 0 || t == run.steps) {
                let fa = eval::accuracy(model_cfg, &params, &forget)?;
                out.fa_trajectory.push((t, fa));
            }
        }
        if run.capture_at.contains(&t) {
            out.snapshots.insert(t, params.clone());
        }
    }
    out.params = params;
    Ok(out)
}

/// Negative preference optimization against the frozen reference:
///   (2 / beta) * mean softplus(beta * (logp_theta - logp_ref))  + lambda * L_r
/// where logp is the per-example target log-probability.
#[allow(clippy::too_many_arguments)]
fn npo_loss(
    tape: &mut Tape,
    model_cfg: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    reference: &ParamSet,
    b_f: &[Fact],
    b_r: Option<&[Fact]>,
    beta: f64,
    lambda: f64,
) -> Result<NodeId> {
    let ref_ce = model::per_example_losses(model_cfg, reference, b_f)?;
    let pairs: Vec<(usize, usize)> = b_f.iter().map(|f| (f.entity, f.attribute)).collect();
    let targets: Vec<usize> = b_f.iter().map(|f| f.value).collect();
    let logits = model::logits_node(tape, model_cfg, nodes, &pairs)?;
    let ce = tape.softmax_cross_entropy(logits, &targets)?;
    // beta * (logp_theta - logp_ref) = beta * (ce_ref - ce_theta).
    let scaled = tape.scale(ce, -beta)?;
    let shift = tape.constant(crate::tensor::Tensor::from_vec(
        alloc::vec![b_f.len()],
        ref_ce.iter().map(|c| beta * c).collect(),
    )?)?;
    let z = tape.add(scaled, shift)?;
    let sp = tape.softplus(z)?;
    let mean = tape.mean(sp)?;
    let mut loss = tape.scale(mean, 2.0 / beta)?;
    if lambda != 0.0 {
        let batch = b_r.ok_or(Error::EmptySplit { what: "retain batch" })?;
        let lr_node = model::ce_mean_node(tape, model_cfg, nodes, batch)?;
        let term = tape.scale(lr_node, lambda)?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

/// Ascent on the forget loss regularized by a KL pull toward the reference
/// distribution on retain batches.
fn scrub_loss(
    tape: &mut Tape,
    model_cfg: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    reference: &ParamSet,
    b_f: &[Fact],
    b_r: Option<&[Fact]>,
    kl_weight: f64,
) -> Result<NodeId> {
    let lf = model::ce_mean_node(tape, model_cfg, nodes, b_f)?;
    let mut loss = tape.scale(lf, -1.0)?;
    if kl_weight != 0.0 {
        let batch = b_r.ok_or(Error::EmptySplit { what: "retain batch" })?;
        let pairs: Vec<(usize, usize)> = batch.iter().map(|f| (f.entity, f.attribute)).collect();
        let ref_logits = model::logits_value(model_cfg, reference, &pairs)?;
        let logits = model::logits_node(tape, model_cfg, nodes, &pairs)?;
        let kl = tape.kl_to_ref(logits, &ref_logits)?;
        let mean = tape.mean(kl)?;
        let term = tape.scale(mean, kl_weight)?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

/// Task arithmetic: fine-tune on the forget split, then negate the update.
/// theta* = theta_0 - eta * (theta_ft - theta_0) over trainable entries.
fn task_arithmetic(
    cfg: &MethodConfig,
    run: &RunConfig,
    model_cfg: &ModelConfig,
    theta0: &ParamSet,
    dataset: &FactDataset,
) -> Result<RunOutput> {
    let mut ft = theta0.clone();
    run.train_scope.apply(&mut ft);
    let forget = dataset.split(Split::Forget);
    if forget.is_empty() {
        return Err(Error::EmptySplit { what: "forget split" });
    }
    let mut sampler =
        BatchSampler::new(forget, run.batch_size, Rng::derive(run.seed, "forget"))?;
    let mut opt = OptimState::new(run.opt, cfg.task_ft_steps.max(1));
    for step in 1..=cfg.task_ft_steps {
        let batch = sampler.next_batch();
        let mut tape = Tape::new();
        let nodes = tape.register(&ft)?;
        let loss = model::ce_mean_node(&mut tape, model_cfg, &nodes, &batch)?;
        if !tape.value(loss).scalar_value().is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = tape.backward(loss)?;
        opt.step(&mut ft, &grads)?;
    }

    let mut params = theta0.clone();
    run.train_scope.apply(&mut params);
    let names: Vec<String> = params
        .iter()
        .filter(|(_, e)| !e.frozen)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let base = theta0.tensor(&name)?;
        let tuned = ft.tensor(&name)?;
        let negated: Vec<f64> = base
            .data()
            .iter()
            .zip(tuned.data())
            .map(|(b, t)| b - cfg.task_eta * (t - b))
            .collect();
        params.set_tensor(
            &name,
            crate::tensor::Tensor::from_vec(base.shape().to_vec(), negated)?,
        )?;
    }
    Ok(RunOutput {
        params,
        fa_trajectory: Vec::new(),
        snapshots: BTreeMap::new(),
    })
}
