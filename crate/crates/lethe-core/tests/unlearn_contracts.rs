//! Trajectory-level contracts of the unlearning loop: objective
//! degeneracies hold bitwise, warmup prefixes agree, frozen entries never
//! move, and runs are reproducible.

use lethe_core::data::{self, DatasetConfig, Split};
use lethe_core::model::{self, ModelConfig};
use lethe_core::optim::OptimHyper;
use lethe_core::params::{ParamKind, ParamSet};
use lethe_core::quant::QuantScope;
use lethe_core::unlearn::{
    self, Method, MethodConfig, PretrainConfig, RunConfig, TrainScope,
};

fn world() -> (ModelConfig, FactWorld) {
    let model_cfg = ModelConfig {
        entity_vocab: 30,
        attribute_vocab: 5,
        value_vocab: 12,
        embed_dim: 8,
        hidden_dim: 16,
        adapter_rank: 3,
        adapter_scale: 2.0,
        seed: 42,
    };
    let dataset = data::generate(&DatasetConfig {
        entities: 30,
        attributes: 5,
        value_vocab: 12,
        forget_entities: 4,
        holdout_entities: 4,
        entity_offset: 0,
        seed: 7,
    })
    .unwrap();
    let mut opt = OptimHyper::with_lr(4e-3);
    opt.weight_decay = 0.0;
    let theta0 = unlearn::pretrain(
        &model_cfg,
        &dataset,
        &PretrainConfig {
            epochs: 4,
            batch_size: 16,
            seed: 42,
            opt,
            train_adapters: false,
        },
    )
    .unwrap();
    (
        model_cfg,
        FactWorld {
            dataset,
            theta0,
        },
    )
}

struct FactWorld {
    dataset: data::FactDataset,
    theta0: ParamSet,
}

fn run_cfg(steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        steps,
        batch_size: 4,
        seed,
        train_scope: TrainScope::AdaptersOnly,
        opt: OptimHyper::with_lr(2e-3),
        record_fa_every: None,
        capture_at: Vec::new(),
    }
}

fn bits_eq(a: &ParamSet, b: &ParamSet) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b.iter()).all(|((na, ea), (nb, eb))| {
        na == nb
            && ea.tensor.shape() == eb.tensor.shape()
            && ea
                .tensor
                .data()
                .iter()
                .zip(eb.tensor.data())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

#[test]
fn saf_at_alpha_zero_lambda_zero_is_ga_bitwise() {
    let (model_cfg, w) = world();
    let run = run_cfg(25, 42);
    let ga = unlearn::run_method(
        &MethodConfig::new(Method::Ga),
        &run,
        &model_cfg,
        &w.theta0,
        &w.dataset,
    )
    .unwrap();
    let mut saf = MethodConfig::saf_with(0.0);
    saf.saf.lambda = Some(0.0);
    saf.saf.t_w = 5;
    let saf_run = unlearn::run_method(&saf, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    assert!(bits_eq(&ga.params, &saf_run.params));
}

#[test]
fn saf_at_alpha_zero_is_grad_diff_bitwise() {
    let (model_cfg, w) = world();
    let run = run_cfg(25, 42);
    let mut gd = MethodConfig::new(Method::GradDiff);
    gd.lambda = Some(1.0);
    let gd_run = unlearn::run_method(&gd, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    let mut saf = MethodConfig::saf_with(0.0);
    saf.saf.lambda = Some(1.0);
    saf.saf.t_w = 5;
    let saf_run = unlearn::run_method(&saf, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    assert!(bits_eq(&gd_run.params, &saf_run.params));
}

#[test]
fn saf_warmup_prefix_equals_alpha_zero_run() {
    // Through step t_w the quantization-aware term is inactive, so a SAF
    // run and its alpha = 0 counterpart share parameters bitwise.
    let (model_cfg, w) = world();
    let t_w = 10;
    let mut run = run_cfg(30, 42);
    run.capture_at = vec![t_w];

    let mut saf = MethodConfig::saf_with(2.0);
    saf.saf.t_w = t_w;
    let with_ste = unlearn::run_method(&saf, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();

    let mut gd = MethodConfig::new(Method::GradDiff);
    gd.lambda = Some(saf.saf.effective_lambda());
    let without = unlearn::run_method(&gd, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();

    assert!(bits_eq(&with_ste.snapshots[&t_w], &without.snapshots[&t_w]));
    // And past the warmup they genuinely diverge.
    assert!(!bits_eq(&with_ste.params, &without.params));
}

#[test]
fn salun_full_mask_is_grad_diff_bitwise() {
    let (model_cfg, w) = world();
    let run = run_cfg(20, 42);
    let mut gd = MethodConfig::new(Method::GradDiff);
    gd.lambda = Some(1.0);
    let gd_run = unlearn::run_method(&gd, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    let mut salun = MethodConfig::new(Method::SalUn);
    salun.lambda = Some(1.0);
    salun.salun_fraction = 1.0;
    let salun_run = unlearn::run_method(&salun, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    assert!(bits_eq(&gd_run.params, &salun_run.params));
}

#[test]
fn salun_partial_mask_differs_from_grad_diff() {
    let (model_cfg, w) = world();
    let run = run_cfg(20, 42);
    let mut gd = MethodConfig::new(Method::GradDiff);
    gd.lambda = Some(1.0);
    let gd_run = unlearn::run_method(&gd, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    let mut salun = MethodConfig::new(Method::SalUn);
    salun.lambda = Some(1.0);
    salun.salun_fraction = 0.25;
    let salun_run = unlearn::run_method(&salun, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    assert!(!bits_eq(&gd_run.params, &salun_run.params));
}

#[test]
fn task_arith_zero_eta_returns_theta0() {
    let (model_cfg, w) = world();
    let run = run_cfg(20, 42);
    let mut ta = MethodConfig::new(Method::TaskArith);
    ta.task_eta = 0.0;
    ta.task_ft_steps = 10;
    let out = unlearn::run_method(&ta, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    // Frozen flags differ by design (the run sets its training scope), but
    // every tensor must be bit-identical to theta0.
    for (name, entry) in out.params.iter() {
        let orig = w.theta0.tensor(name).unwrap();
        assert!(entry
            .tensor
            .data()
            .iter()
            .zip(orig.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn frozen_base_contract_holds_for_every_method() {
    let (model_cfg, w) = world();
    let run = run_cfg(15, 42);
    for method in [
        Method::Ga,
        Method::GradDiff,
        Method::Npo,
        Method::Scrub,
        Method::SalUn,
        Method::TaskArith,
        Method::Saf,
    ] {
        let mut cfg = MethodConfig::new(method);
        cfg.saf.t_w = 5;
        cfg.task_ft_steps = 8;
        let out = unlearn::run_method(&cfg, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
        for (name, entry) in out.params.iter() {
            if entry.kind == ParamKind::Base {
                let orig = w.theta0.tensor(name).unwrap();
                assert!(
                    entry
                        .tensor
                        .data()
                        .iter()
                        .zip(orig.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits()),
                    "{method:?} modified frozen base entry {name}"
                );
            }
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let (model_cfg, w) = world();
    let run = run_cfg(20, 123);
    for method in [Method::Ga, Method::Npo, Method::Saf] {
        let mut cfg = MethodConfig::new(method);
        cfg.saf.t_w = 5;
        let a = unlearn::run_method(&cfg, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
        let b = unlearn::run_method(&cfg, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
        assert!(bits_eq(&a.params, &b.params), "{method:?} not reproducible");
    }
}

#[test]
fn pretrain_is_deterministic_and_marks_scope() {
    let (model_cfg, w) = world();
    let (_, w2) = world();
    assert!(bits_eq(&w.theta0, &w2.theta0));
    // Base trains, adapters stay at init when train_adapters is off.
    let init = model::init_model(&model_cfg).unwrap();
    for (name, entry) in w.theta0.iter() {
        match entry.kind {
            ParamKind::AdapterA | ParamKind::AdapterB => {
                assert_eq!(&entry.tensor, init.tensor(name).unwrap());
            }
            ParamKind::Base => {}
        }
    }
}

#[test]
fn zero_epoch_pretrain_is_chance_level() {
    let (model_cfg, w) = world();
    let mut opt = OptimHyper::with_lr(1e-3);
    opt.weight_decay = 0.0;
    let theta0 = unlearn::pretrain(
        &model_cfg,
        &w.dataset,
        &PretrainConfig {
            epochs: 0,
            batch_size: 8,
            seed: 42,
            opt,
            train_adapters: false,
        },
    )
    .unwrap();
    let init = model::init_model(&model_cfg).unwrap();
    for (name, entry) in theta0.iter() {
        assert_eq!(&entry.tensor, init.tensor(name).unwrap());
    }
    let fa = lethe_core::eval::accuracy(&model_cfg, &theta0, &w.dataset.split(Split::Forget))
        .unwrap();
    // Chance is 1/12; an untrained model should sit near it.
    assert!(fa < 0.3, "untrained accuracy {fa} suspiciously high");
}

#[test]
fn ste_scope_config_changes_saf_trajectory() {
    let (model_cfg, w) = world();
    let run = run_cfg(30, 42);
    let mut a = MethodConfig::saf_with(2.0);
    a.saf.t_w = 5;
    a.saf.ste_scope = QuantScope::AdaptersOnly;
    let mut b = a.clone();
    b.saf.ste_scope = QuantScope::AllTrainable;
    let ra = unlearn::run_method(&a, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    let rb = unlearn::run_method(&b, &run, &model_cfg, &w.theta0, &w.dataset).unwrap();
    assert!(!bits_eq(&ra.params, &rb.params));
}

#[test]
fn empty_forget_split_errors() {
    let (model_cfg, w) = world();
    let empty = data::generate(&DatasetConfig {
        entities: 30,
        attributes: 5,
        value_vocab: 12,
        forget_entities: 0,
        holdout_entities: 4,
        entity_offset: 0,
        seed: 7,
    })
    .unwrap();
    let run = run_cfg(5, 42);
    let err = unlearn::run_method(
        &MethodConfig::new(Method::Ga),
        &run,
        &model_cfg,
        &w.theta0,
        &empty,
    );
    assert!(err.is_err());
}
