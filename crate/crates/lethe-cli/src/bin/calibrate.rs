// Scratch calibration harness; not part of the shipped surface.
// Scans pretrain/unlearn hyperparameters and prints metric tables.

use lethe_core::data::{self, DatasetConfig, Split};
use lethe_core::eval::{self, EvalConfig};
use lethe_core::model::ModelConfig;
use lethe_core::optim::OptimHyper;
use lethe_core::params::ParamSet;
use lethe_core::quant::QuantScope;
use lethe_core::unlearn::{self, Method, MethodConfig, PretrainConfig, RunConfig, TrainScope};

fn dataset_cfg() -> DatasetConfig {
    DatasetConfig {
        entities: 220,
        attributes: 10,
        value_vocab: 64,
        forget_entities: 20,
        holdout_entities: 20,
        entity_offset: 0,
        seed: 7,
    }
}

fn model_cfg(seed: u64, rank: usize, embed: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        entity_vocab: 260,
        attribute_vocab: 10,
        value_vocab: 64,
        embed_dim: embed,
        hidden_dim: hidden,
        adapter_rank: rank,
        adapter_scale: 2.0,
        seed,
    }
}

fn pretrain_once(
    mc: &ModelConfig,
    ds: &data::FactDataset,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> ParamSet {
    let mut opt = OptimHyper::with_lr(lr);
    opt.weight_decay = 0.0;
    let cfg = PretrainConfig {
        epochs,
        batch_size: batch,
        seed,
        opt,
        train_adapters: false,
    };
    unlearn::pretrain(mc, ds, &cfg).expect("pretrain")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let phase = args.get(1).map(String::as_str).unwrap_or("pretrain");
    let ds = data::generate(&dataset_cfg()).unwrap();
    let forget = ds.split(Split::Forget);
    let retain = ds.split(Split::Retain);
    let eval_cfg = EvalConfig::standard(QuantScope::AdaptersOnly, 0.05);

    match phase {
        "pretrain" => {
            for &(epochs, lr, batch) in &[
                (30usize, 3e-3f64, 32usize),
                (30, 5e-3, 32),
                (60, 3e-3, 32),
                (60, 5e-3, 32),
                (100, 5e-3, 32),
                (60, 1e-2, 32),
            ] {
                for seed in [42u64, 123, 5508] {
                    let mc = model_cfg(seed, 4, 32, 128);
                    let t0 = std::time::Instant::now();
                    let theta0 = pretrain_once(&mc, &ds, epochs, lr, batch, seed);
                    let fa = eval::accuracy(&mc, &theta0, &forget).unwrap();
                    let ra = eval::accuracy(&mc, &theta0, &retain).unwrap();
                    println!(
                        "pretrain epochs={epochs} lr={lr} batch={batch} seed={seed}: FA={fa:.3} RA={ra:.3} ({:.1}s)",
                        t0.elapsed().as_secs_f64()
                    );
                }
            }
        }
        "ga" => {
            // args: ga <epochs> <pre_lr> <rank> <embed> <hidden> <lr...>
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
            let pre_lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
            let rank: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);
            let embed: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32);
            let hidden: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(128);
            let lrs: Vec<f64> = if args.len() > 7 {
                args[7..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![3e-4, 1e-3, 3e-3, 1e-2]
            };
            let eval_all = EvalConfig::standard(QuantScope::AllTrainable, 0.05);
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, rank, embed, hidden);
                let theta0 = pretrain_once(&mc, &ds, epochs, pre_lr, 32, seed);
                let fa0 = eval::accuracy(&mc, &theta0, &forget).unwrap();
                let ra0 = eval::accuracy(&mc, &theta0, &retain).unwrap();
                println!("seed {seed} theta0: FA={fa0:.3} RA={ra0:.3}");
                for &lr in &lrs {
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt: OptimHyper::with_lr(lr),
                        record_fa_every: Some(30),
                        capture_at: vec![],
                    };
                    let m = MethodConfig::new(Method::Ga);
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let rep_all = eval::evaluate(&mc, &out.params, &ds, &eval_all).unwrap();
                    let traj: Vec<String> = out
                        .fa_trajectory
                        .iter()
                        .map(|(t, fa)| format!("{t}:{fa:.2}"))
                        .collect();
                    println!(
                        "  ga lr={lr}: FA={:.3} RA={:.3} Q8={:.3} Q4={:.3} RA4={:.3} k={:.2} [rec(ad) {:+.3}] | all: Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}]",
                        rep.fa, rep.ra, rep.q_int8, rep.q_int4, rep.ra_int4, rep.kappa,
                        rep.q_int4 - rep.fa,
                        rep_all.q_int8, rep_all.q_int4, rep_all.ra_int4,
                        rep_all.q_int4 - rep_all.fa
                    );
                    println!("    traj {}", traj.join(" "));
                }
            }
        }
        "edge" => {
            // Find the just-memorized pretrain shoulder: epochs scan with
            // confidence (mean CE) readout.
            let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
            for &epochs in &[17usize, 18, 19] {
                for seed in [42u64, 123, 5508] {
                    let mc = model_cfg(seed, 16, 64, 256);
                    let theta0 = pretrain_once(&mc, &ds, epochs, lr, 32, seed);
                    let fa = eval::accuracy(&mc, &theta0, &forget).unwrap();
                    let ra = eval::accuracy(&mc, &theta0, &retain).unwrap();
                    let lf = lethe_core::model::batch_loss(&mc, &theta0, &forget).unwrap();
                    let lr_loss = lethe_core::model::batch_loss(&mc, &theta0, &retain).unwrap();
                    println!(
                        "edge epochs={epochs} seed={seed}: FA={fa:.3} RA={ra:.3} Lf={lf:.3} Lr={lr_loss:.3}"
                    );
                }
            }
        }
        "gd" => {
            // args: gd <epochs> <pre_lr> <rank> <batch> <embed:hidden ignored> <lambda> <lr...>
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(40);
            let pre_lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
            let rank: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(16);
            let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4);
            let embed: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
            let lambda: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let lrs: Vec<f64> = if args.len() > 8 {
                args[8..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![1e-3, 2e-3, 3e-3]
            };
            let eval_all = EvalConfig::standard(QuantScope::AllTrainable, 0.05);
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, rank, embed, 256);
                let theta0 = pretrain_once(&mc, &ds, epochs, pre_lr, 32, seed);
                for &lr in &lrs {
                    let run = RunConfig {
                        steps: 300,
                        batch_size: batch,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt: OptimHyper::with_lr(lr),
                        record_fa_every: Some(30),
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::new(Method::GradDiff);
                    m.lambda = Some(lambda);
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let rep_all = eval::evaluate(&mc, &out.params, &ds, &eval_all).unwrap();
                    let traj: Vec<String> = out
                        .fa_trajectory
                        .iter()
                        .map(|(t, fa)| format!("{t}:{fa:.2}"))
                        .collect();
                    println!(
                        "seed {seed} gd l={lambda} lr={lr}: FA={:.3} RA={:.3} Q8={:.3} Q4={:.3} RA4={:.3} [rec(ad) {:+.3}] | all: Q4={:.3} RA4={:.3} [rec {:+.3}]",
                        rep.fa, rep.ra, rep.q_int8, rep.q_int4, rep.ra_int4,
                        rep.q_int4 - rep.fa,
                        rep_all.q_int4, rep_all.ra_int4,
                        rep_all.q_int4 - rep_all.fa
                    );
                    println!("    traj {}", traj.join(" "));
                }
            }
        }
        "eps" => {
            // args: eps <lambda> <adam_eps> <lr...>  (pretrain fixed at 20 epochs)
            let lambda: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let adam_eps: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-1);
            let lrs: Vec<f64> = if args.len() > 4 {
                args[4..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![3e-3, 1e-2, 3e-2]
            };
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, 20, 5e-3, 32, seed);
                for &lr in &lrs {
                    let mut opt = OptimHyper::with_lr(lr);
                    opt.eps = adam_eps;
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt,
                        record_fa_every: Some(50),
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::new(Method::GradDiff);
                    m.lambda = Some(lambda);
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let traj: Vec<String> = out
                        .fa_trajectory
                        .iter()
                        .map(|(t, fa)| format!("{t}:{fa:.2}"))
                        .collect();
                    println!(
                        "seed {seed} l={lambda} eps={adam_eps} lr={lr}: FA={:.3} RA={:.3} Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}] traj {}",
                        rep.fa, rep.ra, rep.q_int8, rep.q_int4, rep.ra_int4,
                        rep.q_int4 - rep.fa, traj.join(" ")
                    );
                }
            }
        }
        "npo" => {
            // args: npo <beta> <lambda> <epochs> <lr...>
            let beta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20);
            let wd: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.01);
            let lrs: Vec<f64> = if args.len() > 6 {
                args[6..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![1e-3, 3e-3]
            };
            let eval_all = EvalConfig::standard(QuantScope::AllTrainable, 0.05);
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, epochs, 5e-3, 32, seed);
                for &lr in &lrs {
                    let mut opt = OptimHyper::with_lr(lr);
                    opt.weight_decay = wd;
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt,
                        record_fa_every: Some(50),
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::new(Method::Npo);
                    m.npo_beta = beta;
                    m.lambda = Some(lambda);
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let rep_all = eval::evaluate(&mc, &out.params, &ds, &eval_all).unwrap();
                    println!(
                        "seed {seed} npo b={beta} l={lambda} ep={epochs} wd={wd} lr={lr}: FA={:.3} RA={:.3} | ad: Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}] | all: Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}]",
                        rep.fa, rep.ra,
                        rep.q_int8, rep.q_int4, rep.ra_int4, rep.q_int4 - rep.fa,
                        rep_all.q_int8, rep_all.q_int4, rep_all.ra_int4, rep_all.q_int4 - rep_all.fa
                    );
                }
            }
        }
        "scrub" => {
            // args: scrub <kl_weight> <epochs> <lr...>
            let klw: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(18);
            let lrs: Vec<f64> = if args.len() > 4 {
                args[4..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![3e-3, 1e-2]
            };
            let eval_all = EvalConfig::standard(QuantScope::AllTrainable, 0.05);
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, epochs, 5e-3, 32, seed);
                for &lr in &lrs {
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt: OptimHyper::with_lr(lr),
                        record_fa_every: Some(100),
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::new(Method::Scrub);
                    m.scrub_kl_weight = klw;
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let rep_all = eval::evaluate(&mc, &out.params, &ds, &eval_all).unwrap();
                    println!(
                        "seed {seed} scrub w={klw} ep={epochs} lr={lr}: FA={:.3} RA={:.3} | ad: Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}] | all: Q8={:.3} Q4={:.3} RA4={:.3} [rec {:+.3}]",
                        rep.fa, rep.ra,
                        rep.q_int8, rep.q_int4, rep.ra_int4, rep.q_int4 - rep.fa,
                        rep_all.q_int8, rep_all.q_int4, rep_all.ra_int4, rep_all.q_int4 - rep_all.fa
                    );
                }
            }
        }
        "sweeppin" => {
            // Pinned-lambda alpha sweep on the sweep seed.
            let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.2e-3);
            let lam: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            for seed in [42u64] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, 18, 5e-3, 32, seed);
                for &alpha in &[0.0, 1.0, 1.5, 2.0, 2.5, 3.0] {
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt: OptimHyper::with_lr(lr),
                        record_fa_every: None,
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::saf_with(alpha);
                    m.saf.lambda = Some(lam);
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    println!(
                        "sweep a={alpha} lam={lam} lr={lr}: FA={:.3} RA={:.3} Q8={:.3} Q4={:.3} cert={}",
                        rep.fa, rep.ra, rep.q_int8, rep.q_int4, rep.cert
                    );
                }
            }
        }
        "ft" => {
            // Fine-tuning recovery attack against npo and saf arms.
            let ft_lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2.4e-3);
            let unrelated = data::generate(&DatasetConfig {
                entities: 20,
                attributes: 10,
                value_vocab: 64,
                forget_entities: 0,
                holdout_entities: 0,
                entity_offset: 220,
                seed: 9,
            })
            .unwrap();
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, 18, 5e-3, 32, seed);
                let run = RunConfig {
                    steps: 300,
                    batch_size: 4,
                    seed,
                    train_scope: TrainScope::AdaptersOnly,
                    opt: OptimHyper::with_lr(6e-3),
                    record_fa_every: None,
                    capture_at: vec![],
                };
                let mut npo = MethodConfig::new(Method::Npo);
                npo.npo_beta = 1.5;
                npo.lambda = Some(0.5);
                let mut saf = MethodConfig::saf_with(1.0);
                saf.saf.ste_scope = QuantScope::AllTrainable;
                let ga = MethodConfig::new(Method::Ga);
                for (name, m) in [("ga ", ga), ("npo", npo), ("saf", saf)] {
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let ft = lethe_core::attack::FinetuneConfig {
                        steps: 50,
                        batch_size: 4,
                        seed,
                        opt: OptimHyper::with_lr(ft_lr),
                        scope: TrainScope::AdaptersOnly,
                        record_every: 10,
                    };
                    let outcome = lethe_core::attack::finetune_attack(
                        &mc, &out.params, &unrelated, &ds, &ft,
                    )
                    .unwrap();
                    let traj: Vec<String> = outcome
                        .trajectory
                        .iter()
                        .map(|p| format!("{}:{:.2}", p.step, p.fa))
                        .collect();
                    println!(
                        "seed {seed} {name}: fa {:.3} -> {:.3} (ra {:.3} -> {:.3}) traj {}",
                        outcome.fa_before, outcome.fa_after, outcome.ra_before, outcome.ra_after,
                        traj.join(" ")
                    );
                }
            }
        }
        "margins" => {
            // args: margins <method> <knob> <lambda> <lr>
            // Margin distribution of forget facts after unlearning, and the
            // displacement INT4 adapter quantization induces. knob = beta
            // for npo, ignored otherwise.
            let which = args.get(2).map(String::as_str).unwrap_or("grad-diff");
            let knob: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let lambda: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
            let rank: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(16);
            let adam_eps: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(1e-8);
            let epochs: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(20);
            let seed = 42u64;
            let mc = model_cfg(seed, rank, 64, 256);
            let theta0 = pretrain_once(&mc, &ds, epochs, 5e-3, 32, seed);
            let mut opt = OptimHyper::with_lr(lr);
            opt.eps = adam_eps;
            let run = RunConfig {
                steps: 300,
                batch_size: 4,
                seed,
                train_scope: TrainScope::AdaptersOnly,
                opt,
                record_fa_every: None,
                capture_at: vec![],
            };
            let mut m = match which {
                "npo" => {
                    let mut m = MethodConfig::new(Method::Npo);
                    m.npo_beta = knob;
                    m
                }
                _ => MethodConfig::new(Method::GradDiff),
            };
            m.lambda = Some(lambda);
            let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
            let scope = match args.get(8).map(String::as_str) {
                Some("all") => QuantScope::AllTrainable,
                _ => QuantScope::AdaptersOnly,
            };
            let spec = lethe_core::quant::QuantSpec::int4(scope);
            let theta_q = lethe_core::quant::quantize(&out.params, &spec).unwrap();
            let margin = |params: &ParamSet, fact: &lethe_core::data::Fact| -> f64 {
                let l = lethe_core::model::logits_value(&mc, params, &[(fact.entity, fact.attribute)])
                    .unwrap();
                let row = l.row(0).to_vec();
                let target = row[fact.value];
                let top_other = row
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != fact.value)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                top_other - target // positive = forgotten (argmax wrong)
            };
            let mut margins: Vec<f64> = Vec::new();
            let mut shifts: Vec<f64> = Vec::new();
            for f in &forget {
                let m0 = margin(&out.params, f);
                let mq = margin(&theta_q, f);
                margins.push(m0);
                shifts.push(mq - m0);
            }
            margins.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut sorted_shifts = shifts.clone();
            sorted_shifts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |v: &[f64], p: f64| v[((v.len() - 1) as f64 * p) as usize];
            println!(
                "margins (pos=forgotten): p5={:.3} p25={:.3} p50={:.3} p75={:.3} p95={:.3}",
                q(&margins, 0.05), q(&margins, 0.25), q(&margins, 0.5),
                q(&margins, 0.75), q(&margins, 0.95)
            );
            println!(
                "quant shift: p5={:.3} p25={:.3} p50={:.3} p75={:.3} p95={:.3}",
                q(&sorted_shifts, 0.05), q(&sorted_shifts, 0.25), q(&sorted_shifts, 0.5),
                q(&sorted_shifts, 0.75), q(&sorted_shifts, 0.95)
            );
            let flipped = margins.iter().filter(|m| **m > 0.0).count();
            let recovered = forget
                .iter()
                .filter(|f| margin(&out.params, f) > 0.0 && margin(&theta_q, f) <= 0.0)
                .count();
            println!(
                "forgotten {}/{}  re-remembered-after-quant {}",
                flipped, forget.len(), recovered
            );
        }
        "saf" => {
            // args: saf <epochs> <lr> <scope> <alpha...>
            let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(18);
            let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6e-3);
            let scope = match args.get(4).map(String::as_str) {
                Some("ad") => QuantScope::AdaptersOnly,
                _ => QuantScope::AllTrainable,
            };
            let alphas: Vec<f64> = if args.len() > 5 {
                args[5..].iter().map(|s| s.parse().unwrap()).collect()
            } else {
                vec![0.0, 1.0, 1.5, 2.0, 2.5, 3.0]
            };
            let eval_all = EvalConfig::standard(QuantScope::AllTrainable, 0.05);
            for seed in [42u64, 123, 5508] {
                let mc = model_cfg(seed, 16, 64, 256);
                let theta0 = pretrain_once(&mc, &ds, epochs, 5e-3, 32, seed);
                for &alpha in &alphas {
                    let run = RunConfig {
                        steps: 300,
                        batch_size: 4,
                        seed,
                        train_scope: TrainScope::AdaptersOnly,
                        opt: OptimHyper::with_lr(lr),
                        record_fa_every: None,
                        capture_at: vec![],
                    };
                    let mut m = MethodConfig::saf_with(alpha);
                    m.saf.ste_scope = scope;
                    let out = unlearn::run_method(&m, &run, &mc, &theta0, &ds).unwrap();
                    let rep = eval::evaluate(&mc, &out.params, &ds, &eval_cfg).unwrap();
                    let rep_all = eval::evaluate(&mc, &out.params, &ds, &eval_all).unwrap();
                    println!(
                        "seed {seed} saf a={alpha} lam={} lr={lr} ste={scope:?}: FA={:.3} RA={:.3} | ad Q8={:.3} Q4={:.3} | all Q8={:.3} Q4={:.3} RA4={:.3} cert={}",
                        m.saf.effective_lambda(),
                        rep.fa, rep.ra, rep.q_int8, rep.q_int4,
                        rep_all.q_int8, rep_all.q_int4, rep_all.ra_int4, rep_all.cert
                    );
                }
            }
        }
        other => eprintln!("unknown phase {other}"),
    }
}
