use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use lethe_cli::checkpoint;
use lethe_cli::config::{ExperimentConfig, SweepAxis};
use lethe_cli::report;
use lethe_cli::runner::{report_dir, Runner};
use lethe_core::unlearn::Method;

#[derive(Parser)]
#[command(
    name = "lethe",
    about = "Desk-scale laboratory for quantization-robust machine unlearning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Memorization phase: train theta_0 and report its accuracy.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Single seed; defaults to every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one unlearning method from the cached theta_0.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        /// Method name (ga, grad-diff, npo, scrub, salun, task-arith, saf).
        #[arg(long)]
        method: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint file against the config's dataset and metrics.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seed that produced the checkpoint (controls model init).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deployment attacks on a checkpoint.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["quant", "finetune", "adapter-vs-merged"])]
        kind: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweeps: the method x seed grid, the alpha frontier, or ablations.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "methods")]
        axis: SweepAxis,
    },
    /// Rebuild aggregate CSV/JSON reports from per-run records.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_method(name: &str) -> Result<Method> {
    Ok(match name {
        "ga" => Method::Ga,
        "grad-diff" => Method::GradDiff,
        "npo" => Method::Npo,
        "scrub" => Method::Scrub,
        "salun" => Method::SalUn,
        "task-arith" => Method::TaskArith,
        "saf" => Method::Saf,
        other => return Err(anyhow!("unknown method {other}")),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| runner.cfg.seeds.clone());
            report::write_dataset_csv(&runner.out.join("dataset.csv"), runner.dataset())?;
            for s in seeds {
                let theta0 = runner.pretrain_or_load(s)?;
                let (fa, ra) = runner.pretrain_report(s, &theta0)?;
                println!("pretrain seed {s}: fa {fa:.3} ra {ra:.3}");
            }
        }
        Command::Unlearn {
            config,
            method,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let wanted = parse_method(&method)?;
            let runner = Runner::new(cfg)?;
            let method_cfg = runner
                .cfg
                .methods
                .iter()
                .find(|m| m.method == wanted)
                .cloned()
                .ok_or_else(|| anyhow!("method {method} is not in the config's methods list"))?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| runner.cfg.seeds.clone());
            let mut records = Vec::new();
            for s in seeds {
                let theta0 = runner.pretrain_or_load(s)?;
                let record = runner.run_one(&method_cfg, s, &theta0, &method)?;
                println!(
                    "{method} seed {s}: fa {:.3} ra {:.3} q_int4 {:.3} cert {}",
                    record.report.fa, record.report.ra, record.report.q_int4, record.report.cert
                );
                records.push(record);
            }
            runner.persist_records(&records)?;
        }
        Command::Evaluate {
            config,
            checkpoint: ckpt,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let seed = seed.unwrap_or(runner.cfg.seeds[0]);
            let params = checkpoint::load(&ckpt)?;
            let model_cfg = runner.cfg.model.with_seed(seed);
            let report = runner.evaluate_params(&model_cfg, &params)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Attack {
            config,
            checkpoint: ckpt,
            kind,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let seed = seed.unwrap_or(runner.cfg.seeds[0]);
            let params = checkpoint::load(&ckpt)?;
            let model_cfg = runner.cfg.model.with_seed(seed);
            let eval_cfg = runner.cfg.eval.eval_config();
            match kind.as_str() {
                "quant" => {
                    let out = lethe_core::attack::quant_attack(
                        &model_cfg,
                        &params,
                        &eval_cfg.int4,
                        runner.dataset(),
                    )
                    .map_err(|e| anyhow!("{e}"))?;
                    println!("{}", serde_json::to_string_pretty(&out)?);
                }
                "finetune" => {
                    let ft = runner
                        .cfg
                        .attacks
                        .finetune
                        .clone()
                        .ok_or_else(|| anyhow!("config has no attacks.finetune section"))?;
                    let unrelated_cfg = runner
                        .cfg
                        .unrelated
                        .clone()
                        .ok_or_else(|| anyhow!("config has no unrelated dataset"))?;
                    let unrelated =
                        lethe_core::data::generate(&unrelated_cfg).map_err(|e| anyhow!("{e}"))?;
                    let ft_cfg = lethe_core::attack::FinetuneConfig {
                        steps: ft.steps,
                        batch_size: ft.batch_size,
                        seed,
                        opt: ft.optim.hyper(),
                        scope: ft.scope,
                        record_every: ft.record_every,
                    };
                    let out = lethe_core::attack::finetune_attack(
                        &model_cfg,
                        &params,
                        &unrelated,
                        runner.dataset(),
                        &ft_cfg,
                    )
                    .map_err(|e| anyhow!("{e}"))?;
                    report::write_trajectory_csv(&runner.out.join("attack_trajectory.csv"), &out)?;
                    println!("{}", serde_json::to_string_pretty(&out)?);
                }
                "adapter-vs-merged" => {
                    let out = lethe_core::attack::adapter_vs_merged(
                        &model_cfg,
                        &params,
                        runner.dataset(),
                    )
                    .map_err(|e| anyhow!("{e}"))?;
                    println!("{}", serde_json::to_string_pretty(&out)?);
                }
                other => return Err(anyhow!("unknown attack kind {other}")),
            }
        }
        Command::Sweep { config, axis } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            runner.ablation_suite(axis)?;
            println!("sweep {axis:?} written under {}", runner.out.display());
        }
        Command::Report { dir } => {
            report_dir(&dir)?;
            println!("reports written under {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
