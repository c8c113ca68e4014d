//! Experiment orchestration: pretrain-or-load, unlearn, evaluate, attack,
//! sweeps, and ablations. Independent runs fan out over a thread pool and
//! results are assembled in config order, so reports do not depend on
//! completion order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use lethe_core::attack::{self, FinetuneConfig};
use lethe_core::data::{self, FactDataset, Split};
use lethe_core::eval::{self, EvalReport};
use lethe_core::model::ModelConfig;
use lethe_core::params::ParamSet;
use lethe_core::unlearn::{self, Method, MethodConfig, RunConfig};

use crate::checkpoint;
use crate::config::{ExperimentConfig, SweepAxis};
use crate::report::{self, AggregateRow, RunRecord};

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    dataset: FactDataset,
    unrelated: Option<FactDataset>,
}

fn core_err(e: lethe_core::Error) -> anyhow::Error {
    anyhow!("{e}")
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let out = cfg.output_path();
        let dataset = data::generate(&cfg.dataset).map_err(core_err)?;
        let unrelated = match &cfg.unrelated {
            Some(u) => Some(data::generate(u).map_err(core_err)?),
            None => None,
        };
        Ok(Runner {
            cfg,
            out,
            dataset,
            unrelated,
        })
    }

    pub fn dataset(&self) -> &FactDataset {
        &self.dataset
    }

    fn model_cfg(&self, seed: u64) -> ModelConfig {
        self.cfg.model.with_seed(seed)
    }

    fn pretrain_path(&self, seed: u64) -> PathBuf {
        let fp = self.cfg.pretrain_fingerprint(seed);
        self.out
            .join("checkpoints")
            .join(format!("pretrain_{}_{}.bin", &fp[..12], seed))
    }

    /// Pretrain theta_0 for a seed, or load the cached checkpoint whose
    /// fingerprint matches.
    pub fn pretrain_or_load(&self, seed: u64) -> Result<ParamSet> {
        let path = self.pretrain_path(seed);
        if path.exists() {
            return checkpoint::load(&path);
        }
        let model_cfg = self.model_cfg(seed);
        let pre_cfg = self.cfg.pretrain.with_seed(seed);
        let theta0 =
            unlearn::pretrain(&model_cfg, &self.dataset, &pre_cfg).map_err(core_err)?;
        checkpoint::save(&path, &theta0)?;
        Ok(theta0)
    }

    /// Accuracy of a pretrained checkpoint on both trained splits.
    pub fn pretrain_report(&self, seed: u64, theta0: &ParamSet) -> Result<(f64, f64)> {
        let model_cfg = self.model_cfg(seed);
        let fa = eval::accuracy(&model_cfg, theta0, &self.dataset.split(Split::Forget))
            .map_err(core_err)?;
        let ra = eval::accuracy(&model_cfg, theta0, &self.dataset.split(Split::Retain))
            .map_err(core_err)?;
        Ok((fa, ra))
    }

    fn run_config(&self, seed: u64) -> RunConfig {
        self.cfg.unlearn.with_seed(seed)
    }

    /// Unlearn + evaluate + attack for one (method, seed) cell.
    pub fn run_one(
        &self,
        method: &MethodConfig,
        seed: u64,
        theta0: &ParamSet,
        label: &str,
    ) -> Result<RunRecord> {
        self.run_one_with_lr(method, seed, theta0, label, None)
    }

    fn run_one_with_lr(
        &self,
        method: &MethodConfig,
        seed: u64,
        theta0: &ParamSet,
        label: &str,
        lr_override: Option<f64>,
    ) -> Result<RunRecord> {
        let start = Instant::now();
        let model_cfg = self.model_cfg(seed);
        let mut run_cfg = self.run_config(seed);
        if let Some(lr) = lr_override {
            run_cfg.opt.base_lr = lr;
        }
        let output = unlearn::run_method(method, &run_cfg, &model_cfg, theta0, &self.dataset)
            .map_err(core_err)?;
        let theta_star = output.params;

        let mut report = self.evaluate_params(&model_cfg, &theta_star)?;

        let mut attacks = Vec::new();
        if self.cfg.attacks.quant {
            attacks.push(
                attack::quant_attack(
                    &model_cfg,
                    &theta_star,
                    &self.cfg.eval.eval_config().int4,
                    &self.dataset,
                )
                .map_err(core_err)?,
            );
        }
        if let Some(ft) = &self.cfg.attacks.finetune {
            let unrelated = self
                .unrelated
                .as_ref()
                .ok_or_else(|| anyhow!("finetune attack configured without an unrelated dataset"))?;
            let ft_cfg = FinetuneConfig {
                steps: ft.steps,
                batch_size: ft.batch_size,
                seed,
                opt: ft.optim.hyper(),
                scope: ft.scope,
                record_every: ft.record_every,
            };
            attacks.push(
                attack::finetune_attack(&model_cfg, &theta_star, unrelated, &self.dataset, &ft_cfg)
                    .map_err(core_err)?,
            );
        }
        if self.cfg.attacks.adapter_vs_merged && theta_star.has_adapters() {
            let (a, b) =
                attack::adapter_vs_merged(&model_cfg, &theta_star, &self.dataset).map_err(core_err)?;
            attacks.push(a);
            attacks.push(b);
        }

        let ckpt_rel = format!("checkpoints/{label}_{seed}.bin");
        checkpoint::save(&self.out.join(&ckpt_rel), &theta_star)?;

        let wall = start.elapsed().as_secs_f64();
        report.runtime_seconds = wall;
        let (alpha, lambda) = method_knobs(method);
        Ok(RunRecord {
            fingerprint: self.cfg.fingerprint(),
            method: method.method.name().to_string(),
            seed,
            alpha,
            lambda,
            report,
            attacks,
            checkpoint: ckpt_rel,
            wall_seconds: wall,
        })
    }

    pub fn evaluate_params(
        &self,
        model_cfg: &ModelConfig,
        params: &ParamSet,
    ) -> Result<EvalReport> {
        eval::evaluate(model_cfg, params, &self.dataset, &self.cfg.eval.eval_config())
            .map_err(core_err)
    }

    /// The full experiment grid: every method on every seed. Pretraining is
    /// done (or loaded) once per seed up front; the grid then runs in
    /// parallel and is reported in config order.
    pub fn run_experiment(&self) -> Result<Vec<RunRecord>> {
        let mut theta0: BTreeMap<u64, ParamSet> = BTreeMap::new();
        for &seed in &self.cfg.seeds {
            theta0.insert(seed, self.pretrain_or_load(seed)?);
        }
        let cells: Vec<(usize, &MethodConfig, u64)> = self
            .cfg
            .methods
            .iter()
            .enumerate()
            .flat_map(|(i, m)| self.cfg.seeds.iter().map(move |&s| (i, m, s)))
            .collect();
        let records: Vec<Result<RunRecord>> = cells
            .par_iter()
            .map(|(i, method, seed)| {
                let label = format!("{}_{i}", method.method.name());
                self.run_one(method, *seed, &theta0[seed], &label)
            })
            .collect();
        let mut ok = Vec::with_capacity(records.len());
        let mut failures = Vec::new();
        for (cell, rec) in cells.iter().zip(records) {
            match rec {
                Ok(r) => ok.push(r),
                Err(e) => failures.push(format!(
                    "{} seed {}: {e}",
                    cell.1.method.name(),
                    cell.2
                )),
            }
        }
        self.persist_records(&ok)?;
        if !failures.is_empty() {
            bail!("{} run(s) failed: {}", failures.len(), failures.join("; "));
        }
        Ok(ok)
    }

    /// Write runs.csv, aggregate.csv, per-run JSON, trajectories, and the
    /// timing log for a batch of finished records.
    pub fn persist_records(&self, records: &[RunRecord]) -> Result<()> {
        std::fs::create_dir_all(self.out.join("runs"))?;
        report::write_dataset_csv(&self.out.join("dataset.csv"), &self.dataset)?;
        report::write_runs_csv(&self.out.join("runs.csv"), records)?;
        report::write_timings_csv(&self.out.join("timings.csv"), records)?;
        for r in records {
            let name = format!(
                "runs/{}_{}{}.json",
                r.method,
                r.seed,
                r.alpha.map(|a| format!("_a{a}")).unwrap_or_default()
            );
            report::write_json(&self.out.join(name), r)?;
            for (i, a) in r.attacks.iter().enumerate() {
                if !a.trajectory.is_empty() {
                    let tname = format!("runs/{}_{}_attack{}.csv", r.method, r.seed, i);
                    report::write_trajectory_csv(&self.out.join(tname), a)?;
                }
            }
        }
        let rows = aggregate_rows(records).map_err(core_err)?;
        report::write_aggregate_csv(&self.out.join("aggregate.csv"), &rows)?;
        report::write_json(&self.out.join("summary.json"), &SummaryDoc {
            name: self.cfg.name.clone(),
            fingerprint: self.cfg.fingerprint(),
            runs: records.to_vec(),
            aggregates: rows,
        })?;
        Ok(())
    }

    /// Pareto sweep over alpha_max: one SAF run per grid value on the sweep
    /// seed, reported as the frontier CSV sorted by alpha. The sweep may pin
    /// lambda and override the learning rate so the grid isolates alpha.
    pub fn sweep_alpha(&self) -> Result<Vec<RunRecord>> {
        let sweep = self
            .cfg
            .sweep
            .as_ref()
            .ok_or_else(|| anyhow!("config has no sweep section"))?;
        let seed = sweep.seed.unwrap_or(self.cfg.seeds[0]);
        let theta0 = self.pretrain_or_load(seed)?;
        let base_saf = self.saf_template();
        let records: Vec<Result<RunRecord>> = sweep
            .alpha_values
            .par_iter()
            .map(|&alpha| {
                let mut m = base_saf.clone();
                m.saf.alpha_max = alpha;
                m.saf.lambda = sweep.lambda;
                let label = format!("sweep_alpha{alpha}");
                self.run_one_with_lr(&m, seed, &theta0, &label, sweep.lr)
            })
            .collect();
        let records: Result<Vec<RunRecord>> = records.into_iter().collect();
        let mut records = records?;
        records.sort_by(|a, b| a.alpha.partial_cmp(&b.alpha).unwrap());
        std::fs::create_dir_all(&self.out)?;
        report::write_frontier_csv(&self.out.join("frontier.csv"), &records)?;
        Ok(records)
    }

    fn saf_template(&self) -> MethodConfig {
        self.cfg
            .methods
            .iter()
            .find(|m| m.method == Method::Saf)
            .cloned()
            .unwrap_or_else(|| MethodConfig::new(Method::Saf))
    }

    /// Ablation arms around the SAF configuration, one CSV per axis.
    pub fn ablation_suite(&self, axis: SweepAxis) -> Result<()> {
        match axis {
            SweepAxis::Warmup => self.ablate_warmup(),
            SweepAxis::SteScope => self.ablate_ste_scope(),
            SweepAxis::Lambda => self.ablate_lambda(),
            SweepAxis::Ablations => {
                self.ablate_warmup()?;
                self.ablate_ste_scope()?;
                self.ablate_lambda()
            }
            SweepAxis::Alpha => self.sweep_alpha().map(|_| ()),
            SweepAxis::Methods => self.run_experiment().map(|_| ()),
        }
    }

    fn ablation_run(
        &self,
        method: &MethodConfig,
        seed: u64,
        record_fa_every: Option<usize>,
    ) -> Result<(EvalReport, Vec<(usize, f64)>)> {
        let theta0 = self.pretrain_or_load(seed)?;
        let model_cfg = self.model_cfg(seed);
        let mut run_cfg = self.run_config(seed);
        run_cfg.record_fa_every = record_fa_every;
        let output = unlearn::run_method(method, &run_cfg, &model_cfg, &theta0, &self.dataset)
            .map_err(core_err)?;
        let report = self.evaluate_params(&model_cfg, &output.params)?;
        Ok((report, output.fa_trajectory))
    }

    fn ablate_warmup(&self) -> Result<()> {
        let seed = self.cfg.seeds[0];
        let mut rows = String::from("warmup,fa_at_50,fa,ra,q_int4,cert\n");
        for warmup_on in [true, false] {
            let mut m = self.saf_template();
            if !warmup_on {
                m.saf.t_w = 0;
            }
            let (report, traj) = self.ablation_run(&m, seed, Some(50))?;
            let fa_at_50 = traj
                .iter()
                .find(|(t, _)| *t == 50)
                .map(|(_, fa)| *fa)
                .unwrap_or(f64::NAN);
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                warmup_on, fa_at_50, report.fa, report.ra, report.q_int4, report.cert
            ));
        }
        checkpoint::write_atomic(&self.out.join("ablation_warmup.csv"), rows.as_bytes())
    }

    fn ablate_ste_scope(&self) -> Result<()> {
        let seed = self.cfg.seeds[0];
        let mut rows = String::from("ste_scope,fa,ra,q_int4,cert\n");
        for scope in [
            lethe_core::quant::QuantScope::AdaptersOnly,
            lethe_core::quant::QuantScope::AllTrainable,
        ] {
            let mut m = self.saf_template();
            m.saf.ste_scope = scope;
            let (report, _) = self.ablation_run(&m, seed, None)?;
            let name = match scope {
                lethe_core::quant::QuantScope::AdaptersOnly => "adapters-only",
                _ => "all-trainable",
            };
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                name, report.fa, report.ra, report.q_int4, report.cert
            ));
        }
        checkpoint::write_atomic(&self.out.join("ablation_ste_scope.csv"), rows.as_bytes())
    }

    fn ablate_lambda(&self) -> Result<()> {
        let seed = self.cfg.seeds[0];
        let grid = self
            .cfg
            .sweep
            .as_ref()
            .map(|s| s.lambda_values.clone())
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| vec![2.0, 4.0, 6.0]);
        let mut rows = String::from("lambda,fa,ra,q_int4,cert\n");
        for lambda in grid {
            let mut m = self.saf_template();
            m.saf.lambda = Some(lambda);
            let (report, _) = self.ablation_run(&m, seed, None)?;
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                lambda, report.fa, report.ra, report.q_int4, report.cert
            ));
        }
        checkpoint::write_atomic(&self.out.join("ablation_lambda.csv"), rows.as_bytes())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryDoc {
    pub name: String,
    pub fingerprint: String,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

fn method_knobs(method: &MethodConfig) -> (Option<f64>, Option<f64>) {
    match method.method {
        Method::Saf => (
            Some(method.saf.alpha_max),
            Some(method.saf.effective_lambda()),
        ),
        Method::GradDiff | Method::Npo | Method::SalUn => {
            (None, Some(method.lambda.unwrap_or(1.0)))
        }
        _ => (None, None),
    }
}

/// Group records by (method, alpha, lambda) preserving first-seen order and
/// aggregate each group over its seeds.
pub fn aggregate_rows(records: &[RunRecord]) -> lethe_core::Result<Vec<AggregateRow>> {
    let mut order: Vec<(String, Option<f64>, Option<f64>)> = Vec::new();
    let mut groups: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    for r in records {
        let key = format!("{}|{:?}|{:?}", r.method, r.alpha, r.lambda);
        if !groups.contains_key(&key) {
            order.push((r.method.clone(), r.alpha, r.lambda));
        }
        groups.entry(key).or_default().push(r.report.clone());
    }
    let mut rows = Vec::with_capacity(order.len());
    for (method, alpha, lambda) in order {
        let key = format!("{method}|{alpha:?}|{lambda:?}");
        let aggregate = eval::seed_aggregate(&groups[&key])?;
        rows.push(AggregateRow {
            method,
            alpha,
            lambda,
            aggregate,
        });
    }
    Ok(rows)
}

/// Scan a directory of per-run JSON records and rebuild the aggregate
/// reports (the `report` subcommand).
pub fn report_dir(dir: &Path) -> Result<()> {
    let runs_dir = dir.join("runs");
    let mut records = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&runs_dir)
        .with_context(|| format!("reading {}", runs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        let record: RunRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("no run records under {}", runs_dir.display());
    }
    // Deterministic order: method name, then alpha, then seed.
    records.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.alpha.partial_cmp(&b.alpha).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.seed.cmp(&b.seed))
    });
    report::write_runs_csv(&dir.join("runs.csv"), &records)?;
    let rows = aggregate_rows(&records).map_err(core_err)?;
    report::write_aggregate_csv(&dir.join("aggregate.csv"), &rows)?;
    report::write_json(&dir.join("summary.json"), &SummaryDoc {
        name: dir.display().to_string(),
        fingerprint: records[0].fingerprint.clone(),
        runs: records,
        aggregates: rows,
    })?;
    Ok(())
}
