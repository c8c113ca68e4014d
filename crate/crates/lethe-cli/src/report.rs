//! Report files: run-level CSV/JSON, aggregates, sweep frontier, attack
//! trajectories, and the dataset export.
//!
//! Everything except wall-clock runtime is deterministic for a fixed config
//! and seed set; runtime fields are the documented exception and also land
//! in a separate timing log.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use lethe_core::attack::AttackOutcome;
use lethe_core::data::{FactDataset, Split};
use lethe_core::eval::{Aggregate, EvalReport};

use crate::checkpoint::write_atomic;

/// Everything recorded for one (method, seed, sweep-point) run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    /// Fingerprint of the experiment config this run came from.
    pub fingerprint: String,
    pub method: String,
    pub seed: u64,
    /// SAF alpha_max when applicable.
    pub alpha: Option<f64>,
    /// Retain weight actually used.
    pub lambda: Option<f64>,
    pub report: EvalReport,
    #[serde(default)]
    pub attacks: Vec<AttackOutcome>,
    pub checkpoint: String,
    /// Wall-clock seconds (unlearn + evaluate); non-deterministic by nature.
    pub wall_seconds: f64,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub const RUN_CSV_HEADER: &str =
    "method,seed,alpha,lambda,fa,ra,q_int8,q_int4,ra_int4,mia_auc,kappa,cert,runtime_s";

pub fn run_csv_row(r: &RunRecord) -> String {
    let e = &r.report;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
        r.method,
        r.seed,
        fmt_opt(r.alpha),
        fmt_opt(r.lambda),
        e.fa,
        e.ra,
        e.q_int8,
        e.q_int4,
        e.ra_int4,
        e.mia_auc,
        e.kappa,
        e.cert,
        e.runtime_seconds
    )
}

pub fn write_runs_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::from(RUN_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&run_csv_row(r));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub const AGGREGATE_CSV_HEADER: &str = "method,alpha,lambda,n,fa_mean,fa_std,ra_mean,ra_std,\
q_int8_mean,q_int8_std,q_int4_mean,q_int4_std,ra_int4_mean,ra_int4_std,mia_auc_mean,mia_auc_std,\
kappa_mean,kappa_std,cert_rate,runtime_s_mean,runtime_s_std";

/// One aggregate row per (method, alpha, lambda) group.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub aggregate: Aggregate,
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let a = &row.aggregate;
        let ms = |m: &lethe_core::eval::MeanStd| format!("{},{}", m.mean, m.std);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3}\n",
            row.method,
            fmt_opt(row.alpha),
            fmt_opt(row.lambda),
            a.n,
            ms(&a.fa),
            ms(&a.ra),
            ms(&a.q_int8),
            ms(&a.q_int4),
            ms(&a.ra_int4),
            ms(&a.mia_auc),
            ms(&a.kappa),
            a.cert_rate(),
            a.runtime_seconds.mean,
            a.runtime_seconds.std,
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub const FRONTIER_CSV_HEADER: &str = "alpha,lambda,fa,ra,q_int8,q_int4,cert";

/// Frontier CSV of an alpha sweep: one row per alpha value.
pub fn write_frontier_csv(path: &Path, rows: &[RunRecord]) -> Result<()> {
    let mut out = String::from(FRONTIER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_opt(r.alpha),
            fmt_opt(r.lambda),
            e.fa,
            e.ra,
            e.q_int8,
            e.q_int4,
            e.cert
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Attack trajectory: step, fa, ra per sample point.
pub fn write_trajectory_csv(path: &Path, outcome: &AttackOutcome) -> Result<()> {
    let mut out = String::from("step,fa,ra\n");
    for p in &outcome.trajectory {
        out.push_str(&format!("{},{},{}\n", p.step, p.fa, p.ra));
    }
    write_atomic(path, out.as_bytes())
}

/// Dataset export: entity,attribute,value,split in generation order.
pub fn write_dataset_csv(path: &Path, dataset: &FactDataset) -> Result<()> {
    let mut out = String::from("entity,attribute,value,split\n");
    for (fact, split) in dataset.iter() {
        let split = match split {
            Split::Forget => "forget",
            Split::Retain => "retain",
            Split::Holdout => "holdout",
        };
        out.push_str(&format!(
            "{},{},{},{split}\n",
            fact.entity, fact.attribute, fact.value
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Timing log (the non-deterministic sidecar).
pub fn write_timings_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::from("method,seed,alpha,wall_seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.method,
            r.seed,
            fmt_opt(r.alpha),
            r.wall_seconds
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
