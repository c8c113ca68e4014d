//! Metrics, the durability certificate, the trilemma predicate, and the
//! loss-landscape diagnostics.
//!
//! Forget/retain accuracy, their quantized counterparts, a loss-threshold
//! membership-inference AUC, local sharpness, a second-order recovery bound
//! check, and the sharpness lower bound that ties retain preservation to
//! quantization fragility.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::data::{Fact, FactDataset, Split};
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig};
use crate::params::{ParamEntry, ParamSet};
use crate::quant::{self, QuantScope, QuantSpec};

/// Weight precisions a deployment might use. Full precision is the identity
/// (no rounding is simulated for the reference precision).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Precision {
    Full,
    Int8,
    Int4,
}

impl Precision {
    pub fn name(&self) -> &'static str {
        match self {
            Precision::Full => "full",
            Precision::Int8 => "int8",
            Precision::Int4 => "int4",
        }
    }
}

/// Metrics of one evaluated checkpoint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub fa: f64,
    pub ra: f64,
    pub q_int8: f64,
    pub q_int4: f64,
    pub ra_int4: f64,
    pub mia_auc: f64,
    pub kappa: f64,
    pub cert: bool,
    /// q_int4 / fa; undefined when fa is zero.
    pub recovery_ratio: Option<f64>,
    pub runtime_seconds: f64,
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of facts whose argmax logit equals the value token. Ties break
/// toward the lowest token index.
pub fn accuracy(model_cfg: &ModelConfig, params: &ParamSet, facts: &[Fact]) -> Result<f64> {
    if facts.is_empty() {
        return Err(Error::EmptySplit { what: "accuracy split" });
    }
    let mut correct = 0usize;
    for chunk in facts.chunks(1024) {
        let pairs: Vec<(usize, usize)> = chunk.iter().map(|f| (f.entity, f.attribute)).collect();
        let logits = model::logits_value(model_cfg, params, &pairs)?;
        for (i, fact) in chunk.iter().enumerate() {
            if argmax_lowest(logits.row(i)) == fact.value {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / facts.len() as f64)
}

/// Accuracy of the quantized image of `params`; the input is untouched.
pub fn quantized_accuracy(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    spec: &QuantSpec,
    facts: &[Fact],
) -> Result<f64> {
    let quantized = quant::quantize(params, spec)?;
    accuracy(model_cfg, &quantized, facts)
}

/// Rank-sum AUC from raw scores, ties counted as one half. Built so that
/// auc(a, b) + auc(b, a) == 1.0 holds exactly.
pub fn auc_from_scores(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &m in members {
        for &n in nonmembers {
            if m > n {
                wins += 1;
            } else if m == n {
                ties += 1;
            }
        }
    }
    let d = 2 * (members.len() as u64) * (nonmembers.len() as u64);
    let u = 2 * wins + ties;
    if 2 * u <= d {
        u as f64 / d as f64
    } else {
        1.0 - ((d - u) as f64 / d as f64)
    }
}

/// Membership inference via per-example loss: members should score higher
/// (lower loss) than never-trained examples. 0.5 means no leakage.
pub fn mia_auc(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    members: &[Fact],
    nonmembers: &[Fact],
) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptySplit { what: "mia split" });
    }
    let score = |facts: &[Fact]| -> Result<Vec<f64>> {
        Ok(model::per_example_losses(model_cfg, params, facts)?
            .into_iter()
            .map(|l| -l)
            .collect())
    };
    Ok(auc_from_scores(&score(members)?, &score(nonmembers)?))
}

fn trainable_or_all(entry: &ParamEntry, any_trainable: bool) -> bool {
    !any_trainable || !entry.frozen
}

/// Gradient of the mean forget loss over the full split, as a map.
fn full_split_grads(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    facts: &[Fact],
) -> Result<crate::autodiff::GradMap> {
    let mut tape = Tape::new();
    let nodes = tape.register(params)?;
    let loss = model::ce_mean_node(&mut tape, model_cfg, &nodes, facts)?;
    tape.backward(loss)
}

/// Local sharpness: Euclidean norm of the full-forget-set gradient over the
/// trainable entries (over everything when nothing is trainable).
pub fn sharpness(model_cfg: &ModelConfig, params: &ParamSet, forget: &[Fact]) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::EmptySplit { what: "forget split" });
    }
    let grads = full_split_grads(model_cfg, params, forget)?;
    let any_trainable = params.iter().any(|(_, e)| !e.frozen);
    let mut acc = 0.0;
    for (name, entry) in params.iter() {
        if trainable_or_all(entry, any_trainable) {
            for &g in grads[name].data() {
                acc += g * g;
            }
        }
    }
    Ok(libm::sqrt(acc))
}

/// Max adjacent-pair gradient difference quotient over `samples` evenly
/// spaced points on the segment [from, to]. A discrete lower estimate of the
/// smoothness constant of the loss along the path.
pub fn lipschitz_estimate<G>(grad_fn: G, from: &[f64], to: &[f64], samples: usize) -> Result<f64>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    assert!(samples >= 2, "need at least two segment samples");
    let n = from.len();
    let point = |i: usize| -> Vec<f64> {
        let t = i as f64 / (samples - 1) as f64;
        (0..n).map(|j| from[j] + t * (to[j] - from[j])).collect()
    };
    let mut l_hat = 0.0f64;
    let mut prev_p = point(0);
    let mut prev_g = grad_fn(&prev_p)?;
    for i in 1..samples {
        let p = point(i);
        let g = grad_fn(&p)?;
        let mut dg = 0.0;
        let mut dp = 0.0;
        for j in 0..n {
            let a = g[j] - prev_g[j];
            let b = p[j] - prev_p[j];
            dg += a * a;
            dp += b * b;
        }
        if dp > 0.0 {
            l_hat = l_hat.max(libm::sqrt(dg) / libm::sqrt(dp));
        }
        prev_p = p;
        prev_g = g;
    }
    Ok(l_hat)
}

/// Second-order bound on the forget-loss shift under a weight perturbation:
/// |L(to) - L(from)| <= kappa * delta + (L_hat / 2) * delta^2.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecoveryBoundReport {
    pub kappa: f64,
    pub delta: f64,
    pub l_hat: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

const DIAG_TOL: f64 = 1e-9;

/// Evaluate the recovery bound between two flat parameter vectors using
/// caller-supplied loss/gradient closures. `holds` allows slack 1e-9; the
/// smoothness estimate is sampled, so a false flag is a diagnostic, not an
/// error.
pub fn recovery_bound_core<F, G>(
    loss_fn: F,
    grad_fn: G,
    from: &[f64],
    to: &[f64],
    samples: usize,
) -> Result<RecoveryBoundReport>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut delta_sq = 0.0;
    for (a, b) in from.iter().zip(to) {
        let d = b - a;
        delta_sq += d * d;
    }
    let delta = libm::sqrt(delta_sq);
    let g0 = grad_fn(from)?;
    let kappa = libm::sqrt(g0.iter().map(|g| g * g).sum());
    let l_hat = if delta > 0.0 {
        lipschitz_estimate(&grad_fn, from, to, samples)?
    } else {
        0.0
    };
    let lhs = libm::fabs(loss_fn(to)? - loss_fn(from)?);
    let rhs = kappa * delta + 0.5 * l_hat * delta * delta;
    Ok(RecoveryBoundReport {
        kappa,
        delta,
        l_hat,
        lhs,
        rhs,
        holds: lhs <= rhs + DIAG_TOL * rhs.abs().max(1.0),
    })
}

/// Sharpness lower bound from retain preservation: if unlearning raised the
/// forget loss by `loss_gain` while moving only `rho` in parameter space,
/// then kappa >= loss_gain / rho - L_hat * rho.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SharpnessBoundReport {
    pub kappa: f64,
    /// L_f(theta*) - L_f(theta_0); negative if unlearning failed.
    pub loss_gain: f64,
    pub rho: f64,
    pub l_hat: f64,
    /// None when rho = 0 (the bound is undefined at zero displacement).
    pub rhs: Option<f64>,
    pub holds: bool,
}

pub fn prop1_core<F, G>(
    loss_fn: F,
    grad_fn: G,
    theta0: &[f64],
    theta_star: &[f64],
    samples: usize,
) -> Result<SharpnessBoundReport>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut rho_sq = 0.0;
    for (a, b) in theta0.iter().zip(theta_star) {
        let d = b - a;
        rho_sq += d * d;
    }
    let rho = libm::sqrt(rho_sq);
    let g = grad_fn(theta_star)?;
    let kappa = libm::sqrt(g.iter().map(|x| x * x).sum());
    let loss_gain = loss_fn(theta_star)? - loss_fn(theta0)?;
    if rho == 0.0 {
        return Ok(SharpnessBoundReport {
            kappa,
            loss_gain,
            rho,
            l_hat: 0.0,
            rhs: None,
            holds: true,
        });
    }
    let l_hat = lipschitz_estimate(&grad_fn, theta0, theta_star, samples)?;
    let rhs = loss_gain / rho - l_hat * rho;
    Ok(SharpnessBoundReport {
        kappa,
        loss_gain,
        rho,
        l_hat,
        rhs: Some(rhs),
        holds: kappa >= rhs - DIAG_TOL * rhs.abs().max(1.0),
    })
}

/// Number of segment samples for the smoothness estimate.
pub const SEGMENT_SAMPLES: usize = 32;

fn scope_filter(scope: QuantScope) -> impl Fn(&str, &ParamEntry) -> bool {
    move |_, e| scope.selects(e)
}

/// Select by name according to `params`' own trainable scope, so the same
/// coordinate set applies to another checkpoint whose frozen flags differ.
fn trainable_filter(params: &ParamSet) -> impl Fn(&str, &ParamEntry) -> bool {
    let any_trainable = params.iter().any(|(_, e)| !e.frozen);
    let selected: alloc::collections::BTreeSet<alloc::string::String> = params
        .iter()
        .filter(|(_, e)| trainable_or_all(e, any_trainable))
        .map(|(n, _)| n.clone())
        .collect();
    move |name, _| selected.contains(name)
}

fn model_loss_and_grad<'a>(
    model_cfg: &'a ModelConfig,
    template: &'a ParamSet,
    filter: alloc::rc::Rc<dyn Fn(&str, &ParamEntry) -> bool + 'a>,
    forget: &'a [Fact],
) -> (
    impl Fn(&[f64]) -> Result<f64> + 'a,
    impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
) {
    let f1 = filter.clone();
    let loss_fn = move |flat: &[f64]| -> Result<f64> {
        let p = template.unflatten(|n, e| f1(n, e), flat)?;
        model::batch_loss(model_cfg, &p, forget)
    };
    let f2 = filter;
    let grad_fn = move |flat: &[f64]| -> Result<Vec<f64>> {
        let p = template.unflatten(|n, e| f2(n, e), flat)?;
        let grads = full_split_grads(model_cfg, &p, forget)?;
        let mut out = Vec::new();
        for (name, entry) in p.iter() {
            if f2(name, entry) {
                out.extend_from_slice(grads[name].data());
            }
        }
        Ok(out)
    };
    (loss_fn, grad_fn)
}

/// Recovery bound diagnostic on the model: perturb `theta_star` by simulated
/// quantization over the spec's scope and compare the forget-loss shift to
/// kappa * delta + (L_hat / 2) * delta^2.
pub fn recovery_bound_check(
    model_cfg: &ModelConfig,
    theta_star: &ParamSet,
    spec: &QuantSpec,
    forget: &[Fact],
) -> Result<RecoveryBoundReport> {
    if forget.is_empty() {
        return Err(Error::EmptySplit { what: "forget split" });
    }
    let quantized = quant::quantize(theta_star, spec)?;
    let filter: alloc::rc::Rc<dyn Fn(&str, &ParamEntry) -> bool> =
        alloc::rc::Rc::new(scope_filter(spec.scope));
    let from = theta_star.flatten(|n, e| filter(n, e));
    let to = quantized.flatten(|n, e| filter(n, e));
    let (loss_fn, grad_fn) = model_loss_and_grad(model_cfg, theta_star, filter, forget);
    recovery_bound_core(loss_fn, grad_fn, &from, &to, SEGMENT_SAMPLES)
}

/// Sharpness lower-bound diagnostic between the pretrained and unlearned
/// checkpoints over the trainable scope.
pub fn prop1_check(
    model_cfg: &ModelConfig,
    theta0: &ParamSet,
    theta_star: &ParamSet,
    forget: &[Fact],
) -> Result<SharpnessBoundReport> {
    if forget.is_empty() {
        return Err(Error::EmptySplit { what: "forget split" });
    }
    let filter: alloc::rc::Rc<dyn Fn(&str, &ParamEntry) -> bool> =
        alloc::rc::Rc::new(trainable_filter(theta_star));
    let from = theta0.flatten(|n, e| filter(n, e));
    let to = theta_star.flatten(|n, e| filter(n, e));
    let (loss_fn, grad_fn) = model_loss_and_grad(model_cfg, theta_star, filter, forget);
    prop1_core(loss_fn, grad_fn, &from, &to, SEGMENT_SAMPLES)
}

/// Durable iff the forget accuracy stays at or below epsilon at every
/// required precision. Errors when a required precision is missing.
pub fn certificate(
    fa_by_precision: &BTreeMap<Precision, f64>,
    required: &[Precision],
    epsilon: f64,
) -> Result<bool> {
    for p in required {
        let fa = fa_by_precision
            .get(p)
            .ok_or(Error::MissingPrecision { precision: p.name() })?;
        if *fa > epsilon {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TrilemmaCondition {
    /// (i) forget accuracy at or below its threshold.
    Forgetting,
    /// (ii) retain accuracy at or above its threshold.
    Retention,
    /// (iii) quantized forget accuracy at or below its threshold.
    QuantRobustness,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrilemmaOutcome {
    pub satisfied: bool,
    pub failed: Vec<TrilemmaCondition>,
}

/// Check FA <= t1, RA >= t2, Q-INT4 <= t3 and report which conditions fail.
pub fn trilemma(fa: f64, ra: f64, q_int4: f64, thresholds: (f64, f64, f64)) -> TrilemmaOutcome {
    let mut failed = Vec::new();
    if fa > thresholds.0 {
        failed.push(TrilemmaCondition::Forgetting);
    }
    if ra < thresholds.1 {
        failed.push(TrilemmaCondition::Retention);
    }
    if q_int4 > thresholds.2 {
        failed.push(TrilemmaCondition::QuantRobustness);
    }
    TrilemmaOutcome {
        satisfied: failed.is_empty(),
        failed,
    }
}

pub const TRILEMMA_DEFAULT: (f64, f64, f64) = (0.05, 0.50, 0.05);

/// Mean and sample standard deviation (n - 1 denominator; zero for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean_std of empty slice");
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var))
}

/// Conservative display rounding at three decimals: means round down.
/// A nudge of 1e-9 on the scaled value absorbs float dust without moving
/// genuine data.
pub fn floor_3dp(x: f64) -> f64 {
    libm::floor(x * 1000.0 + 1e-9) / 1000.0
}

/// Conservative display rounding at three decimals: spreads round up.
pub fn ceil_3dp(x: f64) -> f64 {
    libm::ceil(x * 1000.0 - 1e-9) / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-field mean and std over a batch of reports plus the certificate rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub n: usize,
    pub fa: MeanStd,
    pub ra: MeanStd,
    pub q_int8: MeanStd,
    pub q_int4: MeanStd,
    pub ra_int4: MeanStd,
    pub mia_auc: MeanStd,
    pub kappa: MeanStd,
    pub runtime_seconds: MeanStd,
    pub certified: usize,
}

impl Aggregate {
    pub fn cert_rate(&self) -> f64 {
        self.certified as f64 / self.n as f64
    }
}

pub fn seed_aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::EmptySplit { what: "report set" });
    }
    let field = |f: fn(&EvalReport) -> f64| -> MeanStd {
        let values: Vec<f64> = reports.iter().map(f).collect();
        let (mean, std) = mean_std(&values);
        MeanStd { mean, std }
    };
    Ok(Aggregate {
        n: reports.len(),
        fa: field(|r| r.fa),
        ra: field(|r| r.ra),
        q_int8: field(|r| r.q_int8),
        q_int4: field(|r| r.q_int4),
        ra_int4: field(|r| r.ra_int4),
        mia_auc: field(|r| r.mia_auc),
        kappa: field(|r| r.kappa),
        runtime_seconds: field(|r| r.runtime_seconds),
        certified: reports.iter().filter(|r| r.cert).count(),
    })
}

/// Quantization specs and certificate settings for one evaluation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    pub int4: QuantSpec,
    pub int8: QuantSpec,
    pub precisions: Vec<Precision>,
    pub epsilon: f64,
}

impl EvalConfig {
    pub fn standard(scope: QuantScope, epsilon: f64) -> Self {
        EvalConfig {
            int4: QuantSpec::int4(scope),
            int8: QuantSpec::int8(scope),
            precisions: alloc::vec![Precision::Full, Precision::Int8, Precision::Int4],
            epsilon,
        }
    }
}

/// Full metric sweep of one checkpoint. `runtime_seconds` is left at zero;
/// the harness stamps it from its own clock.
pub fn evaluate(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    dataset: &FactDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let forget = dataset.split(Split::Forget);
    let retain = dataset.split(Split::Retain);
    let holdout = dataset.split(Split::Holdout);
    let fa = accuracy(model_cfg, params, &forget)?;
    let ra = accuracy(model_cfg, params, &retain)?;
    let int8_set = quant::quantize(params, &cfg.int8)?;
    let int4_set = quant::quantize(params, &cfg.int4)?;
    let q_int8 = accuracy(model_cfg, &int8_set, &forget)?;
    let q_int4 = accuracy(model_cfg, &int4_set, &forget)?;
    let ra_int4 = accuracy(model_cfg, &int4_set, &retain)?;
    let mia = if holdout.is_empty() {
        0.5
    } else {
        mia_auc(model_cfg, params, &forget, &holdout)?
    };
    let kappa = sharpness(model_cfg, params, &forget)?;
    let mut by_precision = BTreeMap::new();
    by_precision.insert(Precision::Full, fa);
    by_precision.insert(Precision::Int8, q_int8);
    by_precision.insert(Precision::Int4, q_int4);
    let cert = certificate(&by_precision, &cfg.precisions, cfg.epsilon)?;
    Ok(EvalReport {
        fa,
        ra,
        q_int8,
        q_int4,
        ra_int4,
        mia_auc: mia,
        kappa,
        cert,
        recovery_ratio: if fa > 0.0 { Some(q_int4 / fa) } else { None },
        runtime_seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc_from_scores(&[2.0, 1.0], &[0.0]), 1.0);
        assert_eq!(auc_from_scores(&[1.0], &[1.0]), 0.5);
        assert_eq!(auc_from_scores(&[0.0], &[2.0, 1.0]), 0.0);
    }

    #[test]
    fn auc_symmetry_is_exact() {
        let a = [0.3, 1.7, 0.3, -2.0, 0.9];
        let b = [0.3, 0.1, 2.5];
        assert_eq!(auc_from_scores(&a, &b) + auc_from_scores(&b, &a), 1.0);
    }

    #[test]
    fn certificate_replays() {
        let mut m = BTreeMap::new();
        m.insert(Precision::Full, 0.040);
        m.insert(Precision::Int8, 0.000);
        m.insert(Precision::Int4, 0.044);
        let all = [Precision::Full, Precision::Int8, Precision::Int4];
        assert!(certificate(&m, &all, 0.047).unwrap());

        let mut m2 = BTreeMap::new();
        m2.insert(Precision::Full, 0.011);
        m2.insert(Precision::Int8, 0.000);
        m2.insert(Precision::Int4, 0.051);
        assert!(!certificate(&m2, &all, 0.05).unwrap());

        let mut zeros = BTreeMap::new();
        for p in all {
            zeros.insert(p, 0.0);
        }
        assert!(certificate(&zeros, &all, 0.0).unwrap());
    }

    #[test]
    fn certificate_requires_all_precisions() {
        let mut m = BTreeMap::new();
        m.insert(Precision::Full, 0.0);
        let all = [Precision::Full, Precision::Int8, Precision::Int4];
        assert!(matches!(
            certificate(&m, &all, 0.05),
            Err(Error::MissingPrecision { .. })
        ));
    }

    #[test]
    fn trilemma_replays() {
        let out = trilemma(0.008, 0.510, 0.151, TRILEMMA_DEFAULT);
        assert!(!out.satisfied);
        assert_eq!(out.failed, alloc::vec![TrilemmaCondition::QuantRobustness]);

        let out = trilemma(0.041, 0.045, 0.041, TRILEMMA_DEFAULT);
        assert!(!out.satisfied);
        assert_eq!(out.failed, alloc::vec![TrilemmaCondition::Retention]);

        let out = trilemma(0.04, 0.60, 0.04, TRILEMMA_DEFAULT);
        assert!(out.satisfied);
        assert!(out.failed.is_empty());
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[0.5]);
        assert_eq!((m, s), (0.5, 0.0));
        let (m, s) = mean_std(&[0.044, 0.042, 0.045]);
        assert!((m - 0.0437).abs() < 1e-4);
        assert!((s - 0.0015).abs() < 1e-4);
    }

    #[test]
    fn prop1_closed_form_quadratic() {
        // L(x) = 0.5 * c * x^2 from 0 to rho: kappa = c*rho, M = 0.5*c*rho^2,
        // rhs = M/rho - c*rho = -0.5*c*rho, analytic slack 1.5*c*rho.
        let c = 4.0;
        let rho = 0.8;
        let loss = |x: &[f64]| Ok(0.5 * c * x[0] * x[0]);
        let grad = |x: &[f64]| Ok(alloc::vec![c * x[0]]);
        let report = prop1_core(loss, grad, &[0.0], &[rho], 32).unwrap();
        assert!((report.kappa - c * rho).abs() < 1e-12);
        assert!((report.loss_gain - 0.5 * c * rho * rho).abs() < 1e-12);
        let rhs = report.rhs.unwrap();
        assert!((rhs + 0.5 * c * rho).abs() < 1e-9, "rhs {rhs}");
        assert!(report.holds);
        assert!(report.kappa - rhs > c * rho * 1.4, "analytic slack missing");
    }

    #[test]
    fn prop1_zero_displacement() {
        let loss = |x: &[f64]| Ok(x[0] * x[0]);
        let grad = |x: &[f64]| Ok(alloc::vec![2.0 * x[0]]);
        let report = prop1_core(loss, grad, &[0.3], &[0.3], 32).unwrap();
        assert_eq!(report.rho, 0.0);
        assert!(report.rhs.is_none());
        assert!(report.holds);
    }

    #[test]
    fn recovery_bound_tight_on_quadratic() {
        // L(x) = 0.5 * c * x^2, from a to a + d with a, d > 0:
        // lhs = c*a*d + 0.5*c*d^2 = kappa*delta + (L/2)*delta^2 exactly.
        let c = 3.0;
        let a = 0.7;
        let d = 0.2;
        let loss = |x: &[f64]| Ok(0.5 * c * x[0] * x[0]);
        let grad = |x: &[f64]| Ok(alloc::vec![c * x[0]]);
        let report = recovery_bound_core(loss, grad, &[a], &[a + d], 32).unwrap();
        assert!((report.l_hat - c).abs() < 1e-9);
        assert!((report.lhs - report.rhs).abs() < 1e-9);
        assert!(report.holds);
    }

    #[test]
    fn recovery_bound_zero_delta() {
        let loss = |x: &[f64]| Ok(x[0]);
        let grad = |_: &[f64]| Ok(alloc::vec![1.0]);
        let report = recovery_bound_core(loss, grad, &[0.5], &[0.5], 32).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert!(report.holds);
    }

    #[test]
    fn display_rounding_matches_reporting_convention() {
        assert_eq!(floor_3dp(0.0436667), 0.043);
        assert_eq!(ceil_3dp(0.0015275), 0.002);
        assert_eq!(floor_3dp(0.1), 0.1);
        assert_eq!(ceil_3dp(0.0480312), 0.049);
    }

    #[test]
    fn recovery_ratio_replay() {
        // Downstream logic on published inputs: 0.262 / 0.028 = 9.4x.
        let ratio: f64 = 0.262 / 0.028;
        assert!((ratio - 9.3571428571).abs() < 1e-9);
        assert_eq!(libm::round(ratio * 10.0) / 10.0, 9.4);
    }
}
