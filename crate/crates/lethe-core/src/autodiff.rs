//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations are recorded on a tape (an arena of nodes in construction
//! order, which is already a topological order). `backward` walks the tape
//! in reverse index order and accumulates gradients in that fixed order, so
//! repeated runs are bit-identical.
//!
//! The primitive set is exactly what the memorization model, the unlearning
//! objectives, and the landscape diagnostics need — no broadcasting, no
//! higher-order derivatives.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tensor::{matmul, matmul_ta, matmul_tb, Tensor};

pub type NodeId = usize;

/// Gradients keyed by parameter name, shape-congruent with their parameters.
pub type GradMap = BTreeMap<String, Tensor>;

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_K: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + libm::tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = libm::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Const,
    Matmul { a: NodeId, b: NodeId },
    MatmulTb { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    ConcatCols { a: NodeId, b: NodeId },
    Gelu { a: NodeId },
    EmbedLookup { table: NodeId, indices: Vec<usize> },
    SoftmaxCrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Tensor },
    KlToRef { logits: NodeId, ref_logprobs: Tensor, probs: Tensor, logprobs: Tensor },
    Mean { a: NodeId },
    Sum { a: NodeId },
    SumSq { a: NodeId },
    Softplus { a: NodeId },
    SteQuant { a: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, opname: &'static str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: opname });
        }
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    /// Register a named parameter leaf. Every registered leaf gets an entry
    /// in the gradient map, zero-filled if the loss never reaches it.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidConfig(alloc::format!(
                "parameter {name} registered twice on one tape"
            )));
        }
        let id = self.push(Op::Param, value, "param")?;
        self.params.insert(String::from(name), id);
        Ok(id)
    }

    /// Register every entry of a parameter set; returns name -> node.
    pub fn register(&mut self, params: &ParamSet) -> Result<BTreeMap<String, NodeId>> {
        let mut out = BTreeMap::new();
        for (name, entry) in params.iter() {
            out.insert(name.clone(), self.param(name, entry.tensor.clone())?);
        }
        Ok(out)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Const, value, "constant")
    }

    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// C = A * B.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, matmul(va.data(), vb.data(), m, k, n))?;
        self.push(Op::Matmul { a, b }, out, "matmul")
    }

    /// C = A * B^T (B stored row-major as n x k).
    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (n, k2) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_tb",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, matmul_tb(va.data(), vb.data(), m, k, n))?;
        self.push(Op::MatmulTb { a, b }, out, "matmul_tb")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Add { a, b }, out, "add")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| c * x).collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Scale { a, c }, out, "scale")
    }

    /// Column-wise concat of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, da) = (va.rows(), va.cols());
        let (m2, db) = (vb.rows(), vb.cols());
        if m != m2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * (da + db));
        for i in 0..m {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let out = Tensor::matrix(m, da + db, data)?;
        self.push(Op::ConcatCols { a, b }, out, "concat_cols")
    }

    /// Elementwise GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Gelu { a }, out, "gelu")
    }

    /// Gather rows of an embedding table.
    pub fn embed_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (vocab, dim) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &idx in indices {
            if idx >= vocab {
                return Err(Error::IndexOutOfRange { index: idx, vocab });
            }
            data.extend_from_slice(vt.row(idx));
        }
        let out = Tensor::matrix(indices.len(), dim, data)?;
        self.push(
            Op::EmbedLookup {
                table,
                indices: indices.to_vec(),
            },
            out,
            "embed_lookup",
        )
    }

    /// Per-example softmax cross-entropy against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let vl = self.value(logits);
        let (n, k) = (vl.rows(), vl.cols());
        if n != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: vl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut losses = Vec::with_capacity(n);
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::IndexOutOfRange { index: t, vocab: k });
            }
            let row = vl.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for &v in row {
                denom += libm::exp(v - max);
            }
            let lse = max + libm::log(denom);
            losses.push(lse - row[t]);
            for &v in row {
                probs.push(libm::exp(v - max) / denom);
            }
        }
        let probs = Tensor::matrix(n, k, probs)?;
        let out = Tensor::from_vec(vec![n], losses)?;
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            out,
            "softmax_cross_entropy",
        )
    }

    /// Per-example KL(softmax(logits) || softmax(ref_logits)) with the
    /// reference treated as a constant.
    pub fn kl_to_ref(&mut self, logits: NodeId, ref_logits: &Tensor) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.shape() != ref_logits.shape() {
            return Err(Error::ShapeMismatch {
                op: "kl_to_ref",
                left: vl.shape().to_vec(),
                right: ref_logits.shape().to_vec(),
            });
        }
        let (n, k) = (vl.rows(), vl.cols());
        let log_softmax = |row: &[f64], out: &mut Vec<f64>| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for &v in row {
                denom += libm::exp(v - max);
            }
            let lse = max + libm::log(denom);
            for &v in row {
                out.push(v - lse);
            }
        };
        let mut logp = Vec::with_capacity(n * k);
        let mut logq = Vec::with_capacity(n * k);
        for i in 0..n {
            log_softmax(vl.row(i), &mut logp);
            log_softmax(ref_logits.row(i), &mut logq);
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut kls = Vec::with_capacity(n);
        for i in 0..n {
            let mut kl = 0.0;
            for j in 0..k {
                let p = libm::exp(logp[i * k + j]);
                probs.push(p);
                kl += p * (logp[i * k + j] - logq[i * k + j]);
            }
            kls.push(kl);
        }
        let probs = Tensor::matrix(n, k, probs)?;
        let logprobs = Tensor::matrix(n, k, logp)?;
        let ref_logprobs = Tensor::matrix(n, k, logq)?;
        let out = Tensor::from_vec(vec![n], kls)?;
        self.push(
            Op::KlToRef {
                logits,
                ref_logprobs,
                probs,
                logprobs,
            },
            out,
            "kl_to_ref",
        )
    }

    /// Mean over all elements -> scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::EmptySplit { what: "mean input" });
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean { a }, Tensor::scalar(m), "mean")
    }

    /// Sum over all elements -> scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Op::Sum { a }, Tensor::scalar(s), "sum")
    }

    /// Sum of squares over all elements -> scalar (squared L2 norm).
    pub fn sum_sq(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().map(|x| x * x).sum::<f64>();
        self.push(Op::SumSq { a }, Tensor::scalar(s), "sum_sq")
    }

    /// Elementwise log(1 + exp(x)), numerically stable.
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|&x| softplus(x)).collect();
        let out = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        self.push(Op::Softplus { a }, out, "softplus")
    }

    /// Straight-through quantization: the forward value is the caller's
    /// quantized image of the input node; backward is identity.
    pub fn ste_quant(&mut self, a: NodeId, quantized: Tensor) -> Result<NodeId> {
        if self.value(a).shape() != quantized.shape() {
            return Err(Error::ShapeMismatch {
                op: "ste_quant",
                left: self.value(a).shape().to_vec(),
                right: quantized.shape().to_vec(),
            });
        }
        self.push(Op::SteQuant { a }, quantized, "ste_quant")
    }

    /// Reverse pass from a scalar loss. Returns a gradient for every
    /// registered parameter; leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<GradMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::from_vec(lv.shape().to_vec(), vec![1.0])?);

        for id in (0..self.nodes.len()).rev() {
            let upstream = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Param | Op::Const => {
                    grads[id] = Some(upstream);
                }
                Op::Matmul { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    let da = matmul_tb(upstream.data(), vb.data(), m, n, k);
                    let db = matmul_ta(va.data(), upstream.data(), k, m, n);
                    accumulate(&mut grads, *a, va.shape(), &da);
                    accumulate(&mut grads, *b, vb.shape(), &db);
                }
                Op::MatmulTb { a, b } => {
                    // Out = A * B^T with A m x k, B n x k, U m x n.
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                    let da = matmul(upstream.data(), vb.data(), m, n, k);
                    let db = matmul_ta(upstream.data(), va.data(), n, m, k);
                    accumulate(&mut grads, *a, va.shape(), &da);
                    accumulate(&mut grads, *b, vb.shape(), &db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, self.value(*a).shape(), upstream.data());
                    accumulate(&mut grads, *b, self.value(*b).shape(), upstream.data());
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = upstream.data().iter().map(|u| c * u).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), &da);
                }
                Op::ConcatCols { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, dca, dcb) = (va.rows(), va.cols(), vb.cols());
                    let mut da = Vec::with_capacity(m * dca);
                    let mut db = Vec::with_capacity(m * dcb);
                    for i in 0..m {
                        let row = &upstream.data()[i * (dca + dcb)..(i + 1) * (dca + dcb)];
                        da.extend_from_slice(&row[..dca]);
                        db.extend_from_slice(&row[dca..]);
                    }
                    accumulate(&mut grads, *a, va.shape(), &da);
                    accumulate(&mut grads, *b, vb.shape(), &db);
                }
                Op::Gelu { a } => {
                    let va = self.value(*a);
                    let da: Vec<f64> = va
                        .data()
                        .iter()
                        .zip(upstream.data())
                        .map(|(&x, u)| u * gelu_grad(x))
                        .collect();
                    accumulate(&mut grads, *a, va.shape(), &da);
                }
                Op::EmbedLookup { table, indices } => {
                    let vt = self.value(*table);
                    let dim = vt.cols();
                    let mut dt = vec![0.0; vt.len()];
                    for (i, &idx) in indices.iter().enumerate() {
                        let urow = &upstream.data()[i * dim..(i + 1) * dim];
                        let trow = &mut dt[idx * dim..(idx + 1) * dim];
                        for j in 0..dim {
                            trow[j] += urow[j];
                        }
                    }
                    accumulate(&mut grads, *table, vt.shape(), &dt);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let vl = self.value(*logits);
                    let (n, k) = (vl.rows(), vl.cols());
                    let mut dl = vec![0.0; n * k];
                    for i in 0..n {
                        let u = upstream.data()[i];
                        for j in 0..k {
                            let indicator = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[i * k + j] = u * (probs.data()[i * k + j] - indicator);
                        }
                    }
                    accumulate(&mut grads, *logits, vl.shape(), &dl);
                }
                Op::KlToRef {
                    logits,
                    ref_logprobs,
                    probs,
                    logprobs,
                } => {
                    let vl = self.value(*logits);
                    let (n, k) = (vl.rows(), vl.cols());
                    let kl = &self.nodes[id].value;
                    let mut dl = vec![0.0; n * k];
                    for i in 0..n {
                        let u = upstream.data()[i];
                        let kli = kl.data()[i];
                        for j in 0..k {
                            let p = probs.data()[i * k + j];
                            let diff = logprobs.data()[i * k + j] - ref_logprobs.data()[i * k + j];
                            dl[i * k + j] = u * p * (diff - kli);
                        }
                    }
                    accumulate(&mut grads, *logits, vl.shape(), &dl);
                }
                Op::Mean { a } => {
                    let va = self.value(*a);
                    let u = upstream.data()[0] / va.len() as f64;
                    let da = vec![u; va.len()];
                    accumulate(&mut grads, *a, va.shape(), &da);
                }
                Op::Sum { a } => {
                    let va = self.value(*a);
                    let da = vec![upstream.data()[0]; va.len()];
                    accumulate(&mut grads, *a, va.shape(), &da);
                }
                Op::SumSq { a } => {
                    let va = self.value(*a);
                    let u = upstream.data()[0];
                    let da: Vec<f64> = va.data().iter().map(|&x| u * 2.0 * x).collect();
                    accumulate(&mut grads, *a, va.shape(), &da);
                }
                Op::Softplus { a } => {
                    let va = self.value(*a);
                    let da: Vec<f64> = va
                        .data()
                        .iter()
                        .zip(upstream.data())
                        .map(|(&x, u)| u * sigmoid(x))
                        .collect();
                    accumulate(&mut grads, *a, va.shape(), &da);
                }
                Op::SteQuant { a } => {
                    accumulate(&mut grads, *a, self.value(*a).shape(), upstream.data());
                }
            }
        }

        let mut out = GradMap::new();
        for (name, &id) in &self.params {
            let g = match grads[id].take() {
                Some(g) => g,
                None => Tensor::zeros(self.value(id).shape().to_vec()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], contribution: &[f64]) {
    match &mut grads[id] {
        Some(g) => {
            for (acc, c) in g.data_mut().iter_mut().zip(contribution) {
                *acc += c;
            }
        }
        None => {
            let t = Tensor::from_vec(shape.to_vec(), contribution.to_vec())
                .expect("contribution shape matches node shape");
            grads[id] = Some(t);
        }
    }
}

/// Tolerances for the central-difference gradient check. A coordinate
/// passes when its error is inside the absolute floor (covers zero and
/// tiny gradients, where central differences cannot resolve a relative
/// target) or within the relative tolerance otherwise.
#[derive(Debug, Clone, Copy)]
pub struct FdTolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for FdTolerance {
    fn default() -> Self {
        FdTolerance {
            rel: 1e-6,
            abs: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdReport {
    /// Max relative error over coordinates outside the absolute floor.
    pub max_rel_err: f64,
    /// Max absolute error over coordinates the floor absorbed.
    pub max_abs_err_floored: f64,
    pub checked: usize,
    pub worst: Option<(String, usize)>,
}

impl FdReport {
    pub fn passes(&self, tol: &FdTolerance) -> bool {
        self.max_rel_err <= tol.rel
    }
}

/// Compare analytic gradients against central finite differences on a random
/// sample of at most `max_coords` coordinates (seeded).
pub fn finite_diff_check<F>(
    loss_fn: F,
    params: &ParamSet,
    grads: &GradMap,
    step: f64,
    max_coords: usize,
    seed: u64,
    tol: &FdTolerance,
) -> Result<FdReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, entry) in params.iter() {
        for idx in 0..entry.tensor.len() {
            coords.push((name.clone(), idx));
        }
    }
    if coords.len() > max_coords {
        let mut rng = Rng::new(seed);
        rng.shuffle(&mut coords);
        coords.truncate(max_coords);
        // Restore a deterministic evaluation order.
        coords.sort();
    }

    let mut report = FdReport {
        max_rel_err: 0.0,
        max_abs_err_floored: 0.0,
        checked: coords.len(),
        worst: None,
    };
    for (name, idx) in coords {
        let perturbed = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            let entry = p.get(&name)?;
            let mut data = entry.tensor.data().to_vec();
            data[idx] += delta;
            let t = Tensor::from_vec(entry.tensor.shape().to_vec(), data)?;
            p.set_tensor(&name, t)?;
            loss_fn(&p)
        };
        let fd = (perturbed(step)? - perturbed(-step)?) / (2.0 * step);
        let ad = grads
            .get(&name)
            .ok_or_else(|| Error::MissingParam { name: name.clone() })?
            .data()[idx];
        let err = libm::fabs(ad - fd);
        if err <= tol.abs {
            if err > report.max_abs_err_floored {
                report.max_abs_err_floored = err;
            }
        } else {
            let rel = err / libm::fabs(fd).max(libm::fabs(ad));
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn matmul_of_scalars() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let b = tape.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[6.0]);
    }

    #[test]
    fn uniform_softmax_cross_entropy_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape
            .constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap())
            .unwrap();
        let ce = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let expected = libm::log(2.0);
        assert!((tape.value(ce).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn gelu_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap())
            .unwrap();
        let y = tape.gelu(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
        // Reference value of the tanh approximation at x = 1.
        assert!((tape.value(y).data()[1] - 0.8411919906082768).abs() < 1e-12);
    }

    #[test]
    fn quadratic_gradient_is_identity() {
        // L = 0.5 * ||theta||^2 -> dL/dtheta = theta.
        let theta = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param("theta", theta.clone()).unwrap();
        let ss = tape.sum_sq(p).unwrap();
        let loss = tape.scale(ss, 0.5).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["theta"], theta);
    }

    #[test]
    fn sum_of_linear_map_gradient() {
        // L = sum(W x) with x fixed: dL/dW[i][j] = x[j] for every i.
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap();
        let mut tape = Tape::new();
        let wp = tape.param("w", w).unwrap();
        let xc = tape.constant(x).unwrap();
        let y = tape.matmul(wp, xc).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["w"].data(), &[5.0, 7.0, 5.0, 7.0]);
    }

    #[test]
    fn unreached_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape
            .param("used", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let _b = tape
            .param("unused", Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["unused"], Tensor::zeros(vec![1, 3]));
        assert_eq!(grads["used"].data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut tape = Tape::new();
        let a = tape
            .param("a", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!(matches!(
            tape.backward(a),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut tape = Tape::new();
        let a = tape
            .param("a", Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, -0.1, 0.05]).unwrap())
            .unwrap();
        let g = tape.gelu(a).unwrap();
        let s = tape.sum_sq(g).unwrap();
        let loss = tape.scale(s, 0.25).unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn ste_passes_gradient_through() {
        // L = sum(Q_ste(theta)) -> gradient of all ones regardless of the
        // rounding applied in the forward value.
        let theta = Tensor::matrix(1, 3, vec![0.7, -0.35, 0.1]).unwrap();
        let quantized = crate::quant::quantize_rows(&theta, 7.0);
        let mut tape = Tape::new();
        let p = tape.param("theta", theta).unwrap();
        let q = tape.ste_quant(p, quantized.clone()).unwrap();
        assert_eq!(tape.value(q), &quantized);
        let loss = tape.sum(q).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["theta"].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let b = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()).unwrap();
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let mut params = ParamSet::new();
        params.insert(
            "theta",
            Tensor::matrix(2, 2, vec![0.4, -0.9, 1.3, 0.2]).unwrap(),
            false,
            ParamKind::Base,
        );
        let loss_fn = |p: &ParamSet| -> Result<f64> {
            let mut tape = Tape::new();
            let t = tape.param("theta", p.tensor("theta")?.clone())?;
            let ss = tape.sum_sq(t)?;
            let loss = tape.scale(ss, 0.5)?;
            Ok(tape.value(loss).scalar_value())
        };
        let mut tape = Tape::new();
        let t = tape.param("theta", params.tensor("theta").unwrap().clone()).unwrap();
        let ss = tape.sum_sq(t).unwrap();
        let loss = tape.scale(ss, 0.5).unwrap();
        let grads = tape.backward(loss).unwrap();
        let tol = FdTolerance::default();
        let report =
            finite_diff_check(loss_fn, &params, &grads, 1e-5, 256, 42, &tol).unwrap();
        assert!(report.max_rel_err <= 1e-8, "rel err {}", report.max_rel_err);
        assert!(report.passes(&tol));
    }

    #[test]
    fn mean_backward_distributes() {
        let mut tape = Tape::new();
        let a = tape
            .param("a", Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let m = tape.mean(a).unwrap();
        assert_eq!(tape.value(m).scalar_value(), 2.5);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads["a"].data(), &[0.25, 0.25, 0.25, 0.25]);
    }
}
