//! Finite-difference validation of the autodiff engine on the full model,
//! the straight-through estimator contract, and backward linearity.

use lethe_core::autodiff::{finite_diff_check, FdTolerance, Tape};
use lethe_core::data::Fact;
use lethe_core::model::{self, ModelConfig};
use lethe_core::params::ParamSet;
use lethe_core::quant::{self, QuantScope, QuantSpec};
use lethe_core::rng::Rng;
use lethe_core::tensor::Tensor;

fn test_model(seed: u64) -> (ModelConfig, ParamSet) {
    let cfg = ModelConfig {
        entity_vocab: 24,
        attribute_vocab: 6,
        value_vocab: 16,
        embed_dim: 8,
        hidden_dim: 20,
        adapter_rank: 3,
        adapter_scale: 2.0,
        seed,
    };
    let mut params = model::init_model(&cfg).unwrap();
    // Give adapter-B nonzero content so every parameter participates.
    let mut rng = Rng::new(Rng::derive(seed, "test-b"));
    for layer in 1..=3 {
        let name = format!("layer{layer}.adapter_b");
        let b = params.tensor(&name).unwrap();
        let data: Vec<f64> = (0..b.len()).map(|_| rng.uniform(-0.2, 0.2)).collect();
        let t = Tensor::from_vec(b.shape().to_vec(), data).unwrap();
        params.set_tensor(&name, t).unwrap();
    }
    (cfg, params)
}

fn sample_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Fact> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| Fact {
            entity: rng.below(cfg.entity_vocab),
            attribute: rng.below(cfg.attribute_vocab),
            value: rng.below(cfg.value_vocab),
        })
        .collect()
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let (cfg, params) = test_model(11);
    let batch = sample_batch(&cfg, 12, 3);
    let mut tape = Tape::new();
    let nodes = tape.register(&params).unwrap();
    let loss = model::ce_mean_node(&mut tape, &cfg, &nodes, &batch).unwrap();
    let grads = tape.backward(loss).unwrap();

    let loss_fn = |p: &ParamSet| model::batch_loss(&cfg, p, &batch);
    let tol = FdTolerance::default();
    let report = finite_diff_check(loss_fn, &params, &grads, 1e-5, 256, 42, &tol).unwrap();
    assert!(
        report.max_rel_err <= 1e-6,
        "relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(report.max_abs_err_floored <= 1e-9);
}

#[test]
fn ste_gradient_equals_finite_difference_at_quantized_point() {
    // d/dtheta L(Q_ste(theta)) must equal dL/dq evaluated at q = Q(theta).
    let (cfg, params) = test_model(13);
    let batch = sample_batch(&cfg, 10, 5);
    let spec = QuantSpec::int4(QuantScope::AllTrainable);

    let mut tape = Tape::new();
    let nodes = tape.register(&params).unwrap();
    let wrapped = quant::ste_wrap(&mut tape, &nodes, &params, &spec).unwrap();
    let loss = model::ce_mean_node(&mut tape, &cfg, &wrapped, &batch).unwrap();
    let grads = tape.backward(loss).unwrap();

    let quantized = quant::quantize(&params, &spec).unwrap();
    let loss_fn = |p: &ParamSet| model::batch_loss(&cfg, p, &batch);
    let tol = FdTolerance::default();
    let report =
        finite_diff_check(loss_fn, &quantized, &grads, 1e-5, 256, 7, &tol).unwrap();
    assert!(
        report.max_rel_err <= 1e-6,
        "relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(report.max_abs_err_floored <= 1e-9);
}

#[test]
fn ste_scope_changes_gradients_only_on_base_entries() {
    let (cfg, params) = test_model(17);
    let batch = sample_batch(&cfg, 8, 9);
    let grads_for = |scope: QuantScope| {
        let mut tape = Tape::new();
        let nodes = tape.register(&params).unwrap();
        let wrapped = quant::ste_wrap(&mut tape, &nodes, &params, &QuantSpec::int4(scope)).unwrap();
        let loss = model::ce_mean_node(&mut tape, &cfg, &wrapped, &batch).unwrap();
        tape.backward(loss).unwrap()
    };
    let g_adapters = grads_for(QuantScope::AdaptersOnly);
    let g_all = grads_for(QuantScope::AllTrainable);
    let mut base_diff = false;
    for (name, entry) in params.iter() {
        let same = g_adapters[name] == g_all[name];
        match entry.kind {
            lethe_core::params::ParamKind::Base => base_diff |= !same,
            _ => {}
        }
    }
    assert!(base_diff, "quantizing the base must change the loss surface");
}

#[test]
fn backward_is_exactly_linear_for_power_of_two_weights() {
    // backward(a*L1 + b*L2) == a*backward(L1) + b*backward(L2) bitwise when
    // a and b are (signed) powers of two: scaling by powers of two commutes
    // exactly with every rounding in the reverse pass, and each parameter
    // node feeds a single consumer per loss term.
    let (cfg, params) = test_model(23);
    let batch1 = sample_batch(&cfg, 6, 21);
    let batch2 = sample_batch(&cfg, 5, 22);

    for (a, b) in [(1.0, 1.0), (2.0, -1.0), (4.0, 8.0), (-2.0, -4.0)] {
        let mut tape = Tape::new();
        let nodes = tape.register(&params).unwrap();
        let l1 = model::ce_mean_node(&mut tape, &cfg, &nodes, &batch1).unwrap();
        let l2 = model::ce_mean_node(&mut tape, &cfg, &nodes, &batch2).unwrap();
        let s1 = tape.scale(l1, a).unwrap();
        let s2 = tape.scale(l2, b).unwrap();
        let combined = tape.add(s1, s2).unwrap();
        let g_combined = tape.backward(combined).unwrap();
        let g1 = tape.backward(l1).unwrap();
        let g2 = tape.backward(l2).unwrap();

        for (name, g) in &g_combined {
            let expected: Vec<f64> = g1[name]
                .data()
                .iter()
                .zip(g2[name].data())
                .map(|(x, y)| a * x + b * y)
                .collect();
            for (got, want) in g.data().iter().zip(&expected) {
                // Bitwise equal, except +-0 count as the same gradient (a
                // negative constant times an untouched zero row flips the
                // zero's sign bit).
                let same = got.to_bits() == want.to_bits() || (*got == 0.0 && *want == 0.0);
                assert!(same, "linearity broke for {name} with a={a}, b={b}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn npo_style_loss_gradient_checks_out() {
    // softplus + constant shift + mean + scale composition.
    let (cfg, params) = test_model(29);
    let batch = sample_batch(&cfg, 6, 31);
    let beta = 1.5;
    let ref_ce: Vec<f64> = model::per_example_losses(&cfg, &params, &batch)
        .unwrap()
        .iter()
        .map(|c| c * 0.8 + 0.05)
        .collect();

    let build = |tape: &mut Tape, p: &ParamSet| {
        let nodes = tape.register(p).unwrap();
        let pairs: Vec<(usize, usize)> = batch.iter().map(|f| (f.entity, f.attribute)).collect();
        let targets: Vec<usize> = batch.iter().map(|f| f.value).collect();
        let logits = model::logits_node(tape, &cfg, &nodes, &pairs).unwrap();
        let ce = tape.softmax_cross_entropy(logits, &targets).unwrap();
        let scaled = tape.scale(ce, -beta).unwrap();
        let shift = tape
            .constant(
                Tensor::from_vec(vec![batch.len()], ref_ce.iter().map(|c| beta * c).collect())
                    .unwrap(),
            )
            .unwrap();
        let z = tape.add(scaled, shift).unwrap();
        let sp = tape.softplus(z).unwrap();
        let mean = tape.mean(sp).unwrap();
        tape.scale(mean, 2.0 / beta).unwrap()
    };

    let mut tape = Tape::new();
    let loss = build(&mut tape, &params);
    let grads = tape.backward(loss).unwrap();
    let loss_fn = |p: &ParamSet| {
        let mut t = Tape::new();
        let l = build(&mut t, p);
        Ok(t.value(l).scalar_value())
    };
    let tol = FdTolerance::default();
    let report = finite_diff_check(loss_fn, &params, &grads, 1e-5, 200, 3, &tol).unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn kl_to_reference_gradient_checks_out() {
    let (cfg, params) = test_model(37);
    let batch = sample_batch(&cfg, 5, 41);
    let pairs: Vec<(usize, usize)> = batch.iter().map(|f| (f.entity, f.attribute)).collect();
    let (ref_cfg, ref_params) = test_model(43);
    assert_eq!(ref_cfg.value_vocab, cfg.value_vocab);
    let ref_logits = model::logits_value(&cfg, &ref_params, &pairs).unwrap();

    let build = |tape: &mut Tape, p: &ParamSet| {
        let nodes = tape.register(p).unwrap();
        let logits = model::logits_node(tape, &cfg, &nodes, &pairs).unwrap();
        let kl = tape.kl_to_ref(logits, &ref_logits).unwrap();
        tape.mean(kl).unwrap()
    };
    let mut tape = Tape::new();
    let loss = build(&mut tape, &params);
    let grads = tape.backward(loss).unwrap();
    let loss_fn = |p: &ParamSet| {
        let mut t = Tape::new();
        let l = build(&mut t, p);
        Ok(t.value(l).scalar_value())
    };
    let tol = FdTolerance::default();
    let report = finite_diff_check(loss_fn, &params, &grads, 1e-5, 200, 5, &tol).unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn kl_to_self_is_zero_with_zero_gradient() {
    let (cfg, params) = test_model(47);
    let batch = sample_batch(&cfg, 4, 53);
    let pairs: Vec<(usize, usize)> = batch.iter().map(|f| (f.entity, f.attribute)).collect();
    let ref_logits = model::logits_value(&cfg, &params, &pairs).unwrap();
    let mut tape = Tape::new();
    let nodes = tape.register(&params).unwrap();
    let logits = model::logits_node(&mut tape, &cfg, &nodes, &pairs).unwrap();
    let kl = tape.kl_to_ref(logits, &ref_logits).unwrap();
    let mean = tape.mean(kl).unwrap();
    assert!(tape.value(mean).scalar_value().abs() < 1e-12);
    let grads = tape.backward(mean).unwrap();
    for (_, g) in &grads {
        for v in g.data() {
            assert!(v.abs() < 1e-12);
        }
    }
}
