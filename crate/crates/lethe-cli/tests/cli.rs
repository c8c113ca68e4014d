//! End-to-end checks of the `lethe` binary: exit codes, diagnostics, and
//! the files each subcommand leaves behind.

use std::path::Path;
use std::process::Command;

fn lethe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lethe"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("out");
    let config = serde_json::json!({
        "schema_version": 1,
        "name": "tiny",
        "output_dir": out.to_str().unwrap(),
        "seeds": [42],
        "dataset": {
            "entities": 24, "attributes": 4, "value_vocab": 12,
            "forget_entities": 3, "holdout_entities": 3,
            "entity_offset": 0, "seed": 7
        },
        "unrelated": {
            "entities": 4, "attributes": 4, "value_vocab": 12,
            "forget_entities": 0, "holdout_entities": 0,
            "entity_offset": 24, "seed": 9
        },
        "model": {
            "entity_vocab": 28, "attribute_vocab": 4, "value_vocab": 12,
            "embed_dim": 6, "hidden_dim": 12,
            "adapter_rank": 2, "adapter_scale": 2.0
        },
        "pretrain": {
            "epochs": 3, "batch_size": 8,
            "optim": {"lr": 4e-3, "weight_decay": 0.0}
        },
        "unlearn": {
            "steps": 12, "batch_size": 4,
            "optim": {"lr": 2e-3}
        },
        "methods": [
            {"method": "ga"},
            {"method": "saf", "saf": {"alpha_max": 1.0, "lambda": null, "t_w": 4, "ste_scope": "all-trainable"}}
        ],
        "sweep": {"alpha_values": [0.0, 1.0], "lambda": 1.0, "seed": 42},
        "attacks": {"quant": true, "finetune": {
            "steps": 6, "batch_size": 4, "record_every": 2,
            "optim": {"lr": 1e-3}, "scope": "adapters-only"
        }}
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn pretrain_writes_checkpoint_and_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let status = lethe()
        .args(["pretrain", "--config", cfg.to_str().unwrap(), "--seed", "42"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let out = dir.path().join("out");
    assert!(out.join("dataset.csv").exists());
    let checkpoints: Vec<_> = std::fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .collect();
    assert!(checkpoints.iter().any(|n| n.starts_with("pretrain_") && n.ends_with(".bin")));
    assert!(checkpoints.iter().any(|n| n.ends_with(".manifest")));
}

#[test]
fn unlearn_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = lethe()
        .args(["unlearn", "--config", cfg.to_str().unwrap(), "--method", "ga", "--seed", "42"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let outdir = dir.path().join("out");
    assert!(outdir.join("runs.csv").exists());
    assert!(outdir.join("aggregate.csv").exists());
    let ckpt = outdir.join("checkpoints/ga_42.bin");
    assert!(ckpt.exists());

    let eval_out = lethe()
        .args([
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--seed",
            "42",
        ])
        .output()
        .unwrap();
    assert!(eval_out.status.success());
    let text = String::from_utf8_lossy(&eval_out.stdout);
    assert!(text.contains("\"fa\""), "evaluate should print a report: {text}");

    let attack_out = lethe()
        .args([
            "attack",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--kind",
            "quant",
            "--seed",
            "42",
        ])
        .output()
        .unwrap();
    assert!(attack_out.status.success());
    assert!(String::from_utf8_lossy(&attack_out.stdout).contains("fa_after"));
}

#[test]
fn sweep_writes_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = lethe()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--axis", "alpha"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frontier = std::fs::read_to_string(dir.path().join("out/frontier.csv")).unwrap();
    assert!(frontier.starts_with("alpha,lambda,fa,ra,q_int8,q_int4,cert"));
    assert_eq!(frontier.lines().count(), 3, "two alpha rows expected");
}

#[test]
fn report_rebuilds_aggregates_from_run_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = lethe()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--axis", "methods"])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let outdir = dir.path().join("out");
    let before = std::fs::read_to_string(outdir.join("aggregate.csv")).unwrap();
    std::fs::remove_file(outdir.join("aggregate.csv")).unwrap();
    let rebuilt = lethe()
        .args(["report", "--dir", outdir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(rebuilt.status.success(), "{}", String::from_utf8_lossy(&rebuilt.stderr));
    let after = std::fs::read_to_string(outdir.join("aggregate.csv")).unwrap();
    assert_eq!(before, after, "report must reproduce the aggregate bytes");
}

#[test]
fn malformed_config_names_the_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    doc["schema_version"] = serde_json::json!(99);
    std::fs::write(&cfg, doc.to_string()).unwrap();
    let out = lethe()
        .args(["pretrain", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema_version"), "diagnostic should name the field: {err}");
}

#[test]
fn missing_checkpoint_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = lethe()
        .args([
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            dir.path().join("nope.bin").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.bin"));
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = lethe()
        .args(["unlearn", "--config", cfg.to_str().unwrap(), "--method", "mystery"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}
