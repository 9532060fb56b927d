//! End-to-end runs of the `modlab` binary on miniature configurations:
//! exit codes, artifact byte-identity, and the cross-command identities.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn modlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modlab"))
}

fn run(args: &[&str]) -> Output {
    modlab().args(args).output().expect("spawn modlab")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// A model small enough that train/generate cycles take seconds.
fn tiny_model_json() -> &'static str {
    r#""model": { "d_model": 16, "n_layers": 2, "heads": 2, "time_dim": 8, "mlp_multiplier": 2 }"#
}

fn tiny_train_config(out: &Path) -> String {
    format!(
        r#"{{
            {model},
            "data": {{ "seed": 3, "size": 64, "val_size": 16, "encoder_seed": 7 }},
            "train": {{ "steps": 4, "batch": 2, "seed": 3 }},
            "io": {{ "out_dir": "{out}" }}
        }}"#,
        model = tiny_model_json(),
        out = out.display()
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Train a tiny checkpoint once and return its path.
    fn trained_checkpoint(&self) -> PathBuf {
        let out = self.path("train");
        let cfg = self.path("train.json");
        write(&cfg, &tiny_train_config(&out));
        let o = run(&["train", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out.join("checkpoint.ckpt")
    }
}

#[test]
fn malformed_config_key_exits_2_and_names_the_key() {
    let ws = Workspace::new();
    let cfg = ws.path("bad.json");
    write(&cfg, r#"{"train": {"stepz": 3}}"#);
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stepz"), "{err}");
}

#[test]
fn unknown_schedule_kind_exits_2() {
    let ws = Workspace::new();
    let cfg = ws.path("bad_schedule.json");
    write(
        &cfg,
        r#"{"guidance": {"positive": "detail=textured", "negative": "detail=plain",
            "schedule": {"shape": {"sawtooth": {"w": 1.0}}}}}"#,
    );
    let o = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn existing_out_dir_without_force_exits_2() {
    let ws = Workspace::new();
    let out = ws.path("occupied");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = ws.path("train.json");
    write(&cfg, &tiny_train_config(&out));
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--force"), "{err}");
}

#[test]
fn train_writes_expected_artifacts_and_is_reproducible() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let out = ckpt.parent().unwrap();
    for artifact in [
        "checkpoint.ckpt",
        "loss_curve.csv",
        "metrics.csv",
        "resolved_config.json",
        "train.bin",
        "val.bin",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }

    // Second run into a different directory: byte-identical checkpoint,
    // loss curve, and dataset splits.
    let out2 = ws.path("train2");
    let cfg2 = ws.path("train2.json");
    write(&cfg2, &tiny_train_config(&out2));
    let o = run(&["train", "--config", cfg2.to_str().unwrap()]);
    assert!(o.status.success());
    for artifact in ["checkpoint.ckpt", "loss_curve.csv", "train.bin", "val.bin"] {
        assert_eq!(
            read_bytes(&out.join(artifact)),
            read_bytes(&out2.join(artifact)),
            "{artifact} differs between reruns"
        );
    }
}

#[test]
fn zero_step_training_checkpoint_equals_initialization() {
    let ws = Workspace::new();
    let out = ws.path("zero");
    let cfg = ws.path("zero.json");
    write(
        &cfg,
        &format!(
            r#"{{
                {model},
                "data": {{ "seed": 3, "size": 16, "val_size": 4, "encoder_seed": 7 }},
                "train": {{ "steps": 0, "batch": 2, "seed": 3 }},
                "io": {{ "out_dir": "{out}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display()
        ),
    );
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let ckpt = modlab_core::model::Checkpoint::read_file(&out.join("checkpoint.ckpt")).unwrap();
    let (model, meta) = modlab_core::model::DiT::from_checkpoint(&ckpt).unwrap();
    assert_eq!(meta.steps_trained, 0);
    let fresh = modlab_core::model::DiT::<f32>::new(meta.config.clone(), meta.init_seed).unwrap();
    for (a, b) in model.parameters().iter().zip(fresh.parameters()) {
        assert_eq!(a.tensor.to_vec(), b.tensor.to_vec(), "{} drifted", a.name);
    }
}

#[test]
fn generate_is_deterministic_and_zero_guidance_matches_unguided() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();

    let gen_cfg = |out: &Path, guidance: &str| {
        format!(
            r#"{{
                {model},
                "sample": {{ "steps": 4, "cfg_scale": 3.0, "seed": 5, "count": 2 }},
                {guidance}
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = ckpt.display()
        )
    };

    let out_a = ws.path("gen_a");
    let cfg_a = ws.path("gen_a.json");
    write(&cfg_a, &gen_cfg(&out_a, ""));
    assert!(run(&["generate", "--config", cfg_a.to_str().unwrap()]).status.success());

    // Same seed, second run: byte-identical image files.
    let out_b = ws.path("gen_b");
    let cfg_b = ws.path("gen_b.json");
    write(&cfg_b, &gen_cfg(&out_b, ""));
    assert!(run(&["generate", "--config", cfg_b.to_str().unwrap()]).status.success());

    // All-zero guidance schedule: byte-identical to no guidance at all.
    let zero_guidance = r#""guidance": {
        "positive": "detail=textured",
        "negative": "detail=plain",
        "schedule": {"shape": {"constant": {"w": 0.0}}}
    },"#;
    let out_c = ws.path("gen_c");
    let cfg_c = ws.path("gen_c.json");
    write(&cfg_c, &gen_cfg(&out_c, zero_guidance));
    assert!(run(&["generate", "--config", cfg_c.to_str().unwrap()]).status.success());

    for img in ["img_0000.ppm", "img_0001.ppm"] {
        let a = read_bytes(&out_a.join(img));
        assert_eq!(a, read_bytes(&out_b.join(img)), "rerun differs on {img}");
        assert_eq!(a, read_bytes(&out_c.join(img)), "zero guidance differs on {img}");
    }
    assert!(out_a.join("oracle.csv").exists());
    let oracle = String::from_utf8(read_bytes(&out_a.join("oracle.csv"))).unwrap();
    assert!(oracle.lines().last().unwrap().starts_with("match_rate"));
}

#[test]
fn generate_with_mismatched_model_section_exits_3() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let out = ws.path("gen_bad");
    let cfg = ws.path("gen_bad.json");
    write(
        &cfg,
        &format!(
            r#"{{
                "model": {{ "d_model": 32, "n_layers": 2, "heads": 2, "time_dim": 8, "mlp_multiplier": 2 }},
                "sample": {{ "steps": 2, "count": 1 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            out = out.display(),
            ckpt = ckpt.display()
        ),
    );
    let o = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_file_exits_3() {
    let ws = Workspace::new();
    let out = ws.path("gen_missing");
    let cfg = ws.path("gen_missing.json");
    let bogus = ws.path("nope.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    write(
        &cfg,
        &format!(
            r#"{{
                {model},
                "sample": {{ "steps": 2, "count": 1 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = bogus.display()
        ),
    );
    let o = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_step_i0_row_matches_constant_row() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let sweep_cfg = |out: &Path, axis: &str, grid: &str, base_w: f64| {
        format!(
            r#"{{
                {model},
                "sample": {{ "steps": 3, "cfg_scale": 1.0, "seed": 5 }},
                "sweep": {{ "axis": "{axis}", "grid": {grid}, "panel": 3, "base_w": {base_w} }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = ckpt.display()
        )
    };

    let out_w = ws.path("sweep_w");
    let cfg_w = ws.path("sweep_w.json");
    write(&cfg_w, &sweep_cfg(&out_w, "w", "[0.0, 2.0]", 2.0));
    let o = run(&["sweep", "--config", cfg_w.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out_i = ws.path("sweep_i");
    let cfg_i = ws.path("sweep_i.json");
    write(&cfg_i, &sweep_cfg(&out_i, "i", "[0.0, 1.0]", 2.0));
    assert!(run(&["sweep", "--config", cfg_i.to_str().unwrap()]).status.success());

    let w_rows = String::from_utf8(read_bytes(&out_w.join("sweep.csv"))).unwrap();
    let i_rows = String::from_utf8(read_bytes(&out_i.join("sweep.csv"))).unwrap();
    // Constant w=2 row and step i=0 (same w) row carry identical scores.
    let constant_row: Vec<&str> = w_rows
        .lines()
        .find(|l| l.starts_with("w,2"))
        .unwrap()
        .split(',')
        .skip(3)
        .collect();
    let step0_row: Vec<&str> = i_rows
        .lines()
        .find(|l| l.starts_with("i,0"))
        .unwrap()
        .split(',')
        .skip(3)
        .collect();
    assert_eq!(constant_row, step0_row);
}

#[test]
fn empty_sweep_grid_exits_2() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let out = ws.path("sweep_empty");
    let cfg = ws.path("sweep_empty.json");
    write(
        &cfg,
        &format!(
            r#"{{
                {model},
                "sweep": {{ "axis": "w", "grid": [], "panel": 2 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = ckpt.display()
        ),
    );
    assert_eq!(run(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

fn tiny_pooled_free_train(ws: &Workspace) -> PathBuf {
    let out = ws.path("train_pf");
    let cfg = ws.path("train_pf.json");
    write(
        &cfg,
        &format!(
            r#"{{
                "model": {{ "d_model": 16, "n_layers": 2, "heads": 2, "time_dim": 8,
                            "mlp_multiplier": 2, "conditioning": "pooled_free" }},
                "data": {{ "seed": 3, "size": 32, "val_size": 8, "encoder_seed": 7 }},
                "train": {{ "steps": 3, "batch": 2, "seed": 3 }},
                "io": {{ "out_dir": "{out}" }}
            }}"#,
            out = out.display()
        ),
    );
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("checkpoint.ckpt")
}

#[test]
fn retrofit_zero_iterations_equals_fresh_adapter_and_links_base() {
    let ws = Workspace::new();
    let base = tiny_pooled_free_train(&ws);
    let out = ws.path("retro");
    let cfg = ws.path("retro.json");
    write(
        &cfg,
        &format!(
            r#"{{
                "model": {{ "d_model": 16, "n_layers": 2, "heads": 2, "time_dim": 8,
                            "mlp_multiplier": 2, "conditioning": "pooled_free" }},
                "data": {{ "seed": 3, "size": 16, "val_size": 4, "encoder_seed": 7 }},
                "retrofit": {{ "iterations": 0, "adapter_width": 16, "seed": 9 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{base}" }}
            }}"#,
            out = out.display(),
            base = base.display()
        ),
    );
    let o = run(&["retrofit", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let adapter_ckpt =
        modlab_core::model::Checkpoint::read_file(&out.join("adapter.ckpt")).unwrap();
    let base_ckpt = modlab_core::model::Checkpoint::read_file(&base).unwrap();
    // Loading against the right base works; a different base hash refuses.
    let adapter = modlab_core::retrofit::PooledAdapter::from_checkpoint(
        &adapter_ckpt,
        &base_ckpt.content_hash(),
    )
    .unwrap();
    let fresh = modlab_core::retrofit::PooledAdapter::<f32>::new(9, 32, 16, 8);
    for (a, b) in adapter.parameters().iter().zip(fresh.parameters()) {
        assert_eq!(a.tensor.to_vec(), b.tensor.to_vec());
    }
    assert!(modlab_core::retrofit::PooledAdapter::from_checkpoint(&adapter_ckpt, "ffff").is_err());
}

#[test]
fn retrofit_on_pooled_model_exits_2() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let out = ws.path("retro_bad");
    let cfg = ws.path("retro_bad.json");
    write(
        &cfg,
        &format!(
            r#"{{
                {model},
                "data": {{ "seed": 3, "size": 16, "val_size": 4, "encoder_seed": 7 }},
                "retrofit": {{ "iterations": 1, "adapter_width": 16 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = ckpt.display()
        ),
    );
    assert_eq!(run(&["retrofit", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn ablate_on_pooled_free_model_yields_exact_zero_distances() {
    let ws = Workspace::new();
    let base = tiny_pooled_free_train(&ws);
    let out = ws.path("ablate_pf");
    let cfg = ws.path("ablate_pf.json");
    write(
        &cfg,
        &format!(
            r#"{{
                "model": {{ "d_model": 16, "n_layers": 2, "heads": 2, "time_dim": 8,
                            "mlp_multiplier": 2, "conditioning": "pooled_free" }},
                "sample": {{ "steps": 3, "cfg_scale": 1.0, "seed": 5 }},
                "analysis": {{ "prompts": 4, "seeds_per_prompt": 1 }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{base}" }}
            }}"#,
            out = out.display(),
            base = base.display()
        ),
    );
    let o = run(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read_bytes(&out.join("ablation.csv"))).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0, "{line}");
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

#[test]
fn attn_group_shares_sum_to_one_per_run() {
    let ws = Workspace::new();
    let ckpt = ws.trained_checkpoint();
    let out = ws.path("attn");
    let cfg = ws.path("attn.json");
    write(
        &cfg,
        &format!(
            r#"{{
                {model},
                "sample": {{ "steps": 3, "cfg_scale": 1.0, "seed": 5 }},
                "analysis": {{ "prompts": 3, "target": "count" }},
                "io": {{ "out_dir": "{out}", "checkpoint": "{ckpt}" }}
            }}"#,
            model = tiny_model_json(),
            out = out.display(),
            ckpt = ckpt.display()
        ),
    );
    let o = run(&["attn", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read_bytes(&out.join("group_mass.csv"))).unwrap();
    let mut sums: std::collections::HashMap<String, f64> = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        *sums.entry(cols[0].to_string()).or_default() += cols[2].parse::<f64>().unwrap();
    }
    assert!(!sums.is_empty());
    for (run_id, total) in sums {
        assert!((total - 1.0).abs() < 1e-5, "{run_id}: {total}");
    }
    assert!(out.join("layer_profile.csv").exists());
    assert!(out.join("attn_summary.csv").exists());
}

#[test]
fn seed_and_out_overrides_are_applied() {
    let ws = Workspace::new();
    let out = ws.path("override_out");
    let cfg = ws.path("override.json");
    write(&cfg, &tiny_train_config(&ws.path("ignored")));
    let o = modlab()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "123",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = String::from_utf8(read_bytes(&out.join("resolved_config.json"))).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&resolved).unwrap();
    assert_eq!(parsed["train"]["seed"], 123);
    assert_eq!(parsed["data"]["seed"], 123);
}
