use std::path::Path;
use std::process::{Command, Output};

use rcan_core::rng::{seeded, RngSnapshot};
use rcan_core::trainer::save_checkpoint;
use rcan_core::{nearest_neighbor_model, synth, Checkpoint, ColorSpace, ImageTensor, MetricReport, ModelConfig};

fn rcan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcan")).args(args).output().expect("spawn rcan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn nn_checkpoint(dir: &Path, scale: usize) -> std::path::PathBuf {
    let model = nearest_neighbor_model::<f32, _>(&ModelConfig::tiny(scale), &mut seeded(3)).unwrap();
    let path = dir.join(format!("nn_x{scale}.ckpt"));
    save_checkpoint(&Checkpoint::fresh(model, RngSnapshot::capture(&seeded(0))), &path).unwrap();
    path
}

/// HR made of constant 2x2 blocks with its nearest-subsampled LR next to it.
fn blocky_benchmark(root: &Path, count: usize) {
    std::fs::create_dir_all(root.join("HR")).unwrap();
    std::fs::create_dir_all(root.join("LR_bicubic/X2")).unwrap();
    for i in 0..count {
        let base = synth::synthetic_image(40 + i as u64, 24, 28).quantized();
        let hr = ImageTensor::from_fn(48, 56, ColorSpace::Rgb, |y, x, c| base.get(y / 2, x / 2, c));
        hr.save_png(&root.join(format!("HR/b{i}.png"))).unwrap();
        base.save_png(&root.join(format!("LR_bicubic/X2/b{i}.png"))).unwrap();
    }
}

fn dry(preset: &str) -> String {
    let o = rcan(&["train", "--preset", preset, "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn has(text: &str, line: &str) -> bool {
    text.lines().any(|l| l.trim() == line)
}

#[test]
fn baseline_dry_run() {
    let t = dry("baseline");
    for l in ["lr = 0.0032", "total_iters = 80000", "batch_size = 256", "optimizer = lamb", "schedule = cosine"] {
        assert!(has(&t, l), "missing `{l}` in\n{t}");
    }
}

#[test]
fn original_dry_run() {
    let t = dry("original");
    for l in ["lr = 0.0001", "total_iters = 1725000", "schedule = multistep", "batch_size = 16", "optimizer = adam"] {
        assert!(has(&t, l), "missing `{l}` in\n{t}");
    }
}

#[test]
fn rcan_it_dry_run() {
    let t = dry("rcan-it");
    assert!(has(&t, "activation = silu"));
    assert!(t.contains("stage 1 train: iters=160000"));
    assert!(t.contains("stage 2 large_patch: iters=40000 patch=64"));
}

#[test]
fn dry_run_has_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = rcan(&["train", "--preset", "desk", "--out", p(&out), "--dry-run"]);
    assert_eq!(code(&o), 0);
    assert!(!out.exists());
}

#[test]
fn set_overrides_and_bad_keys() {
    let o = rcan(&["train", "--preset", "baseline", "--set", "lr=0.01", "--dry-run"]);
    assert!(has(&stdout(&o), "lr = 0.01"));
    assert_eq!(code(&rcan(&["train", "--set", "no_such_key=1", "--dry-run"])), 2);
    assert_eq!(code(&rcan(&["train", "--preset", "bogus", "--dry-run"])), 2);
    assert_eq!(code(&rcan(&["train", "--set", "batch_size=0", "--dry-run"])), 2);
}

#[test]
fn config_file_layers_under_cli_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "preset = original\n# comment\ntotal_iters = 500\n").unwrap();
    let t = stdout(&rcan(&["train", "--config", p(&cfg), "--dry-run"]));
    assert!(has(&t, "lr = 0.0001") && has(&t, "total_iters = 500"));
    let t = stdout(&rcan(&["train", "--config", p(&cfg), "--preset", "baseline", "--set", "seed=9", "--dry-run"]));
    assert!(has(&t, "lr = 0.0032") && has(&t, "total_iters = 500") && has(&t, "seed = 9"));
}

#[test]
fn warm_start_dry_run_halves_base_budget() {
    let o = rcan(&["warm-start", "--scale", "3", "--set", "warm_base_iters=160000", "--dry-run"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("warm_full: iters=80000"));
}

#[test]
fn warm_start_rejects_non_x2_source() {
    let dir = tempfile::tempdir().unwrap();
    let ck = nn_checkpoint(dir.path(), 3);
    let o = rcan(&["warm-start", "--from", p(&ck), "--scale", "4", "--dry-run"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("from"));
}

#[test]
fn prepare_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    assert_eq!(code(&rcan(&["synth-data", "--root", p(&root), "--count", "2", "--size", "48"])), 0);
    assert_eq!(code(&rcan(&["prepare-data", "--root", p(&root)])), 0);
    let listing = |root: &Path| {
        let mut v = Vec::new();
        for s in [2, 3, 4] {
            for e in std::fs::read_dir(root.join(format!("LR_bicubic/X{s}"))).unwrap() {
                let path = e.unwrap().path();
                v.push((path.clone(), std::fs::read(&path).unwrap()));
            }
        }
        v.sort();
        v
    };
    let first = listing(&root);
    assert_eq!(first.len(), 6);
    let meta = std::fs::read_to_string(root.join("meta.json")).unwrap();
    let j: serde_json::Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(j["count"], 2);
    assert_eq!(j["mean_rgb"].as_array().unwrap().len(), 3);
    assert_eq!(code(&rcan(&["prepare-data", "--root", p(&root)])), 0);
    assert_eq!(listing(&root), first);
    assert_eq!(std::fs::read_to_string(root.join("meta.json")).unwrap(), meta);
}

#[test]
fn prepare_data_missing_root() {
    let o = rcan(&["prepare-data", "--root", "/nonexistent/rcan/root"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn eval_exact_copy_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    blocky_benchmark(&bench, 2);
    let ck = nn_checkpoint(dir.path(), 2);
    for ensemble in [false, true] {
        let json = dir.path().join(format!("r{ensemble}.json"));
        let mut args = vec!["eval", "--ckpt", p(&ck), "--benchmark", p(&bench), "--json", p(&json)];
        args.extend(["--out", p(dir.path())]);
        if ensemble {
            args.push("--ensemble");
        }
        let o = rcan(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("mean"));
        let report = MetricReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(report.protocol.ensemble, ensemble);
        assert_eq!(report.per_image.len(), 2);
        for m in &report.per_image {
            assert_eq!(m.psnr_db, 100.0);
            assert!((m.ssim - 1.0).abs() < 1e-12, "{}", m.ssim);
        }
    }
}

#[test]
fn eval_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ck = nn_checkpoint(dir.path(), 2);
    let o = rcan(&["eval", "--ckpt", p(&ck), "--benchmark", "/nonexistent/bench"]);
    assert_eq!(code(&o), 2);
    let o = rcan(&["eval", "--ckpt", "/nonexistent.ckpt", "--benchmark", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn infer_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ck = nn_checkpoint(dir.path(), 2);
    let lr = dir.path().join("lr.png");
    synth::synthetic_image(5, 20, 30).quantized().save_png(&lr).unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", p(&lr), "--out", p(&a)])), 0);
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", p(&lr), "--out", p(&b), "--tile", "8"])), 0);
    let ia = ImageTensor::load_png(&a).unwrap();
    assert_eq!(ia.dims(), (40, 60));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.png");
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", p(&lr), "--out", p(&c), "--ensemble"])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn infer_directory_input() {
    let dir = tempfile::tempdir().unwrap();
    let ck = nn_checkpoint(dir.path(), 2);
    let inp = dir.path().join("in");
    std::fs::create_dir_all(&inp).unwrap();
    for i in 0..2 {
        synth::synthetic_image(i, 16, 16).save_png(&inp.join(format!("x{i}.png"))).unwrap();
    }
    let out = dir.path().join("out");
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", p(&inp), "--out", p(&out)])), 0);
    assert_eq!(ImageTensor::load_png(&out.join("x1.png")).unwrap().dims(), (32, 32));
}

#[test]
fn infer_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = nn_checkpoint(dir.path(), 2);
    let out = dir.path().join("o.png");
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", "/nonexistent.png", "--out", p(&out)])), 2);
    assert_eq!(code(&rcan(&["infer", "--ckpt", "/nonexistent.ckpt", "--in", p(&ck), "--out", p(&out)])), 2);
    let garbage = dir.path().join("g.png");
    std::fs::write(&garbage, b"not a png").unwrap();
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&ck), "--in", p(&garbage), "--out", p(&out)])), 1);
    assert_eq!(code(&rcan(&["infer", "--ckpt", p(&garbage), "--in", p(&garbage), "--out", p(&out)])), 1);
    assert_eq!(code(&rcan(&["bogus-command"])), 2);
}

#[test]
fn tiny_train_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    let out = dir.path().join("run");
    assert_eq!(code(&rcan(&["synth-data", "--root", p(&root), "--count", "6", "--size", "48"])), 0);
    let args = [
        "train", "--preset", "desk", "--data", p(&root), "--out", p(&out), "--set", "total_iters=6", "--set",
        "eval_every=3", "--set", "val_count=2", "--set", "val_crop=32", "--set", "batch_size=2",
    ];
    let o = rcan(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["resolved.cfg", "train.ckpt", "final.ckpt", "history.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(out.join("resolved.cfg")).unwrap();
    assert!(has(&resolved, "total_iters = 6"));
    let reloaded = rcan_core::RunConfig::load(&out.join("resolved.cfg")).unwrap();
    assert_eq!(reloaded, rcan_core::RunConfig::parse(&resolved).unwrap());
    assert_eq!(reloaded.to_text(), resolved);
    let hist: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("history.json")).unwrap()).unwrap();
    assert_eq!(hist.as_array().unwrap().len(), 2);
}
