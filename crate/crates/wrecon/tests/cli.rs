use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use wrecon::checkpoint::save_checkpoint;
use wrecon::cli::{resolve_run_config, run, Cli, Command as Sub};
use wrecon::config::RunMode;
use wrecon::imgf::{load_image_f32, save_image_f32};
use wrecon::manifest::Manifest;
use wrecon::maskfile::load_mask;
use wrecon::png::import_png;
use wrecon::report::load_report;
use wrecon_core::data::{Sample, Split};
use wrecon_core::kspace::generate_mask;
use wrecon_core::model::Network;
use wrecon_core::{fft2c, Cascade, CascadeConfig, Checkpoint, ComplexGrid, Lambda, Tensor, TrainConfig, Wcnn, WcnnConfig};

fn wrecon(args: &[&str]) -> anyhow::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("wrecon").chain(args.iter().copied()))?;
    run(cli)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_phantoms_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        wrecon(&["gen-phantoms", "--count", "250", "--size", "64", "--seed", "7", "--out", &s(out)]).unwrap();
    }
    let files = read_dir_sorted(&a);
    assert_eq!(files.iter().filter(|f| f.0.ends_with(".imgf")).count(), 250);
    assert_eq!(files, read_dir_sorted(&b));
    let m = Manifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!((m.height, m.width, m.seed), (64, 64, 7));
    assert_eq!(m.items_in(Split::Train).count(), 200);
    assert_eq!(m.items_in(Split::Val).count(), 50);
    let img = load_image_f32(&a.join(&m.items[0].path)).unwrap();
    assert_eq!(img.shape(), &[64, 64]);
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn gen_phantoms_rejects_odd_size() {
    let dir = tempfile::tempdir().unwrap();
    assert!(wrecon(&["gen-phantoms", "--count", "3", "--size", "63", "--out", &s(dir.path())]).is_err());
}

#[test]
fn gen_mask_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    let q = dir.path().join("n.txt");
    for out in [&p, &q] {
        wrecon(&["gen-mask", "--height", "256", "--accel", "5", "--center-lines", "10", "--seed", "1", "--out", &s(out)])
            .unwrap();
    }
    assert_eq!(load_mask(&p).unwrap().kept_count(), 51);
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    wrecon(&["gen-mask", "--height", "32", "--accel", "1", "--center-lines", "2", "--out", &s(&p)]).unwrap();
    assert!(load_mask(&p).unwrap().rows().iter().all(|&k| k));
    assert!(wrecon(&["gen-mask", "--height", "32", "--accel", "0.5", "--out", &s(&q)]).is_err());
}

/// Small dataset: `count` phantoms of 16x16 with a 4x mask recorded in the manifest.
fn small_dataset(dir: &Path, count: usize) -> PathBuf {
    let mask = dir.join("mask.txt");
    wrecon(&["gen-mask", "--height", "16", "--accel", "4", "--center-lines", "2", "--seed", "2", "--out", &s(&mask)]).unwrap();
    let data = dir.join("data");
    wrecon(&[
        "gen-phantoms", "--count", &count.to_string(), "--size", "16", "--seed", "3", "--mask", &s(&mask), "--out", &s(&data),
    ])
    .unwrap();
    data.join("manifest.json")
}

const SMALL_NET: [&str; 6] = ["--levels", "2", "--base-channels", "2", "--block-depth", "1"];

#[test]
fn train_smoke_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 10);
    let ck = dir.path().join("runs/sa.wcnn");
    let (m, c) = (s(&manifest), s(&ck));
    let mut args = vec!["train", "--manifest", &m, "--out", &c, "--epochs", "1"];
    args.extend(SMALL_NET);
    wrecon(&args).unwrap();
    assert!(ck.exists());
    let log = std::fs::read_to_string(dir.path().join("runs/loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_nmse,val_psnr,val_ssim,val_hfen");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,,"));

    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"mode": "cascade", "training": {"epochs": 7, "lr": 0.01}, "cascade": {"n_cascades": 4},
            "paths": {"manifest": "data/manifest.json", "checkpoint": "out.wcnn"}}"#,
    )
    .unwrap();
    let cli = Cli::try_parse_from(["wrecon", "train", "--config", &s(&config), "--epochs", "2", "--lambda", "inf"]).unwrap();
    let Sub::Train(t) = cli.command else { unreachable!() };
    let cfg = resolve_run_config(&t).unwrap();
    assert_eq!(cfg.mode, RunMode::Cascade);
    assert_eq!(cfg.training.epochs, 2);
    assert_eq!(cfg.training.lr, 0.01);
    assert_eq!(cfg.training.batch_size, 4);
    assert_eq!(cfg.cascade.n_cascades, 4);
    assert_eq!(cfg.cascade.fidelity.lambda, Lambda::Infinite);
    assert_eq!(cfg.paths.manifest.unwrap(), dir.path().join("data/manifest.json"));

    std::fs::write(&config, r#"{"training": {"epochs": 0}, "paths": {"manifest": "m", "checkpoint": "c"}}"#).unwrap();
    assert!(wrecon(&["train", "--config", &s(&config)]).is_err());
    std::fs::write(&config, r#"{"trainig": {}}"#).unwrap();
    assert!(wrecon(&["train", "--config", &s(&config)]).is_err());
    assert!(!dir.path().join("c").exists());
}

#[test]
fn train_without_manifest_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wrecon"))
        .args(["train", "--manifest", &s(&dir.path().join("nope.json")), "--out", &s(&dir.path().join("x.wcnn"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(out.stdout.is_empty());
    assert!(!dir.path().join("x.wcnn").exists());
}

fn small_config() -> WcnnConfig {
    WcnnConfig {
        levels: 2,
        block_depth: 1,
        base_channels: 2,
        input_channels: 1,
    }
}

fn zero_residual() -> Wcnn<f32> {
    let mut m = Wcnn::new(small_config(), 1).unwrap();
    m.zero_residual();
    m
}

#[test]
fn reconstruct_with_zero_residual_network() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mask = generate_mask(16, 4.0, 2, 0.15, 5).unwrap();
    wrecon::maskfile::save_mask(&mask, &p.join("mask.txt")).unwrap();
    let target = Tensor::from_fn(&[16, 16], |i| ((i * 37) % 101) as f32 / 100.0);
    save_image_f32(&target, &p.join("img.imgf")).unwrap();
    let sample = Sample::acquire("img", target.clone(), &mask).unwrap();

    let standalone = Network::Standalone(zero_residual());
    save_checkpoint(&Checkpoint::capture(&standalone, &TrainConfig::default(), 0, 0), &p.join("sa.wcnn")).unwrap();
    let out = p.join("sa");
    wrecon(&[
        "reconstruct", "--checkpoint", &s(&p.join("sa.wcnn")), "--mask", &s(&p.join("mask.txt")), "--input",
        &s(&p.join("img.imgf")), "--out", &s(&out),
    ])
    .unwrap();
    let recon = load_image_f32(&out.join("img_recon.imgf")).unwrap();
    assert!(recon.max_abs_diff(&sample.x_u).unwrap() <= 1e-4);
    assert_eq!(load_image_f32(&out.join("img_zero_filled.imgf")).unwrap(), sample.x_u);
    for f in ["img_recon.png", "img_zero_filled.png", "img_error.png"] {
        assert_eq!(import_png(&out.join(f)).unwrap().shape(), &[16, 16]);
    }

    let cascade = Cascade::new(
        CascadeConfig {
            n_cascades: 2,
            ..CascadeConfig::default()
        },
        vec![Wcnn::new(small_config(), 4).unwrap(), Wcnn::new(small_config(), 5).unwrap()],
    )
    .unwrap();
    let ck = Checkpoint::capture(&Network::Cascade(cascade), &TrainConfig::default(), 0, 0);
    save_checkpoint(&ck, &p.join("dc.wcnn")).unwrap();
    let out = p.join("dc");
    wrecon(&[
        "reconstruct", "--checkpoint", &s(&p.join("dc.wcnn")), "--mask", &s(&p.join("mask.txt")), "--input",
        &s(&p.join("img.imgf")), "--out", &s(&out),
    ])
    .unwrap();
    let recon = load_image_f32(&out.join("img_recon.imgf")).unwrap();
    let k = fft2c(&ComplexGrid::from_real(&recon).unwrap());
    let y = &sample.y;
    for r in (0..16).filter(|&r| mask.is_kept(r)) {
        for c in 0..16 {
            assert!((k.get(r, c) - y.get(r, c)).norm() <= 1e-4);
        }
    }
}

#[test]
fn error_map_is_black_when_recon_matches_target() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let full = generate_mask(16, 1.0, 2, 0.15, 0).unwrap();
    wrecon::maskfile::save_mask(&full, &p.join("full.txt")).unwrap();
    let target = Tensor::from_fn(&[16, 16], |i| (i % 7) as f32 / 7.0);
    save_image_f32(&target, &p.join("t.imgf")).unwrap();
    let cascade = Cascade::new(
        CascadeConfig {
            n_cascades: 1,
            ..CascadeConfig::default()
        },
        vec![Wcnn::new(small_config(), 2).unwrap()],
    )
    .unwrap();
    let ck = Checkpoint::capture(&Network::Cascade(cascade), &TrainConfig::default(), 0, 0);
    save_checkpoint(&ck, &p.join("c.wcnn")).unwrap();
    wrecon(&[
        "reconstruct", "--checkpoint", &s(&p.join("c.wcnn")), "--mask", &s(&p.join("full.txt")), "--input",
        &s(&p.join("t.imgf")), "--out", &s(p),
    ])
    .unwrap();
    let err = import_png(&p.join("t_error.png")).unwrap();
    assert!(err.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reconstruct_rejects_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    wrecon::maskfile::save_mask(&generate_mask(16, 4.0, 2, 0.15, 0).unwrap(), &p.join("m.txt")).unwrap();
    save_image_f32(&Tensor::zeros(&[32, 32]), &p.join("big.imgf")).unwrap();
    let ck = Checkpoint::capture(&Network::Standalone(zero_residual()), &TrainConfig::default(), 0, 0);
    save_checkpoint(&ck, &p.join("c.wcnn")).unwrap();
    let args = ["reconstruct", "--checkpoint", &s(&p.join("c.wcnn")), "--mask", &s(&p.join("m.txt"))];
    let mut bad = args.to_vec();
    let big = s(&p.join("big.imgf"));
    let out = s(&p.join("o"));
    bad.extend(["--input", &big, "--out", &out]);
    assert!(wrecon(&bad).is_err());
}

#[test]
fn evaluate_reports_and_paired_test() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let manifest = small_dataset(p, 12);
    let ck = Checkpoint::capture(&Network::Standalone(Wcnn::new(small_config(), 6).unwrap()), &TrainConfig::default(), 0, 0);
    save_checkpoint(&ck, &p.join("c.wcnn")).unwrap();
    let report = p.join("r.csv");
    let (c, m) = (s(&p.join("c.wcnn")), s(&manifest));
    let base = ["evaluate", "--checkpoint", &c, "--manifest", &m, "--split", "all"];
    let mut args = base.to_vec();
    let r = s(&report);
    args.extend(["--out", &r]);
    wrecon(&args).unwrap();
    let ours = load_report(&report).unwrap();
    let zf = load_report(&p.join("r_zero_filled.csv")).unwrap();
    assert_eq!(ours.rows.len(), 12);
    assert_eq!(zf.rows.len(), 12);
    assert_eq!(zf.summary.count, 12);

    let mut args = base.to_vec();
    let (r2, w) = (s(&p.join("r2.csv")), s(&p.join("w.json")));
    args.extend(["--out", &r2, "--against", &r, "--wilcoxon-out", &w]);
    wrecon(&args).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("w.json")).unwrap()).unwrap();
    let tests = json["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 4);
    assert!(tests.iter().all(|t| t["p_value"] == 1.0 && t["significant"] == false));
    assert_eq!(json["report"], "r2.csv");
    assert_eq!(json["against"], "r.csv");

    let moved = p.join("moved");
    std::fs::create_dir(&moved).unwrap();
    std::fs::copy(&report, moved.join("r.csv")).unwrap();
    let (r2m, rm) = (s(&moved.join("r2.csv")), s(&moved.join("r.csv")));
    let mut args = base.to_vec();
    args.extend(["--out", &r2m, "--against", &rm]);
    wrecon(&args).unwrap();
    assert_eq!(
        std::fs::read(p.join("w.json")).unwrap(),
        std::fs::read(moved.join("r2_wilcoxon.json")).unwrap(),
        "test results must not depend on the run directory"
    );

    let val_only = Manifest::load(&manifest).unwrap().items_in(Split::Val).count();
    let mut args = base.to_vec();
    args[6] = "val";
    let r3 = s(&p.join("r3.csv"));
    args.extend(["--out", &r3, "--against", &r]);
    assert!(wrecon(&args).is_err(), "different image sets must be rejected");
    assert_eq!(load_report(&p.join("r3.csv")).unwrap().rows.len(), val_only);
}

#[test]
fn cascade_starts_from_standalone_quality() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let manifest = small_dataset(p, 24);
    let m = s(&manifest);
    let (sa, dc) = (s(&p.join("sa/ck.wcnn")), s(&p.join("dc/ck.wcnn")));
    let mut args = vec!["train", "--manifest", &m, "--out", &sa, "--epochs", "4", "--lr", "0.003"];
    args.extend(SMALL_NET);
    wrecon(&args).unwrap();
    let mut args = vec!["train", "--mode", "cascade", "--n-cascades", "2", "--manifest", &m, "--init-from", &sa];
    args.extend(["--out", &dc, "--epochs", "1"]);
    args.extend(SMALL_NET);
    wrecon(&args).unwrap();
    let val_psnr = |csv: &Path, row: usize| -> f64 {
        let text = std::fs::read_to_string(csv).unwrap();
        let line = text.lines().nth(row + 1).unwrap();
        line.split(',').nth(3).unwrap().parse().unwrap()
    };
    let sa_final = val_psnr(&p.join("sa/loss.csv"), 4);
    let dc_start = val_psnr(&p.join("dc/loss.csv"), 0);
    assert!(dc_start >= sa_final - 0.1, "cascade epoch 0 {dc_start} vs standalone final {sa_final}");
}
