use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use noisomics::checkpoint_io;
use noisomics::commands::analyze::{self, ANALYSES};
use noisomics::commands::estimate::{self, estimate_image, window_crops, write_predictions, Prediction};
use noisomics::commands::train::{self, final_gap, read_log};
use noisomics::commands::{bench, synthesize, InvalidArgument};
use noisomics::manifest::{Manifest, Metadata, Record, Role};
use noisomics::report::Provenance;
use noisomics::{tensor_io, Config};
use noisomics_core::model::{predict_strengths, EncoderCheckpoint, EncoderConfig, Stage, TrainingMode};
use noisomics_core::procedural::{texture, TextureKind};
use noisomics_core::{ImageTensor, RngStream};
use tempfile::tempdir;

fn small_config(seed: u64, count: usize) -> Config {
    let mut c = Config { seed, ..Config::default() };
    c.synthesize.count = count;
    c.synthesize.size = 8;
    c.model.input_size = 8;
    c.model.conv_channels = [3, 4];
    c.model.hidden_dim = 8;
    c.model.embed_dim = 8;
    c.model.head_hidden = 6;
    c.train.epochs = 2;
    c.train.batch_size = 4;
    c
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn is_invalid(e: &anyhow::Error) -> bool {
    e.downcast_ref::<InvalidArgument>().is_some()
}

/// A finetuned checkpoint straight from initialization.
fn fixed_model(size: usize) -> EncoderCheckpoint {
    let cfg = EncoderConfig { input_size: size, ..EncoderConfig::tiny(5) };
    let mut c = EncoderCheckpoint::initialize(&cfg).unwrap();
    c.stage = Stage::Finetuned;
    c
}

#[test]
fn synthesis_is_reproducible_across_runs_and_workers() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let mut cfg = small_config(7, 10);
    synthesize::run(&cfg, a.path()).unwrap();
    cfg.workers = 3;
    synthesize::run(&cfg, b.path()).unwrap();
    let (ta, mut tb) = (tree(a.path()), tree(b.path()));
    // The echoed configuration records the worker count, nothing else differs.
    tb.insert("config.resolved.toml".into(), ta["config.resolved.toml"].clone());
    assert_eq!(ta, tb);
    assert_eq!(ta.len(), 1 + 1 + 10 + 10);
    let m = Manifest::load(&a.path().join(synthesize::MANIFEST_NAME)).unwrap();
    assert_eq!(m.by_role(Role::Corrupted).count(), 10);
    let r = m.get("s00003").unwrap();
    assert_eq!(r.seed_path.as_deref(), Some("7/sample:3"));
    assert_eq!(r.clean_id.as_deref(), Some("c00003"));
}

#[test]
fn recorded_provenance_regenerates_each_sample() {
    let dir = tempdir().unwrap();
    let mut cfg = small_config(11, 4);
    cfg.synthesize.order_mode = noisomics::config::OrderMode::Random;
    let out = synthesize::run(&cfg, dir.path()).unwrap();
    for r in out.manifest.by_role(Role::Corrupted) {
        let clean = tensor_io::read_image(&out.manifest.resolve(out.manifest.get(r.clean_id.as_ref().unwrap()).unwrap())).unwrap();
        let again = noisomics_core::engine::compose_image(
            &clean,
            &r.strengths().unwrap().unwrap(),
            &r.order().unwrap().unwrap(),
            &r.stream().unwrap().unwrap(),
            &cfg.synthesize.engine().unwrap(),
        )
        .unwrap();
        let stored = tensor_io::read_image(&out.manifest.resolve(r)).unwrap();
        assert_eq!(stored, tensor_io::to_f32_precision(&again));
    }
}

#[test]
fn zero_count_gives_an_empty_manifest() {
    let dir = tempdir().unwrap();
    let out = synthesize::run(&small_config(1, 0), dir.path()).unwrap();
    assert!(out.manifest.records.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap(), "");
}

#[test]
fn strength_means_are_near_one_sixth() {
    let g = synthesize::generate(&small_config(3, 1000)).unwrap();
    let mut mean = [0.0; 6];
    for (r, _) in &g.samples {
        for (m, v) in mean.iter_mut().zip(r.strengths.unwrap()) {
            *m += v / 1000.0;
        }
    }
    for m in mean {
        assert!((m - 1.0 / 6.0).abs() < 0.02, "{:?}", mean);
    }
}

#[test]
fn unreadable_sources_are_listed_and_all_failing_is_an_error() {
    let src = tempdir().unwrap();
    fs::write(src.path().join("bad.png"), b"not a png").unwrap();
    let x = texture(TextureKind::Checker, 1, 8, 8, &RngStream::new(1));
    tensor_io::write_tensor(&src.path().join("good.nsmt"), &x).unwrap();
    let mut cfg = small_config(2, 3);
    cfg.synthesize.source = src.path().display().to_string();
    let out = tempdir().unwrap();
    let r = synthesize::run(&cfg, out.path()).unwrap();
    assert_eq!(r.errors.len(), 1);
    assert!(r.errors[0].contains("bad.png"));
    assert_eq!(r.manifest.by_role(Role::Clean).count(), 1);
    assert_eq!(r.manifest.by_role(Role::Corrupted).count(), 3);

    fs::remove_file(src.path().join("good.nsmt")).unwrap();
    let e = synthesize::run(&cfg, tempdir().unwrap().path()).unwrap_err().to_string();
    assert!(e.contains("bad.png"), "{}", e);
}

#[test]
fn training_modes_check_their_inputs() {
    let data = tempdir().unwrap();
    let cfg = small_config(4, 12);
    let s = synthesize::run(&cfg, data.path()).unwrap();
    let out = tempdir().unwrap();

    let e = train::run(&cfg, &s.manifest_path, TrainingMode::Finetune, None, out.path()).unwrap_err();
    assert!(is_invalid(&e), "{}", e);

    let no_clean = Manifest::new(s.manifest.by_role(Role::Clean).take(1).cloned().collect(), data.path());
    let p = data.path().join("one_clean.jsonl");
    no_clean.save(&p).unwrap();
    let e = train::run(&cfg, &p, TrainingMode::Pretrain, None, out.path()).unwrap_err();
    assert!(is_invalid(&e), "{}", e);
    let e = train::run(&cfg, &p, TrainingMode::Scratch, None, out.path()).unwrap_err();
    assert!(is_invalid(&e), "{}", e);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = tempdir().unwrap();
    let mut cfg = small_config(5, 6);
    let s = synthesize::run(&cfg, data.path()).unwrap();
    cfg.train.epochs = 0;
    let out = tempdir().unwrap();
    let r = train::run(&cfg, &s.manifest_path, TrainingMode::Scratch, None, out.path()).unwrap();
    let init = EncoderCheckpoint::initialize(&cfg.encoder().unwrap()).unwrap();
    assert_eq!(r.checkpoint.encoder, init.encoder);
    assert_eq!(r.checkpoint.head, init.head);
    assert!(read_log(&out.path().join(train::LOG_NAME)).unwrap().is_empty());
}

#[test]
fn pretrain_finetune_and_scratch_logs_compare() {
    let data = tempdir().unwrap();
    let cfg = small_config(6, 20);
    let s = synthesize::run(&cfg, data.path()).unwrap();
    let dirs: Vec<_> = (0..4).map(|_| tempdir().unwrap()).collect();
    let pre = train::run(&cfg, &s.manifest_path, TrainingMode::Pretrain, None, dirs[0].path()).unwrap();
    let ft = train::run(&cfg, &s.manifest_path, TrainingMode::Finetune, Some(&pre.checkpoint_path), dirs[1].path()).unwrap();
    assert_eq!(ft.checkpoint.encoder, pre.checkpoint.encoder);
    assert_eq!(ft.checkpoint.history.len(), 2);
    train::run(&cfg, &s.manifest_path, TrainingMode::Scratch, None, dirs[2].path()).unwrap();
    let joint = train::run(&cfg, &s.manifest_path, TrainingMode::Joint, None, dirs[3].path()).unwrap();
    assert_eq!(joint.checkpoint.stage, Stage::Finetuned);

    let scratch_log = read_log(&dirs[2].path().join(train::LOG_NAME)).unwrap();
    let ft_log = read_log(&dirs[1].path().join(train::LOG_NAME)).unwrap();
    assert_eq!(ft_log.len(), 2);
    assert!(ft_log.iter().all(|r| r.val_loss.is_some()));
    let gap = final_gap(&scratch_log, &ft_log).unwrap();
    assert_eq!(gap, scratch_log[1].val_loss.unwrap() - ft_log[1].val_loss.unwrap());
    let header = fs::read_to_string(dirs[1].path().join(train::LOG_NAME)).unwrap();
    assert!(header.starts_with("epoch,train_loss,val_loss\n"));
    let (back, sha) = checkpoint_io::load(&ft.checkpoint_path).unwrap();
    assert_eq!(back, ft.checkpoint);
    assert_eq!(sha, ft.sha256);
}

#[test]
fn constant_image_gives_zero_spread() {
    let ckpt = fixed_model(8);
    let img = ImageTensor::filled(1, 20, 20, 0.4);
    let p = estimate_image(&ckpt, "x", &img, 8, 5, &RngStream::new(0)).unwrap();
    let single = predict_strengths(&ckpt, &ImageTensor::filled(1, 8, 8, 0.4)).unwrap();
    assert_eq!(p.windows, 5);
    for c in 0..6 {
        assert_eq!(p.std[c], 0.0);
        assert!((p.mean[c] - single.as_array()[c]).abs() < 1e-15);
    }
}

#[test]
fn window_means_are_per_crop_averages_and_reproducible() {
    let ckpt = fixed_model(8);
    let img = texture(TextureKind::Mixed, 1, 24, 24, &RngStream::new(9));
    let s = RngStream::new(3).derive("window", 0);
    let five = estimate_image(&ckpt, "x", &img, 8, 5, &s).unwrap();
    assert_eq!(five, estimate_image(&ckpt, "x", &img, 8, 5, &s).unwrap());
    let (crops, padded) = window_crops(&img, 8, 5, &s).unwrap();
    assert!(!padded);
    for c in 0..6 {
        let by_hand: f64 = crops.iter().map(|x| predict_strengths(&ckpt, x).unwrap().as_array()[c]).sum::<f64>() / 5.0;
        assert!((five.mean[c] - by_hand).abs() < 1e-12);
    }
    let one = estimate_image(&ckpt, "x", &img, 8, 1, &s).unwrap();
    assert_eq!(one, estimate_image(&ckpt, "x", &img, 8, 1, &s).unwrap());
    assert_ne!(one.mean, five.mean);
    assert!(one.std.iter().all(|&v| v == 0.0));

    let small = estimate_image(&ckpt, "x", &img.crop(0, 0, 5, 6).unwrap(), 8, 5, &s).unwrap();
    assert!(small.padded);
    assert_eq!(small.windows, 1);
}

#[test]
fn estimate_needs_an_existing_checkpoint_and_matching_window() {
    let data = tempdir().unwrap();
    let mut cfg = small_config(8, 3);
    let s = synthesize::run(&cfg, data.path()).unwrap();
    let out = tempdir().unwrap();
    let e = estimate::run(&cfg, &s.manifest_path, &data.path().join("missing.nsmc"), out.path()).unwrap_err();
    assert!(is_invalid(&e));

    let ck = data.path().join("m.nsmc");
    checkpoint_io::save(&ck, &fixed_model(8)).unwrap();
    let r = estimate::run(&cfg, &s.manifest_path, &ck, out.path()).unwrap();
    assert_eq!(r.predictions.len(), 3);
    let (back, prov) = estimate::read_predictions(&r.path).unwrap();
    assert_eq!(back, r.predictions);
    assert_eq!(prov.unwrap(), r.provenance);

    cfg.estimate.window_size = 6;
    assert!(is_invalid(&estimate::run(&cfg, &s.manifest_path, &ck, out.path()).unwrap_err()));
}

fn record(id: &str, strengths: Option<[f64; 6]>, metadata: Metadata) -> Record {
    Record {
        id: id.into(),
        path: format!("{}.nsmt", id),
        role: Role::External,
        clean_id: None,
        strengths,
        seed_path: None,
        order: None,
        metadata,
    }
}

fn pred(id: &str, mean: [f64; 6]) -> Prediction {
    Prediction { id: id.into(), windows: 1, padded: false, mean, std: [0.0; 6] }
}

fn analyze_cfg(analyses: &[&str]) -> Config {
    let mut c = Config::default();
    c.analyze.analyses = analyses.iter().map(|s| s.to_string()).collect();
    c
}

#[test]
fn perfect_predictions_give_zero_rmse_and_unit_r2() {
    let mut records = Vec::new();
    let mut preds = Vec::new();
    for i in 0..30 {
        let s = noisomics_core::engine::sample_strengths(&RngStream::new(2).derive("s", i));
        let id = format!("r{}", i);
        records.push(record(&id, Some(*s.as_array()), Metadata::default()));
        preds.push(pred(&id, *s.as_array()));
    }
    let m = Manifest::new(records, "");
    let out = analyze::analyze(&analyze_cfg(&["metrics", "classification"]), &preds, &m, Provenance::default()).unwrap();
    let r = &out.report;
    for name in noisomics::commands::component_names().iter().chain([&"all".to_string()]) {
        assert_eq!(r.find("rmse", name).unwrap().value, Some(0.0));
        assert_eq!(r.find("r_squared", name).unwrap().value, Some(1.0));
    }
    assert_eq!(r.find("dominant_accuracy", "all").unwrap().value, Some(1.0));
}

#[test]
fn constructed_depth_arms_are_recovered() {
    let run = |beta_fixed: f64, beta_gained: f64| {
        let mut records = Vec::new();
        let mut preds = Vec::new();
        let mut d = RngStream::new(13).draws();
        for (arm, beta) in [("fixed", beta_fixed), ("gained", beta_gained)] {
            for i in 0..40 {
                let depth = 100.0 + 700.0 * i as f64 / 39.0;
                let id = format!("{}{}", arm, i);
                let v = 0.2 + beta * depth + d.normal(0.0, 0.5);
                records.push(record(&id, None, Metadata { depth_um: Some(depth), arm: Some(arm.into()), ..Default::default() }));
                preds.push(pred(&id, [v, 0.1, 0.1, 0.1, 0.1, 0.1]));
            }
        }
        let m = Manifest::new(records, "");
        analyze::analyze(&analyze_cfg(&["depth"]), &preds, &m, Provenance::default()).unwrap().report
    };
    let r = run(0.01, 0.0);
    for (subset, beta) in [("gaussian:control", 0.01), ("gaussian:intervention", 0.0)] {
        let row = r.find("depth_slope", subset).unwrap();
        let se = (row.ci_high.unwrap() - row.value.unwrap()) / 1.96;
        assert!((row.value.unwrap() - beta).abs() < 3.0 * se, "{:?}", row);
    }
    assert!(r.find("slope_p_value", "gaussian").unwrap().value.unwrap() < 1e-3);
    assert!(r.find("cohens_f2", "gaussian").unwrap().note.starts_with("large"));
    // Constant components have zero residual variance and no effect.
    assert!(r.find("cohens_f2", "clean").unwrap().note.starts_with("small"));

    let same = run(0.01, 0.01);
    assert!(same.find("cohens_f2", "gaussian").unwrap().note.starts_with("small"));
}

#[test]
fn missing_metadata_is_reported_not_fatal() {
    let records = (0..5).map(|i| record(&format!("r{}", i), None, Metadata::default())).collect();
    let preds: Vec<_> = (0..5).map(|i| pred(&format!("r{}", i), [0.1 * i as f64, 0.2, 0.1, 0.1, 0.1, 0.3])).collect();
    let m = Manifest::new(records, "");
    let out = analyze::analyze(&analyze_cfg(&ANALYSES), &preds, &m, Provenance::default()).unwrap();
    for metric in ["mean_abs_shap", "depth_slope"] {
        let skipped: Vec<_> = out.report.rows.iter().filter(|r| r.metric == metric).collect();
        assert_eq!(skipped.len(), 6);
        assert!(skipped.iter().all(|r| r.note.starts_with("skipped: missing metadata") && r.value.is_none()));
    }
    assert!(out.report.find("rmse", "all").unwrap().note.starts_with("skipped"));

    let unknown = vec![pred("nope", [0.1; 6])];
    let e = analyze::analyze(&analyze_cfg(&["metrics"]), &unknown, &m, Provenance::default()).unwrap_err();
    assert!(e.to_string().contains("nope"));
}

#[test]
fn shapley_rows_and_sankey_triples_come_from_metadata() {
    let mut records = Vec::new();
    let mut preds = Vec::new();
    let mut d = RngStream::new(21).draws();
    for i in 0..60 {
        let iso = 100 + 100 * d.below(16);
        let bright = d.uniform01();
        let id = format!("r{}", i);
        records.push(record(&id, None, Metadata { iso: Some(iso), brightness: Some(bright), ..Default::default() }));
        let g = 0.1 + iso as f64 / 4000.0;
        preds.push(pred(&id, [g, 0.1, 0.1 + 0.3 * bright, 0.1, 0.1, 0.2]));
    }
    let m = Manifest::new(records, "");
    let out = analyze::analyze(&analyze_cfg(&["shapley", "correlation"]), &preds, &m, Provenance::default()).unwrap();
    assert_eq!(out.sankey.len(), 2 * 6);
    let w = |f: &str, t: &str| out.sankey.iter().find(|s| s.source_feature == f && s.target_noise == t).unwrap().mean_abs_shap;
    assert!(w("iso", "gaussian") > 10.0 * w("brightness", "gaussian"));
    assert!(w("brightness", "poisson") > 10.0 * w("iso", "poisson"));
    let r = out.report.find("pearson_r", "gaussian~iso").unwrap();
    assert!((r.value.unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn bench_reports_positive_rates_and_identical_bytes() {
    let dir = tempdir().unwrap();
    let mut cfg = small_config(1, 0);
    cfg.workers = 2;
    let r = bench::run(&cfg, dir.path()).unwrap();
    for row in r.rows.iter().filter(|r| r.metric.ends_with("per_s")) {
        assert!(row.value.unwrap() > 0.0);
    }
    assert_eq!(r.find("identical_across_workers", "synthesis").unwrap().value, Some(1.0));
    assert!(dir.path().join("bench.csv").exists());
}

#[test]
fn pipeline_reports_are_byte_identical_across_worker_counts() {
    let run = |workers: usize| {
        let dir = tempdir().unwrap();
        let mut cfg = small_config(42, 24);
        cfg.workers = workers;
        let p = dir.path();
        let s = synthesize::run(&cfg, &p.join("data")).unwrap();
        let pre = train::run(&cfg, &s.manifest_path, TrainingMode::Pretrain, None, &p.join("pre")).unwrap();
        let ft = train::run(&cfg, &s.manifest_path, TrainingMode::Finetune, Some(&pre.checkpoint_path), &p.join("ft")).unwrap();
        let est = estimate::run(&cfg, &s.manifest_path, &ft.checkpoint_path, &p.join("est")).unwrap();
        analyze::run(&cfg, &est.path, &s.manifest_path, &p.join("an")).unwrap();
        let mut out = BTreeMap::new();
        for sub in ["data", "pre", "ft", "est", "an"] {
            for (k, v) in tree(&p.join(sub)) {
                if k != "config.resolved.toml" {
                    out.insert(format!("{}/{}", sub, k), v);
                }
            }
        }
        (out, dir)
    };
    let (a, _da) = run(1);
    let (b, _db) = run(3);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs", k);
    }
    let report = String::from_utf8(a["an/report.csv"].clone()).unwrap();
    let sha = String::from_utf8(a["ft/checkpoint.sha256"].clone()).unwrap();
    assert!(report.lines().skip(1).all(|l| l.contains(sha.trim()) && l.ends_with(",42")));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_noisomics");
    let dir = tempdir().unwrap();
    let ok = Command::new(bin)
        .args(["--seed", "3", "synthesize", "--count", "0", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    let missing = Command::new(bin)
        .args(["estimate"])
        .arg(dir.path().join("manifest.jsonl"))
        .args(["--checkpoint", "nope.nsmc", "--out"])
        .arg(dir.path().join("est"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("invalid argument"));

    let preds = dir.path().join("p.csv");
    write_predictions(&preds, &[], &Provenance::default()).unwrap();
    let an = Command::new(bin)
        .arg("analyze")
        .arg(&preds)
        .arg(dir.path().join("manifest.jsonl"))
        .arg("--out")
        .arg(dir.path().join("an"))
        .args(["--analyses", "shapley,depth"])
        .output()
        .unwrap();
    assert!(an.status.success(), "{}", String::from_utf8_lossy(&an.stderr));
    let csv = fs::read_to_string(dir.path().join("an/report.csv")).unwrap();
    assert!(csv.contains("skipped: missing metadata"));
}
