use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lightseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightseg")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, size: usize, split: &str) -> Output {
    lightseg(&[
        "synth", "--out", p(dir), "--count", &count.to_string(), "--size", &format!("{size}x{size}"),
        "--spacing", "0.8", "--mass-mm", "5-12", "--masses", "1", "--seed", "3", "--split", split,
    ])
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_manifest_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let o = synth(&a, 8, 64, "6/1/1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("train 6, val 1, test 1"));
    assert_eq!(code(&synth(&b, 8, 64, "6/1/1")), 0);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 17);
    assert_eq!(fa, fb);
}

#[test]
fn synth_default_split_for_forty() {
    let t = tempfile::tempdir().unwrap();
    let o = lightseg(&["synth", "--out", p(t.path()), "--count", "40", "--size", "32x32", "--spacing", "1.5", "--masses", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("train 30, val 5, test 5"));
}

#[test]
fn synth_errors_exit_one() {
    let t = tempfile::tempdir().unwrap();
    let o = synth(&t.path().join("x"), 40, 32, "30/5/6");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not sum"), "{}", stderr(&o));
    let blocker = t.path().join("file");
    fs::write(&blocker, b"").unwrap();
    assert_eq!(code(&synth(&blocker.join("sub"), 2, 32, "2/0/0")), 1);
    assert_eq!(code(&lightseg(&["synth", "--out", p(t.path()), "--size", "64"])), 1);
}

#[test]
fn params_tables() {
    let o = lightseg(&["params", "--depth", "1", "--filters", "16", "--conv", "standard", "--residual", "false"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("total: 2497 (2.50K)"), "{}", stdout(&o));

    let o = lightseg(&["params", "--depth", "7", "--filters", "16", "--conv", "separable", "--residual", "true"]);
    let line = stdout(&o).lines().find(|l| l.starts_with("total:")).unwrap().to_string();
    let total: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((total / 5.3e6 - 1.0).abs() <= 0.25, "{line}");

    assert_eq!(code(&lightseg(&["params", "--depth", "0"])), 1);
    assert_eq!(code(&lightseg(&["params", "--conv", "dense"])), 1);
}

#[test]
fn params_warns_on_large_activations() {
    let o = lightseg(&["params", "--size", "1536x1536"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    let o = lightseg(&["params", "--depth", "3", "--filters", "4", "--size", "128x128"]);
    assert!(!stderr(&o).contains("warning"));
}

#[test]
fn variants_table() {
    let o = lightseg(&["variants"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].contains("claimed") && lines[0].contains("ratio"));
    assert!(lines[5].contains("4622875"));
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["train", "--help"], &["infer", "--help"]] {
        assert_eq!(code(&lightseg(args)), 0);
    }
    assert_eq!(code(&lightseg(&[])), 1);
    assert_eq!(code(&lightseg(&["frobnicate"])), 1);
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    root: PathBuf,
}

fn trained(size: usize, extra: &[&str]) -> (Trained, Output) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    assert_eq!(code(&synth(&data, 4, size, "2/1/1")), 0);
    let ckpt = root.join("m.lsg");
    let mut args = vec![
        "train", "--data", p(&data), "--out", p(&ckpt), "--depth", "2", "--filters", "2", "--epochs", "2", "--seed", "1",
    ];
    args.extend_from_slice(extra);
    let o = lightseg(&args);
    (Trained { _dir: dir, data, ckpt, root }, o)
}

#[test]
fn train_writes_checkpoint_and_history() {
    let (t, o) = trained(32, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("epoch    1/2") && out.contains("val DICE"));
    assert!(out.lines().last().unwrap().starts_with("final val mean DICE = "));
    let hist = fs::read_to_string(t.root.join("m.lsg.history.json")).unwrap();
    assert!(hist.contains("\"per_epoch\""));
    assert!(t.ckpt.is_file());
}

#[test]
fn train_logs_patch_count() {
    let (_, o) = trained(128, &["--mode", "patch:64,64"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("training on 8 patches (4 per image"), "{}", stdout(&o));
}

#[test]
fn train_rejects_incompatible_extents() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&synth(&data, 2, 48, "1/1/0")), 0);
    let o = lightseg(&["train", "--data", p(&data), "--out", p(&dir.path().join("m")), "--depth", "6", "--filters", "2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("divisible by 32"), "{}", stderr(&o));
    assert!(!dir.path().join("m").exists());
    let o = lightseg(&["train", "--data", p(&dir.path().join("nowhere")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn infer_is_deterministic_and_binary() {
    let (t, o) = trained(32, &[]);
    assert_eq!(code(&o), 0);
    let image = t.data.join("images/0000.png");
    let (m1, m2, probs) = (t.root.join("m1.png"), t.root.join("m2.png"), t.root.join("p.png"));
    for m in [&m1, &m2] {
        let o = lightseg(&["infer", "--ckpt", p(&t.ckpt), "--image", p(&image), "--out", p(m), "--probs-out", p(&probs)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let mask = image::open(&m1).unwrap().into_luma8();
    assert!(mask.pixels().all(|px| px.0[0] == 0 || px.0[0] == 255));
    assert!(matches!(image::open(&probs).unwrap(), image::DynamicImage::ImageLuma16(_)));

    let strict = t.root.join("strict.png");
    let o = lightseg(&["infer", "--ckpt", p(&t.ckpt), "--image", p(&image), "--out", p(&strict), "--threshold", "0.999999"]);
    assert_eq!(code(&o), 0);
    assert!(image::open(&strict).unwrap().into_luma8().pixels().all(|px| px.0[0] == 0));
}

#[test]
fn infer_error_codes() {
    let (t, _) = trained(32, &[]);
    let image = t.data.join("images/0000.png");
    let out = t.root.join("o.png");

    let junk = t.root.join("junk.lsg");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = lightseg(&["infer", "--ckpt", p(&junk), "--image", p(&image), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));

    let mut bytes = fs::read(&t.ckpt).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&junk, &bytes).unwrap();
    assert_eq!(code(&lightseg(&["infer", "--ckpt", p(&junk), "--image", p(&image), "--out", p(&out)])), 2);

    let odd = t.root.join("odd.png");
    image::GrayImage::new(31, 31).save(&odd).unwrap();
    let o = lightseg(&["infer", "--ckpt", p(&t.ckpt), "--image", p(&odd), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("pad or resize"), "{}", stderr(&o));

    let rgb = t.root.join("rgb.png");
    image::RgbImage::new(32, 32).save(&rgb).unwrap();
    assert_eq!(code(&lightseg(&["infer", "--ckpt", p(&t.ckpt), "--image", p(&rgb), "--out", p(&out)])), 1);
    let missing = t.root.join("missing.png");
    assert_eq!(code(&lightseg(&["infer", "--ckpt", p(&t.ckpt), "--image", p(&missing), "--out", p(&out)])), 1);
    assert!(!out.exists());
}

#[test]
fn eval_report_and_errors() {
    let (t, _) = trained(32, &[]);
    let report = t.root.join("r.json");
    let o = lightseg(&["eval", "--ckpt", p(&t.ckpt), "--data", p(&t.data), "--split", "test", "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mean DICE = ") && stdout(&o).contains("over 1 images"));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let per: Vec<f64> = rep["per_image_dice"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mean = rep["mean_dice"].as_f64().unwrap();
    assert!((per.iter().sum::<f64>() / per.len() as f64 - mean).abs() < 1e-12);

    assert_eq!(code(&lightseg(&["eval", "--data", p(&t.data)])), 1);
    let dir = tempfile::tempdir().unwrap();
    let only_train = dir.path().join("d");
    assert_eq!(code(&synth(&only_train, 2, 32, "2/0/0")), 0);
    let o = lightseg(&["eval", "--ckpt", p(&t.ckpt), "--data", p(&only_train), "--split", "test"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&lightseg(&["eval", "--ckpt", p(&t.ckpt), "--data", p(&t.data), "--split", "holdout"])), 1);
    assert_eq!(code(&lightseg(&["eval", "--ckpt", p(&t.data.join("none")), "--data", p(&t.data)])), 2);
}

#[test]
fn overfit_checkpoint_scores_its_own_image() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = lightseg(&[
        "synth", "--out", p(&data), "--count", "1", "--size", "32x32", "--spacing", "1.0", "--mass-mm", "6-10",
        "--masses", "1", "--calcs", "0-2", "--split", "1/0/0", "--seed", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = dir.path().join("m.lsg");
    let o = lightseg(&[
        "train", "--data", p(&data), "--out", p(&ckpt), "--depth", "2", "--filters", "4", "--conv", "standard",
        "--epochs", "200", "--seed", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = lightseg(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--split", "train"]);
    let line = stdout(&o);
    let dice: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(dice >= 0.95, "{line}");
}
