use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gvcsr_core::codec::GrayImage;
use gvcsr_core::dictionary::Dictionary;
use tempfile::TempDir;

fn gvcsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvcsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gvcsr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, count: usize, size: usize) -> Vec<PathBuf> {
    let s = size.to_string();
    let c = count.to_string();
    ok(
        dir,
        &[
            "synth", "--out", "imgs", "--count", &c, "--width", &s, "--height", &s, "--seed", "101",
        ],
    )
    .lines()
    .map(|l| dir.join(l))
    .collect()
}

fn path_args(paths: &[PathBuf]) -> Vec<&str> {
    paths.iter().map(|p| p.to_str().unwrap()).collect()
}

fn field(line: &str, key: &str) -> f64 {
    let tag = format!("{key}=");
    line.split_whitespace()
        .find_map(|w| w.strip_prefix(&tag))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn train_builds_requested_completeness_deterministically() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 3, 128);
    let mut args = vec!["train"];
    args.extend(path_args(&imgs));
    args.extend([
        "--gamma",
        "4",
        "--outer-iters",
        "1",
        "--alpha",
        "25",
        "--seed",
        "9",
        "--out",
    ]);
    ok(tmp.path(), &[args.as_slice(), &["a.gvcd"]].concat());
    ok(tmp.path(), &[args.as_slice(), &["b.gvcd"]].concat());
    let d = Dictionary::load(tmp.path().join("a.gvcd")).unwrap();
    assert_eq!((d.n(), d.m()), (64, 256));
    assert_eq!(
        fs::read(tmp.path().join("a.gvcd")).unwrap(),
        fs::read(tmp.path().join("b.gvcd")).unwrap()
    );
}

#[test]
fn train_rejects_empty_corpus() {
    let tmp = TempDir::new().unwrap();
    let out = gvcsr(tmp.path(), &["train", "--out", "d.gvcd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("d.gvcd").exists());
}

#[test]
fn encode_decode_round_trip_matches_encoder_reconstruction() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 1, 64);
    let img = imgs[0].to_str().unwrap();
    for coder in ["gvcsr", "omp-l:2", "omp-e:200"] {
        let enc = ok(
            tmp.path(),
            &[
                "encode", img, "--out", "x.gvcb", "--recon", "r.pgm", "--coder", coder, "--quant", "8",
            ],
        );
        let dec = ok(tmp.path(), &["decode", "x.gvcb", "--out", "y.pgm", "--reference", img]);
        assert_eq!(
            GrayImage::load(tmp.path().join("r.pgm")).unwrap(),
            GrayImage::load(tmp.path().join("y.pgm")).unwrap(),
            "{coder}"
        );
        let enc_line = enc.lines().next().unwrap();
        assert_eq!(field(enc_line, "bpp"), field(&dec, "bpp"));
        assert_eq!(field(enc_line, "psnr"), field(&dec, "psnr"));
        let bytes = fs::metadata(tmp.path().join("x.gvcb")).unwrap().len() as f64;
        assert_eq!(field(enc_line, "bits"), bytes * 8.0);
    }
}

#[test]
fn flat_image_is_nearly_free() {
    let tmp = TempDir::new().unwrap();
    let flat = GrayImage::new(256, 256, vec![117; 256 * 256]).unwrap();
    fs::write(tmp.path().join("flat.pgm"), flat.to_pgm()).unwrap();
    let out = ok(tmp.path(), &["encode", "flat.pgm", "--out", "f.gvcb"]);
    assert!(field(out.lines().next().unwrap(), "bpp") < 0.05, "{out}");
    ok(tmp.path(), &["decode", "f.gvcb", "--out", "f.pgm"]);
    assert_eq!(GrayImage::load(tmp.path().join("f.pgm")).unwrap(), flat);
}

#[test]
fn decode_with_wrong_dictionary_is_an_integrity_error() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 2, 64);
    let img = imgs[0].to_str().unwrap();
    ok(tmp.path(), &["encode", img, "--out", "x.gvcb", "--coder", "omp-l:1"]);
    let mut train = vec!["train"];
    train.extend(path_args(&imgs));
    train.extend(["--gamma", "1", "--outer-iters", "1", "--out", "other.gvcd"]);
    ok(tmp.path(), &train);

    let out = gvcsr(
        tmp.path(),
        &["decode", "x.gvcb", "--dict", "other.gvcd", "--out", "y.pgm"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("y.pgm").exists());

    let bytes = fs::read(tmp.path().join("x.gvcb")).unwrap();
    fs::write(tmp.path().join("cut.gvcb"), &bytes[..bytes.len() - 1]).unwrap();
    let out = gvcsr(tmp.path(), &["decode", "cut.gvcb", "--out", "y.pgm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("y.pgm").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 1, 32);
    let img = imgs[0].to_str().unwrap();
    assert_eq!(
        gvcsr(tmp.path(), &["encode", "missing.pgm", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gvcsr(tmp.path(), &["encode", img, "--out", "x", "--coder", "ksvd"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gvcsr(tmp.path(), &["encode", img, "--out", "x", "--quant", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        gvcsr(tmp.path(), &["encode", img, "--out", "x", "--alpha", "-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(gvcsr(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn rd_sweep_emits_one_row_per_combination_deterministically() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 2, 64);
    let mut args = vec!["rd-sweep"];
    args.extend(path_args(&imgs));
    args.extend([
        "--alpha", "50,100", "--omp-l", "1,2", "--omp-e", "300", "--quant", "5,10,20", "--out",
    ]);
    ok(tmp.path(), &[args.as_slice(), &["a.csv"]].concat());
    ok(tmp.path(), &[args.as_slice(), &["b.csv"]].concat());
    let a = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("b.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "# schema: gvcsr-rd/1");
    assert_eq!(lines[1], "image,coder,alpha,beta,omp_param,quant,bpp,psnr,mean_l0");
    assert_eq!(lines.len() - 2, 2 * 5 * 3);
    assert!(lines[2..].iter().all(|l| l.split(',').count() == 9));
}

#[test]
fn trace_has_one_row_per_iteration() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 1, 64);
    let summary = ok(tmp.path(), &["trace", imgs[0].to_str().unwrap(), "--out", "t.csv"]);
    let text = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema: gvcsr-trace/1");
    assert_eq!(lines[1], "iter,fidelity,variance,objective");
    assert_eq!((lines.len() - 2) as f64, field(&summary, "iterations"));
    for l in &lines[2..] {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn trace_of_flat_image_is_constant() {
    let tmp = TempDir::new().unwrap();
    let flat = GrayImage::new(32, 32, vec![40; 32 * 32]).unwrap();
    fs::write(tmp.path().join("flat.pgm"), flat.to_pgm()).unwrap();
    ok(tmp.path(), &["trace", "flat.pgm", "--out", "t.csv"]);
    let text = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    for l in text.lines().skip(2) {
        let objective: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(objective, 0.0);
    }
}

#[test]
fn fig1_csv_columns() {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &["fig1", "--out", "f.csv", "--samples", "5000", "--points", "6"],
    );
    let text = fs::read_to_string(tmp.path().join("f.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for w in rows.windows(2) {
        assert!(w[1][1] > w[0][1]);
    }
}

#[test]
fn set_round_trip_reproduces_encoder_reconstructions() {
    let tmp = TempDir::new().unwrap();
    let imgs = synth(tmp.path(), 3, 64);
    let mut args = vec!["set-encode"];
    args.extend(path_args(&imgs));
    args.extend([
        "--out",
        "s.gvcs",
        "--gamma",
        "2",
        "--outer-iters",
        "2",
        "--recon-dir",
        "rec",
    ]);
    let enc = ok(tmp.path(), &args);
    assert_eq!(enc.lines().filter(|l| l.starts_with("image ")).count(), 3);
    ok(tmp.path(), &["set-decode", "s.gvcs", "--out", "dec"]);
    for i in 0..3 {
        let name = format!("img_{i}.pgm");
        assert_eq!(
            GrayImage::load(tmp.path().join("rec").join(&name)).unwrap(),
            GrayImage::load(tmp.path().join("dec").join(&name)).unwrap()
        );
    }

    let bytes = fs::read(tmp.path().join("s.gvcs")).unwrap();
    fs::write(tmp.path().join("bad.gvcs"), &bytes[..bytes.len() - 2]).unwrap();
    let out = gvcsr(tmp.path(), &["set-decode", "bad.gvcs", "--out", "bad"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("bad").exists());
}
