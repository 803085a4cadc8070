//! Acceptance: every subcommand produces bit-identical outputs across two
//! runs with the same seed. Wall-time fields are reported as 0 under
//! RETARGET_DETERMINISTIC so whole report files can be byte-compared.

use std::path::{Path, PathBuf};
use std::process::Command;

use retarget_core::image::save_image;
use retarget_core::synthetic::mixed_corpus;

fn run_ok(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_retarget"))
        .args(args)
        .env("RETARGET_DETERMINISTIC", "1")
        .output()
        .expect("spawning retarget");
    assert!(
        out.status.success(),
        "retarget {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_dataset(dir: &Path) -> PathBuf {
    let corpus = mixed_corpus(4, 24, 12, 99);
    let data = dir.join("data");
    std::fs::create_dir(&data).unwrap();
    for (i, img) in corpus.iter().enumerate() {
        save_image(img, data.join(format!("img{i:02}.ppm"))).unwrap();
    }
    data
}

fn assert_identical(label: &str, a: &Path, b: &Path) {
    let ba = std::fs::read(a).unwrap();
    let bb = std::fs::read(b).unwrap();
    assert!(!ba.is_empty(), "{label}: empty output");
    assert_eq!(ba, bb, "{label}: outputs differ between runs");
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let input = dir.path().join("input.ppm");
    save_image(&mixed_corpus(2, 32, 16, 321)[0], &input).unwrap();

    let mut ckpts = Vec::new();
    for run in 0..2 {
        let root = dir.path().join(format!("run{run}"));
        std::fs::create_dir(&root).unwrap();
        let ckpt = root.join("net.ckpt");
        let metrics = root.join("metrics.jsonl");
        run_ok(&[
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--episodes",
            "32",
            "--batch",
            "16",
            "--seed",
            "42",
            "--out",
            ckpt.to_str().unwrap(),
            "--metrics",
            metrics.to_str().unwrap(),
        ]);

        let output = root.join("retargeted.ppm");
        let trace = root.join("trace.json");
        run_ok(&[
            "retarget",
            "--input",
            input.to_str().unwrap(),
            "--ratio",
            "0.75",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ]);

        let mo_out = root.join("multiop.ppm");
        let mo_report = root.join("multiop.json");
        run_ok(&[
            "multiop",
            "--input",
            input.to_str().unwrap(),
            "--ratio",
            "0.75",
            "--output",
            mo_out.to_str().unwrap(),
            "--report",
            mo_report.to_str().unwrap(),
        ]);

        let bench_report = root.join("bench.json");
        run_ok(&[
            "bench",
            "--input",
            input.to_str().unwrap(),
            "--ratios",
            "0.75,0.5",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--report",
            bench_report.to_str().unwrap(),
        ]);
        ckpts.push(root);
    }

    let (a, b) = (&ckpts[0], &ckpts[1]);
    for file in [
        "net.ckpt",
        "metrics.jsonl",
        "retargeted.ppm",
        "trace.json",
        "multiop.ppm",
        "multiop.json",
        "bench.json",
    ] {
        assert_identical(file, &a.join(file), &b.join(file));
    }
    println!(
        "[PASS] criterion 8: train/retarget/multiop/bench outputs are \
         bit-identical across two seeded runs"
    );
}
