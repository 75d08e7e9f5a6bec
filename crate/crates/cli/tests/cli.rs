use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn denoise(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_denoise"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("DENOISE_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let dst = dir.join("smoke.toml");
    fs::copy(src, &dst).unwrap();
    dst
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn command_chain_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    ok(denoise(&cfg, &["synth"]));
    for split in ["train", "validation", "test"] {
        ok(denoise(&cfg, &["mix", "--split", split]));
    }
    ok(denoise(&cfg, &["train", "--mode", "bsd"]));

    let work = dir.path().join("work");
    let history = csv_rows(&work.join("models/bsd.history.csv"));
    assert_eq!(history.len(), 2, "one row per epoch");
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("models/bsd.model.json")).unwrap()).unwrap();
    let meta = &model["metadata"];
    let min_val = history.iter().map(|r| r[2].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(meta["best_val_loss"].as_str().unwrap().parse::<f64>().unwrap(), min_val);
    assert_eq!(meta["epochs"], "2");

    ok(denoise(&cfg, &["enhance", "--mode", "bsd"]));
    ok(denoise(&cfg, &["enhance", "--baseline", "logmmse"]));
    for entry in fs::read_dir(work.join("mixes/test")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "wav") {
            let stem = path.file_stem().unwrap().to_str().unwrap();
            let enhanced = work.join("enhanced/bsd").join(format!("{stem}.enh.wav"));
            assert_eq!(hound::WavReader::open(&path).unwrap().duration(), hound::WavReader::open(&enhanced).unwrap().duration());
        }
    }

    let table = ok(denoise(&cfg, &["evaluate", "--systems", "bsd,logmmse"]));
    let aggregate = csv_rows(&work.join("reports/test_aggregate.csv"));
    let utterances = csv_rows(&work.join("reports/test_utterances.csv"));
    // noisy, bsd and logmmse for every mixture, then per SNR present.
    assert_eq!(utterances.len(), 3 * 6);
    let snrs: std::collections::BTreeSet<&str> = utterances.iter().map(|r| r.get(1).unwrap()).collect();
    assert_eq!(aggregate.len(), 3 * snrs.len());
    assert_eq!(table.lines().count(), aggregate.len() + 1);

    // A single file, outside any manifest.
    let single = dir.path().join("single");
    let input = fs::read_dir(work.join("mixes/test")).unwrap().map(|e| e.unwrap().path()).find(|p| p.extension().is_some_and(|e| e == "wav")).unwrap();
    ok(denoise(&cfg, &["enhance", "--mode", "bsd", "--input", input.to_str().unwrap(), "--out-dir", single.to_str().unwrap()]));
    assert_eq!(fs::read_dir(&single).unwrap().count(), 1);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(denoise(&bad, &["synth"]).status.code(), Some(2));
    assert_eq!(denoise(&dir.path().join("missing.toml"), &["synth"]).status.code(), Some(2));

    // No corpus and no model yet: an I/O-class failure.
    assert_eq!(denoise(&cfg, &["enhance", "--mode", "bd"]).status.code(), Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_denoise")).args(["synth", "--config"]).arg(&cfg).env("DENOISE_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
