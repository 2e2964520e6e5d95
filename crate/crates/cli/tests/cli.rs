use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use speechdiff::dsp::read_wav;
use speechdiff::metrics::{log_spectral_distance, snr_db};
use speechdiff::prompt::EditCommand;
use speechdiff::sim::{entry_path, load_manifest};

fn speechdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechdiff")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = speechdiff(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn simulate(dir: &Path, n: usize) -> String {
    let m = dir.join("manifest.jsonl");
    ok(&["--seed", "4", "simulate", "--out", dir.to_str().unwrap(), "--n-pairs", &n.to_string()]);
    m.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible_and_audited() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ma = simulate(&a, 10);
    simulate(&b, 10);
    let manifest = load_manifest(Path::new(&ma)).unwrap();
    assert_eq!(manifest.entries.len(), 10);
    assert_eq!(fs::read(&ma).unwrap(), fs::read(b.join("manifest.jsonl")).unwrap());
    for e in &manifest.entries {
        for p in [&e.source_path, &e.target_path] {
            assert_eq!(fs::read(a.join(p)).unwrap(), fs::read(b.join(p)).unwrap(), "{p}");
        }
        if let EditCommand::AddBackground { snr_db: want, .. } = e.command {
            let src = read_wav(entry_path(Path::new(&ma), &e.source_path)).unwrap();
            let tgt = read_wav(entry_path(Path::new(&ma), &e.target_path)).unwrap();
            let noise: Vec<f64> = tgt.samples().iter().zip(src.samples()).map(|(t, s)| t - s).collect();
            assert!((snr_db(src.samples(), &noise) - want).abs() <= 0.1, "{}", e.id);
        }
    }
}

#[test]
fn training_resumes_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let m = simulate(&tmp.path().join("data"), 6);
    let full = tmp.path().join("full.ckpt");
    let part = tmp.path().join("part.ckpt");
    let (full_s, part_s) = (full.to_str().unwrap(), part.to_str().unwrap());
    ok(&["--seed", "2", "train", "--manifest", &m, "--out", full_s, "--steps", "6"]);
    ok(&["--seed", "2", "train", "--manifest", &m, "--out", part_s, "--steps", "3"]);
    ok(&["--seed", "2", "train", "--manifest", &m, "--out", part_s, "--steps", "6", "--resume"]);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&part).unwrap());
    let csv_full = fs::read_to_string(tmp.path().join("full.ckpt.loss.csv")).unwrap();
    let csv_part = fs::read_to_string(tmp.path().join("part.ckpt.loss.csv")).unwrap();
    assert_eq!(csv_full, csv_part);
    assert_eq!(csv_full.lines().count(), 1 + 6);

    // A fresh rerun writes the same artifacts.
    let again = tmp.path().join("again.ckpt");
    ok(&["--seed", "2", "train", "--manifest", &m, "--out", again.to_str().unwrap(), "--steps", "6"]);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn smoke_training_is_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let m = simulate(&tmp.path().join("data"), 20);
    let ck = tmp.path().join("m.ckpt");
    let start = Instant::now();
    ok(&["--seed", "3", "train", "--manifest", &m, "--out", ck.to_str().unwrap(), "--steps", "100"]);
    assert!(start.elapsed().as_secs() < 120, "{:?}", start.elapsed());
    let csv = fs::read_to_string(tmp.path().join("m.ckpt.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn enhance_edit_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let m = simulate(&data, 4);
    let ck = tmp.path().join("m.ckpt");
    let ck_s = ck.to_str().unwrap();
    ok(&["--seed", "3", "train", "--manifest", &m, "--out", ck_s, "--steps", "4"]);
    let input = data.join("audio/pair_00000_source.wav");
    let in_s = input.to_str().unwrap();
    let (o1, o2) = (tmp.path().join("o1.wav"), tmp.path().join("o2.wav"));
    for o in [&o1, &o2] {
        ok(&["--seed", "9", "enhance", "--checkpoint", ck_s, "--in", in_s, "--out", o.to_str().unwrap(), "--prompt", "Remove noise"]);
    }
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    assert_eq!(read_wav(&o1).unwrap().len(), read_wav(&input).unwrap().len());

    let edited = tmp.path().join("e.wav");
    let line = ok(&[
        "--seed", "9", "edit", "--checkpoint", ck_s, "--in", in_s, "--out", edited.to_str().unwrap(),
        "--prompt", "Add reverberation with large room size",
    ]);
    assert!(line.contains("rt60"), "{line}");

    let noisy = tmp.path().join("b.wav");
    ok(&[
        "--seed", "9", "edit", "--checkpoint", ck_s, "--in", in_s, "--out", noisy.to_str().unwrap(),
        "--prompt", "Add background sound as rain with SNR as 5dB",
    ]);
    let lsd = log_spectral_distance(&read_wav(&input).unwrap(), &read_wav(&noisy).unwrap()).unwrap();
    assert!(lsd > 1.0, "{lsd}");

    let report = tmp.path().join("r.csv");
    ok(&["--seed", "9", "eval", "--checkpoint", ck_s, "--manifest", &m, "--out", report.to_str().unwrap()]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("entry_id,si_sdr_db,seg_snr_db,lsd,rt60_s"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o.wav");
    let out_s = out.to_str().unwrap();

    let r = speechdiff(&["--seed", "1", "edit", "--checkpoint", "x", "--in", "y", "--out", out_s, "--prompt", "Add zebras"]);
    assert_eq!(code(&r), 1);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("position 4"), "{err}");
    assert!(!out.exists());

    let r = speechdiff(&["--seed", "1", "enhance", "--checkpoint", "x", "--in", "y", "--out", out_s, "--prompt", "Add reverberation with small room"]);
    assert_eq!(code(&r), 1);

    let missing = tmp.path().join("none.ckpt");
    let r = speechdiff(&["--seed", "1", "enhance", "--checkpoint", missing.to_str().unwrap(), "--in", "y", "--out", out_s, "--prompt", "Remove noise"]);
    assert_eq!(code(&r), 3);
    assert!(!out.exists());

    assert_eq!(code(&speechdiff(&["kernel-check"])), 1, "seed is mandatory");
    assert_eq!(code(&speechdiff(&["--seed", "1", "frobnicate"])), 1);
    assert_eq!(code(&speechdiff(&["--help"])), 0);

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[solver]\nbogus = 2\n").unwrap();
    assert_eq!(code(&speechdiff(&["--config", cfg.to_str().unwrap(), "kernel-check"])), 1);
}

#[test]
fn config_file_supplies_seed_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 4\n[data]\nn_pairs = 3\n").unwrap();
    let a = tmp.path().join("a");
    ok(&["--config", cfg.to_str().unwrap(), "simulate", "--out", a.to_str().unwrap()]);
    assert_eq!(load_manifest(&a.join("manifest.jsonl")).unwrap().entries.len(), 3);
    let b = tmp.path().join("b");
    ok(&["--config", cfg.to_str().unwrap(), "simulate", "--out", b.to_str().unwrap(), "--n-pairs", "5"]);
    assert_eq!(load_manifest(&b.join("manifest.jsonl")).unwrap().entries.len(), 5);
    // Same seed from the file or the flag gives the same first entries.
    let c = tmp.path().join("c");
    ok(&["--seed", "4", "simulate", "--out", c.to_str().unwrap(), "--n-pairs", "3"]);
    assert_eq!(fs::read(a.join("manifest.jsonl")).unwrap(), fs::read(c.join("manifest.jsonl")).unwrap());
}

#[test]
fn kernel_check_passes_by_default() {
    let out = ok(&["--seed", "1", "kernel-check"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{out}");
}
