use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_airtree");

/// Small but complete configuration: 64^3 volumes, 32 px MIPs, 3 folds.
const TINY: &str = r#"{
  "seed": 7,
  "cohort": { "n_per_class": 3, "volume_dim": 64 },
  "preprocess": { "mip_size": 32 },
  "train": { "config": { "max_epochs": 2, "folds": 3, "batch_size": 4 } },
  "cluster": { "pca": { "dim": 8 }, "k": 3 },
  "reproduce": { "subsets": 2, "k_values": [2, 3], "alt_pca_dim": 4 }
}"#;

fn airtree(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    if !cfg.exists() {
        fs::write(&cfg, TINY).unwrap();
    }
    let work = dir.join("work");
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&work)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = airtree(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(files_with_ext(&p, ext));
        } else if p.extension().is_some_and(|x| x == ext) {
            v.push(p);
        }
    }
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_cohort_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["synth", "--n-per-class", "2"]);
    }
    let vols = files_with_ext(&a.path().join("work/cohort"), "lvol");
    assert_eq!(vols.len(), 8);
    let manifest = csv_rows(&a.path().join("work/cohort/manifest.csv"));
    assert_eq!(manifest.len(), 8);
    let mut per_class = [0; 4];
    for row in &manifest {
        per_class[row[1].parse::<usize>().unwrap()] += 1;
    }
    assert_eq!(per_class, [2; 4]);
    for v in &vols {
        let other = b.path().join("work/cohort").join(v.file_name().unwrap());
        assert_eq!(fs::read(v).unwrap(), fs::read(other).unwrap(), "{}", v.display());
    }
    assert_eq!(
        fs::read(a.path().join("work/cohort/manifest.csv")).unwrap(),
        fs::read(b.path().join("work/cohort/manifest.csv")).unwrap()
    );
}

#[test]
fn zero_subjects_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = airtree(d.path(), &["synth", "--n-per-class", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("work/cohort/manifest.csv").exists());
}

#[test]
fn preprocess_writes_every_variant() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n-per-class", "2"]);
    ok(d.path(), &["preprocess"]);
    let mips = d.path().join("work/mips");
    assert_eq!(files_with_ext(&mips, "pgm").len(), 8 * 4 * 3);
    let printed = String::from_utf8(ok(d.path(), &["config"]).stdout).unwrap();
    let hash = printed.lines().last().unwrap().trim_start_matches("config hash: ").to_string();
    let sidecar = json(&mips.join("D_T/sub0000.json"));
    assert_eq!(sidecar["config_hash"], hash.as_str());
    assert_eq!(sidecar["size"], 32);
}

#[test]
fn corrupted_volume_fails_only_that_subject() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n-per-class", "2"]);
    let victim = d.path().join("work/cohort/sub0005.lvol");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(&victim, bytes).unwrap();
    let out = airtree(d.path(), &["preprocess"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("7 processed, 1 failed"), "{stderr}");
    let errors = csv_rows(&d.path().join("work/errors/preprocess.csv"));
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0][0], "sub0005");
    assert_eq!(files_with_ext(&d.path().join("work/mips"), "pgm").len(), 7 * 4 * 3);
}

#[test]
fn missing_upstream_artifact_names_the_command() {
    let d = tempfile::tempdir().unwrap();
    let out = airtree(d.path(), &["preprocess"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `airtree synth --out"));

    ok(d.path(), &["synth", "--n-per-class", "2"]);
    ok(d.path(), &["preprocess"]);
    let out = airtree(d.path(), &["encode"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.ckpt") && stderr.contains("run `airtree finetune --out"), "{stderr}");
    let out = airtree(d.path(), &["cluster"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `airtree encode --out"));
}

#[test]
fn identity_model_scores_perfectly() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth"]);
    ok(d.path(), &["preprocess"]);
    ok(d.path(), &["evaluate", "--identity-model"]);
    let summary = json(&d.path().join("work/eval/summary.json"));
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["n_subjects"], 12);
        assert_eq!(r["dice"]["mean"], 1.0);
        assert_eq!(r["fpr"]["mean"], 0.0);
        assert_eq!(r["tl"]["mean"], 1.0);
        assert_eq!(r["cl"]["mean"], 0.0);
        assert_eq!(r["dice"]["sd"], 0.0);
    }
    let per_view = csv_rows(&d.path().join("work/eval/recon.csv"));
    assert_eq!(per_view.len(), 2 * 12 * 3);
}

#[test]
fn full_pipeline_is_deterministic_and_stamped() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let steps = ["synth", "preprocess", "train", "finetune", "encode", "cluster", "evaluate", "reproduce"];
    for d in [a.path(), b.path()] {
        for s in steps {
            ok(d, &[s]);
        }
    }
    let w = a.path().join("work");
    let hash = json(&w.join("cohort/manifest.csv.meta.json"))["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for f in ["models/D_T/train.json", "clusters/summary.json", "eval/summary.json", "repro/report.json"] {
        assert_eq!(json(&w.join(f))["config_hash"], hash.as_str(), "{f}");
    }
    for f in ["clusters/assignments.csv", "eval/recon.csv", "eval/table.csv", "repro/variants.csv"] {
        let meta = PathBuf::from(format!("{}.meta.json", w.join(f).display()));
        assert_eq!(json(&meta)["config_hash"], hash.as_str(), "{f}");
    }
    let train = json(&w.join("models/D_T/train.json"));
    assert_eq!(train["folds"].as_array().unwrap().len(), 3);
    for f in 0..3 {
        assert!(w.join(format!("models/D_T/fold{f}.ckpt")).exists());
    }
    for f in ["clusters/assignments.csv", "features/raw.bin", "eval/recon.csv", "repro/report.json"] {
        assert_eq!(fs::read(w.join(f)).unwrap(), fs::read(b.path().join("work").join(f)).unwrap(), "{f}");
    }
    let table = csv_rows(&w.join("eval/table.csv"));
    assert_eq!(table[0][0], "D+T/D+T");
    assert_eq!(table[1][0], "D+T/ND+T");
}

#[test]
fn config_hash_ignores_paths_and_threads() {
    let d = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let hash_in = |dir: &Path, extra: &[&str]| -> String {
        let mut args = vec!["config"];
        args.extend_from_slice(extra);
        let out = ok(dir, &args);
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().last().unwrap().trim_start_matches("config hash: ").to_string()
    };
    let hash_of = |extra: &[&str]| hash_in(d.path(), extra);
    let base = hash_of(&[]);
    assert_eq!(base, hash_in(other.path(), &[]));
    assert_eq!(base, hash_of(&["--jobs", "3"]));
    assert_ne!(base, hash_of(&["--seed", "8"]));
    assert_ne!(base, hash_of(&["--set", "cluster.k=4"]));
    let out = airtree(d.path(), &["config", "--set", "cluster.nonexistent=1"]);
    assert_eq!(out.status.code(), Some(2));
}
