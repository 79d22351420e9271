use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[experiment]
variant = "DA-cRAE"
classifiers = ["mlp", "lda"]
seeds = [0]

[model]
dim = 5

[train]
epochs = 2
classifier_epochs = 2
batch_size = 32

[sweep]
lambda_a = [0.0, 0.5]
lambda_n = [0.0, 0.05]
dims = [3, 5]
fractions = [1.0, 0.5]

[data.synth]
subjects = 4
classes = 2
channels = 3
per_cell = 10
"#;

fn drae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drae")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn loso_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = drae(&["loso", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "1"]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["report.json", "folds.csv", "resolved_config.toml", "trainlogs/seed0_subject1.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let o = drae(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let s = text(&o);
    assert!(s.contains("DA-cRAE over 4 subject(s)"), "{s}");
    assert!(s.contains("lda"));
}

#[test]
fn flags_override_config_and_land_in_resolved_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = drae(&[
        "loso", "--config", &cfg, "--out", out.to_str().unwrap(), "--variant", "cAE", "--seed", "3", "--classifier",
        "knn", "--jobs", "1",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("variant = \"cAE\""), "{resolved}");
    assert!(resolved.contains("seeds = [3]"), "{resolved}");
    assert!(resolved.contains("\"knn\""), "{resolved}");
}

#[test]
fn sweep_dimsweep_datasize_emit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for (verb, file) in [
        ("sweep", "sweep.json"),
        ("dimsweep", "dimension.csv"),
        ("datasize", "datasize.csv"),
    ] {
        let out = dir.path().join(verb);
        let o = drae(&[verb, "--config", &cfg, "--out", out.to_str().unwrap(), "--classifier", "lda", "--jobs", "1"]);
        assert!(o.status.success(), "{verb}: {}", text(&o));
        let listing: Vec<String> = walk(&out);
        assert!(listing.iter().any(|p| p.ends_with(file)), "{verb}: {listing:?}");
    }
}

fn walk(dir: &Path) -> Vec<String> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p.to_string_lossy().into_owned());
        }
    }
    v
}

#[test]
fn synth_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seven.toml");
    std::fs::write(&cfg, "[data.synth]\nsubjects = 3\nclasses = 2\nchannels = 7\nper_cell = 10\n").unwrap();
    let out = dir.path().join("data");
    let o = drae(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(out.join("data.csv")).unwrap();
    // header plus 3 subjects x 2 classes x 10 rows
    assert_eq!(csv.lines().count(), 61);

    // the CSV contract has seven channels
    let cfg = tiny_config(dir.path());
    let o = drae(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("7 channels"), "{}", text(&o));
}

#[test]
fn gradcheck_verb_passes() {
    let o = drae(&["gradcheck"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("composite"));
    assert!(!text(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    for args in [
        vec!["loso", "--config", &cfg, "--out", out, "--variant", "nope"],
        vec!["loso", "--config", &cfg, "--out", out, "--lambda-a", "-1"],
        vec!["loso", "--config", &cfg, "--out", out, "--fraction", "0.5,0.25"],
        vec!["loso", "--config", &cfg, "--out", out, "--classifier", "svm"],
        vec!["loso", "--out", out, "--config", "/nonexistent/cfg.toml"],
        vec!["gradcheck", "--tol", "0"],
        vec!["frobnicate"],
    ] {
        let o = drae(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", text(&o));
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("x");
    let o = drae(&["loso", "--config", &cfg, "--out", out.to_str().unwrap(), "--data", "/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let o = drae(&["report", "--out", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}
