use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
trials = 12
seed = 5

[pipeline.train]
max_epochs = 2
patience = 1

[pipeline.svm]
grid = [0.1, 1.0]
folds = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_movedetect"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn movedetect")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = run(&["synth", "--trials", "9", "--seed", "7", "--out", d], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tree(&tmp.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&tmp.path().join("b")));

    let again = run(&["synth", "--trials", "9", "--seed", "7", "--out", "a"], tmp.path());
    assert_eq!(code(&again), 2);
}

#[test]
fn full_matrix_counts_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let o = run(&["full-matrix", "--config", cfg, "--synth", "--out", "r1"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let results = fs::read_to_string(tmp.path().join("r1/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().skip(1).collect();
    let count = |metric: &str| lines.iter().filter(|l| l.split(',').nth(4) == Some(metric)).count();
    assert_eq!(count("twp"), 8 * 3 * 3);
    assert_eq!(count("edr"), 8 * 3 * 3);
    assert_eq!(count("ndr"), 8 * 3 * 3);
    assert_eq!(count("accuracy"), 8 * 3);

    // 12 trials -> 4 per held-out set -> 2 test trials per fold.
    let outcomes = fs::read_to_string(tmp.path().join("r1/outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count() - 1, 8 * 3 * 3 * 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r1/run-manifest.json")).unwrap()).unwrap();
    let fp = manifest["config_fingerprint"].as_str().unwrap();
    assert_eq!(fp.len(), 64);
    assert!(lines.iter().all(|l| l.ends_with(fp)));
    assert_eq!(manifest["seeds"]["folds"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["folds"][0]["training_windows"], 8 * 12);

    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r1/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["config_fingerprint"], fp);
    assert_eq!(stats["pairwise"].as_array().unwrap().len(), 6);

    // Same config in another directory with two jobs reproduces every byte.
    let o = run(&["full-matrix", "--config", cfg, "--synth", "--jobs", "2", "--out", "r2"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&tmp.path().join("r1")), tree(&tmp.path().join("r2")));

    let refused = run(&["full-matrix", "--config", cfg, "--synth", "--out", "r1"], tmp.path());
    assert_eq!(code(&refused), 2);
    let replaced = run(&["full-matrix", "--config", cfg, "--synth", "--out", "r1", "--overwrite"], tmp.path());
    assert_eq!(code(&replaced), 0);
    assert_eq!(fs::read_to_string(tmp.path().join("r1/results.csv")).unwrap(), results);
}

#[test]
fn train_then_stats_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["synth", "--config", cfg, "--out", "data"], tmp.path())), 0);

    let o = run(&["train", "--config", cfg, "--data", "data", "--methods", "SE", "--out", "t"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let models: Vec<String> = fs::read_dir(tmp.path().join("t/models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".bin"))
        .collect();
    assert_eq!(models.len(), 3 * 2);
    assert!(!tmp.path().join("t/results.csv").exists());

    let o = run(
        &["eval-pseudo-online", "--config", cfg, "--data", "data", "--methods", "S,E,SE", "--windows", "1,2", "--out", "p"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(tmp.path().join("p/results.csv")).unwrap();
    assert!(!results.contains(",accuracy,"));

    let o = run(
        &["stats", "--results", "p/results.csv", "--metric", "edr", "--conditions", "S1,E2,SE2", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("s/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["friedman"]["kind"], "Friedman");
    assert_eq!(stats["conditions"], serde_json::json!(["S1", "E2", "SE2"]));
    for p in stats["pairwise"].as_array().unwrap() {
        assert_eq!(p["m"], 3);
        let raw = p["test"]["p_value"].as_f64().unwrap();
        assert_eq!(p["p_adjusted"].as_f64().unwrap(), (raw * 3.0).min(1.0));
    }

    let o = run(&["report", "--results", "p/results.csv", "--svg", "--out", "rep"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(tmp.path().join("rep/summary.csv")).unwrap();
    // 3 methods x 2 window counts x 3 metrics
    assert_eq!(summary.lines().count() - 1, 18);
    assert!(fs::read_to_string(tmp.path().join("rep/twp.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn offline_only_writes_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = run(
        &["eval-offline", "--config", cfg.to_str().unwrap(), "--synth", "--methods", "D,M", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(tmp.path().join("o/results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|r| r.contains(",accuracy,")));
    assert!(!tmp.path().join("o/outcomes.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();

    let cases: &[(&[&str], i32)] = &[
        (&["full-matrix", "--data", "missing", "--out", "x"], 2),
        (&["full-matrix", "--synth", "--methods", "SX", "--out", "x"], 2),
        (&["full-matrix", "--synth", "--windows", "0", "--out", "x"], 2),
        (&["full-matrix", "--synth", "--data", ".", "--out", "x"], 2),
        (&["full-matrix", "--synth"], 2),
        (&["full-matrix", "--config", cfg, "--synth", "--subjects", "S99", "--out", "x"], 2),
        (&["stats", "--results", "nope.csv", "--out", "x"], 2),
        (&["stats", "--conditions", "E3", "--out", "x"], 2),
        (&["train", "--config", cfg, "--synth", "--trials", "4", "--out", "x"], 3),
        (&["no-such-command"], 2),
    ];
    for (args, want) in cases {
        let o = run(args, tmp.path());
        assert_eq!(code(&o), *want, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fs::write(tmp.path().join("bad.toml"), "sed = 1\n").unwrap();
    assert_eq!(code(&run(&["synth", "--config", "bad.toml", "--out", "x"], tmp.path())), 2);

    fs::create_dir(tmp.path().join("broken")).unwrap();
    fs::write(tmp.path().join("broken/manifest.json"), "{ not json").unwrap();
    assert_eq!(code(&run(&["full-matrix", "--data", "broken", "--out", "x"], tmp.path())), 3);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "trials = 12\nseed = 1\nout = \"from_file\"\n").unwrap();
    let o = run(&["synth", "--config", "c.toml", "--trials", "6", "--out", "from_flag"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("from_flag/manifest.json").exists());
    assert!(!tmp.path().join("from_file").exists());
    let manifest = fs::read_to_string(tmp.path().join("from_flag/manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let trials: usize = m["subjects"][0]["sets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["trials"].as_array().unwrap().len())
        .sum();
    assert_eq!(trials, 6);
}
