use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kseg::io::{read_manifest, SplitName};
use kseg::runner::{MetricsCsvRow, SummaryRow};

fn kseg(args: &[&str], seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kseg"));
    c.args(args).env_remove("KSEG_SEED");
    if let Some(s) = seed {
        c.env("KSEG_SEED", s);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kseg(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, subjects: usize, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "output_dir": "out",
  "dataset": {{ "subjects": {subjects}, "split_seed": 3,
               "phantom": {{ "seed": 11, "extents": [8, 8, 8], "task": "skull_strip" }} }},
  "train": {{ "epochs": 2, "batch_size": 4, "lr": 0.003, "seed": 5 }},
  "grid": [
    {{ "arch": "MLP", "domain": "SpatialToSpatial", "layers": 1, "width": 8 }},
    {{ "arch": "TransformerEncoder", "domain": "KToSpatial", "layers": 1, "width": 8, "heads": 2 }},
    {{ "arch": "TransformerEncoder", "domain": "KToK", "layers": 1, "width": 8, "heads": 2 }},
    {{ "arch": "TransformerEncoder", "domain": "KToK", "layers": 1, "width": 8, "heads": 2, "pe": {{ "kind": "fourier", "bands": 2 }} }}
    {extra}
  ]
}}"#
    );
    let p = dir.join("experiment.json");
    fs::write(&p, text).unwrap();
    p
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 50, "");
    let cfg = cfg.to_str().unwrap();
    ok(&["gen-data", cfg]);
    let data = dir.path().join("out/data");
    let first = read_dir_bytes(&data);
    assert_eq!(first.len(), 101);
    ok(&["gen-data", cfg]);
    assert_eq!(read_dir_bytes(&data), first);

    let m = read_manifest(&data.join("manifest.json")).unwrap();
    let count = |s| m.iter().filter(|e| e.split == s).count();
    assert_eq!((count(SplitName::Train), count(SplitName::Val), count(SplitName::Test)), (40, 5, 5));
}

#[test]
fn train_eval_report_flops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), 10, "");
    let cfg = cfg_path.to_str().unwrap();
    ok(&["gen-data", cfg]);

    let out = ok(&["train", cfg, "--filter", "arch=TransformerEncoder", "domain=KToSpatial"]);
    assert_eq!(out.lines().count(), 1, "{out}");
    ok(&["train", cfg, "--filter", "domain=KToK", "--jobs", "2"]);
    ok(&["train", cfg, "--filter", "arch=MLP"]);

    let runs = dir.path().join("out/runs");
    let run_dirs: Vec<_> = fs::read_dir(&runs).unwrap().collect();
    assert_eq!(run_dirs.len(), 4);
    for d in run_dirs {
        let d = d.unwrap().path();
        for f in ["config.json", "history.csv", "checkpoint.kseg", "metrics.csv", "status.json"] {
            assert!(d.join(f).exists(), "{}", d.join(f).display());
        }
        let rows: Vec<MetricsCsvRow> = csv::Reader::from_path(d.join("metrics.csv"))
            .unwrap()
            .deserialize()
            .map(Result::unwrap)
            .collect();
        let classes: Vec<&str> = rows.iter().map(|r| r.class.as_str()).collect();
        assert_eq!(classes, ["background", "brain", "All"]);
        assert!(rows.iter().all(|r| r.n_subjects == 1 && r.task == "skull_strip"));
        let history = fs::read_to_string(d.join("history.csv")).unwrap();
        assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,val_loss,val_dice_macro");
    }

    let summary: Vec<SummaryRow> = csv::Reader::from_path(dir.path().join("out/summary.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    assert_eq!(summary.len(), 4);
    let pe_row = summary.iter().find(|r| r.pe).unwrap();
    assert!(pe_row.delta_dice.is_some());
    assert!(summary.iter().filter(|r| !r.pe).all(|r| r.delta_dice.is_none()));

    // eval reproduces the metrics written by train
    let metrics_file = fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path().join("metrics.csv");
    let before = fs::read(&metrics_file).unwrap();
    ok(&["eval", cfg]);
    assert_eq!(fs::read(&metrics_file).unwrap(), before);

    let svg = dir.path().join("chart.svg");
    let text = ok(&["report", dir.path().join("out").to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(text.contains("|ΔDice|"));
    assert!(text.contains("Forward"));
    let svg = fs::read_to_string(svg).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches(r#"class="bar""#).count(), 4);

    let flops = ok(&["flops", cfg]);
    assert_eq!(flops.lines().filter(|l| l.starts_with("TransformerEncoder")).count(), 3 + 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), 10, "");
    let cfg = cfg_path.to_str().unwrap();

    // no dataset yet
    assert_eq!(kseg(&["train", cfg], None).status.code(), Some(1));
    // malformed filter and unknown key
    assert_eq!(kseg(&["train", cfg, "--filter", "arch"], None).status.code(), Some(1));
    assert_eq!(kseg(&["flops", cfg, "--filter", "colour=red"], None).status.code(), Some(1));
    // missing config file is a runtime IO failure
    assert_eq!(kseg(&["flops", "/nonexistent/x.json"], None).status.code(), Some(2));
    assert_eq!(kseg(&["gen-data", cfg], Some("nan")).status.code(), Some(1));
    // nothing to report
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(kseg(&["report", empty.path().to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn divergent_run_is_recorded_and_grid_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), 10, "");
    let text = fs::read_to_string(&cfg_path).unwrap().replace("\"lr\": 0.003", "\"lr\": 1e300");
    fs::write(&cfg_path, text).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    ok(&["gen-data", cfg]);
    let out = kseg(&["train", cfg, "--filter", "domain=KToK"], None);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.matches("failed").count(), 2, "{stdout}");
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.matches(",failed,").count(), 2, "{summary}");
}

#[test]
fn seed_override_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), 10, "");
    let cfg = cfg_path.to_str().unwrap();
    let vol = dir.path().join("out/data/subject_000.kvol");
    assert!(kseg(&["gen-data", cfg], Some("1")).status.success());
    let a = fs::read(&vol).unwrap();
    assert!(kseg(&["gen-data", cfg], Some("2")).status.success());
    assert_ne!(fs::read(&vol).unwrap(), a);
    assert!(kseg(&["gen-data", cfg], Some("1")).status.success());
    assert_eq!(fs::read(&vol).unwrap(), a);
}
