//! Dataset generation and grid execution.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! data/manifest.json, data/subject_NNN.kvol, data/subject_NNN_labels.kvol
//! runs/<config_id>/config.json, history.csv, checkpoint.kseg, metrics.csv, status.json
//! summary.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kseg_core::data::{generate_phantom, split_dataset, PhantomParams, Task};
use kseg_core::metrics::MetricsReport;
use kseg_core::models::Model;
use kseg_core::pipeline::{evaluate, train, EpochRecord, Sample, TrainConfig};
use kseg_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GridEntry};
use crate::error::{CliError, Result};
use crate::io::{self, ManifestEntry, SplitName};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";

/// Writes every phantom and the manifest. Returns the manifest path.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.data_dir();
    let n = cfg.dataset.subjects;
    let split = split_dataset(n, cfg.dataset.split_seed)?;
    let mut which = vec![SplitName::Train; n];
    for &i in &split.val {
        which[i] = SplitName::Val;
    }
    for &i in &split.test {
        which[i] = SplitName::Test;
    }
    let mut manifest = Vec::with_capacity(n);
    for (i, &split) in which.iter().enumerate() {
        let params = PhantomParams {
            seed: derive_seed(cfg.dataset.phantom.seed, &[i as u64]),
            ..cfg.dataset.phantom.clone()
        };
        let (v, l) = generate_phantom(&params)?;
        let entry = ManifestEntry {
            volume_path: format!("subject_{i:03}.kvol").into(),
            label_path: format!("subject_{i:03}_labels.kvol").into(),
            split,
        };
        io::write_volume(&dir.join(&entry.volume_path), &v)?;
        io::write_labels(&dir.join(&entry.label_path), &l)?;
        manifest.push(entry);
    }
    let path = dir.join(MANIFEST);
    io::write_manifest(&path, &manifest)?;
    Ok(path)
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Reads and normalises the generated dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no dataset at {}; run gen-data first",
            dir.display()
        )));
    }
    let mut ds = Dataset::default();
    for e in io::read_manifest(&path)? {
        let v = io::read_volume(&dir.join(&e.volume_path))?;
        let l = io::read_labels(&dir.join(&e.label_path))?;
        if v.extents() != cfg.dataset.phantom.extents {
            return Err(CliError::Config(format!(
                "{} has extents {:?}, config says {:?}",
                e.volume_path.display(),
                v.extents(),
                cfg.dataset.phantom.extents
            )));
        }
        let s = Sample::new(v, l)?;
        match e.split {
            SplitName::Train => ds.train.push(s),
            SplitName::Val => ds.val.push(s),
            SplitName::Test => ds.test.push(s),
        }
    }
    if ds.train.is_empty() || ds.val.is_empty() || ds.test.is_empty() {
        return Err(CliError::Config(format!("{} leaves a split empty", path.display())));
    }
    Ok(ds)
}

/// Contents of `config.json` in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub entry: GridEntry,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub config_id: String,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
}

impl RunStatus {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsCsvRow {
    pub config_id: String,
    pub arch: String,
    pub domain: String,
    pub task: String,
    pub class: String,
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_subjects: usize,
    pub dice_std: f64,
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::SkullStrip => "skull_strip",
        Task::Tissue => "tissue",
    }
}

/// One row per class, then the foreground macro row `All`.
pub fn metrics_rows(config_id: &str, entry: &GridEntry, task: Task, report: &MetricsReport) -> Vec<MetricsCsvRow> {
    let names = task.class_names();
    report
        .classes
        .iter()
        .chain([&report.all])
        .map(|r| MetricsCsvRow {
            config_id: config_id.to_owned(),
            arch: entry.arch.name().to_owned(),
            domain: entry.domain.name().to_owned(),
            task: task_name(task).to_owned(),
            class: match r.class {
                Some(c) => names.get(c).map_or_else(|| c.to_string(), |n| (*n).to_owned()),
                None => "All".to_owned(),
            },
            dice: r.dice.mean,
            sensitivity: r.sensitivity.mean,
            specificity: r.specificity.mean,
            n_subjects: report.n_subjects,
            dice_std: r.dice.std,
        })
        .collect()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

pub fn write_metrics(path: &Path, rows: &[MetricsCsvRow]) -> Result<()> {
    io::write_file(path, &csv_bytes(rows))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::format(path, e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn read_run_record(dir: &Path) -> Result<RunRecord> {
    read_json(&dir.join("config.json"))
}

pub fn read_run_status(dir: &Path) -> Result<RunStatus> {
    read_json(&dir.join("status.json"))
}

fn run_one(cfg: &ExperimentConfig, entry: &GridEntry, data: &Dataset) -> Result<RunStatus> {
    let id = entry.config_id();
    let dir = cfg.runs_dir().join(&id);
    let tc = cfg.train_config(entry);
    let record = RunRecord {
        config_id: id.clone(),
        entry: entry.clone(),
        train: tc.clone(),
    };
    io::write_file(&dir.join("config.json"), &json_bytes(&record))?;
    // stale outputs from an earlier run must not survive a failure
    for stale in ["history.csv", "checkpoint.kseg", "metrics.csv"] {
        let _ = fs::remove_file(dir.join(stale));
    }
    let status = match train(&tc, &data.train, &data.val) {
        Ok(out) => {
            io::write_file(&dir.join("history.csv"), &csv_bytes::<EpochRecord>(&out.history))?;
            io::write_checkpoint(&dir.join("checkpoint.kseg"), out.model.params())?;
            let report = evaluate(&out.model, &data.test, entry.domain)?;
            write_metrics(&dir.join("metrics.csv"), &metrics_rows(&id, entry, cfg.task(), &report))?;
            RunStatus {
                config_id: id,
                status: "ok".into(),
                message: None,
                best_epoch: Some(out.best_epoch),
                steps: Some(out.steps),
            }
        }
        Err(e @ kseg_core::Error::Training { .. }) => RunStatus {
            config_id: id,
            status: "failed".into(),
            message: Some(e.to_string()),
            best_epoch: None,
            steps: None,
        },
        Err(e) => return Err(e.into()),
    };
    io::write_file(&dir.join("status.json"), &json_bytes(&status))?;
    Ok(status)
}

/// Trains every selected entry, `jobs` at a time. Runs that diverge are
/// recorded as failed and do not stop the others.
pub fn train_grid(cfg: &ExperimentConfig, entries: &[GridEntry], jobs: usize) -> Result<Vec<RunStatus>> {
    if entries.is_empty() {
        return Err(CliError::Config("filters select no grid entries".into()));
    }
    let data = load_dataset(cfg)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunStatus>>>> = Mutex::new(entries.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, entries.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(entry) = entries.get(i) else { break };
                eprintln!("train {} {} {} pe={}", entry.config_id(), entry.arch.name(), entry.domain.name(), entry.pe_enabled());
                let r = run_one(cfg, entry, &data);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let statuses = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every entry visited"))
        .collect::<Result<Vec<_>>>()?;
    write_summary(cfg)?;
    Ok(statuses)
}

/// Loads the best checkpoint of `entry`.
pub fn load_model(cfg: &ExperimentConfig, entry: &GridEntry) -> Result<Model> {
    let dir = cfg.runs_dir().join(entry.config_id());
    let ckpt = dir.join("checkpoint.kseg");
    if !ckpt.exists() {
        return Err(CliError::Config(format!("no checkpoint at {}; run train first", ckpt.display())));
    }
    let mut model = Model::build(&entry.model_spec(&cfg.dataset), 0)?;
    model.params_mut().load(&io::read_checkpoint(&ckpt)?)?;
    Ok(model)
}

/// Re-scores saved checkpoints on the test split and rewrites their metrics.
pub fn eval_grid(cfg: &ExperimentConfig, entries: &[GridEntry]) -> Result<Vec<MetricsReport>> {
    if entries.is_empty() {
        return Err(CliError::Config("filters select no grid entries".into()));
    }
    let data = load_dataset(cfg)?;
    let mut reports = Vec::new();
    for entry in entries {
        let id = entry.config_id();
        let model = load_model(cfg, entry)?;
        let mut report = evaluate(&model, &data.test, entry.domain)?;
        report.config_id = id.clone();
        write_metrics(
            &cfg.runs_dir().join(&id).join("metrics.csv"),
            &metrics_rows(&id, entry, cfg.task(), &report),
        )?;
        reports.push(report);
    }
    write_summary(cfg)?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_id: String,
    pub arch: String,
    pub domain: String,
    pub pe: bool,
    pub status: String,
    pub dice: Option<f64>,
    pub dice_std: Option<f64>,
    /// Macro Dice with PE minus without, on the PE row of a complete pair.
    pub delta_dice: Option<f64>,
}

/// Macro row of a run's metrics, if it has any.
fn macro_row(dir: &Path) -> Result<Option<MetricsCsvRow>> {
    let p = dir.join("metrics.csv");
    if !p.exists() {
        return Ok(None);
    }
    Ok(read_csv::<MetricsCsvRow>(&p)?.into_iter().find(|r| r.class == "All"))
}

/// One row per grid entry that has been run, in grid order.
pub fn summary_rows(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let runs = cfg.runs_dir();
    let mut rows = Vec::new();
    for e in &cfg.grid {
        let dir = runs.join(e.config_id());
        if !dir.join("status.json").exists() {
            continue;
        }
        let status = read_run_status(&dir)?;
        let m = if status.ok() { macro_row(&dir)? } else { None };
        rows.push(SummaryRow {
            config_id: e.config_id(),
            arch: e.arch.name().into(),
            domain: e.domain.name().into(),
            pe: e.pe_enabled(),
            status: status.status,
            dice: m.as_ref().map(|r| r.dice),
            dice_std: m.as_ref().map(|r| r.dice_std),
            delta_dice: None,
        });
    }
    for i in 0..rows.len() {
        if !rows[i].pe {
            continue;
        }
        let with = &cfg.grid.iter().find(|e| e.config_id() == rows[i].config_id).expect("row from grid");
        let twin = GridEntry {
            pe: Default::default(),
            ..(*with).clone()
        }
        .config_id();
        if let Some(j) = rows.iter().position(|r| r.config_id == twin) {
            if let (Some(a), Some(b)) = (rows[i].dice, rows[j].dice) {
                rows[i].delta_dice = Some(a - b);
            }
        }
    }
    Ok(rows)
}

pub fn write_summary(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = cfg.output_dir.join(SUMMARY);
    io::write_file(&path, &csv_bytes(&summary_rows(cfg)?))?;
    Ok(path)
}
