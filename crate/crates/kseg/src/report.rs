//! Text tables and the SVG bar chart built from a results directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kseg_core::metrics::{flops_estimate, REFERENCE_TABLE};
use kseg_core::models::ModelSpec;

use crate::config::{ExperimentConfig, GridEntry};
use crate::error::{CliError, Result};
use crate::runner::{read_csv, read_run_record, read_run_status, MetricsCsvRow, RunRecord};

/// Everything known about one run directory.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub record: RunRecord,
    pub ok: bool,
    pub message: Option<String>,
    pub metrics: Vec<MetricsCsvRow>,
}

impl RunResult {
    pub fn label(&self) -> String {
        let e = &self.record.entry;
        let pe = if e.pe_enabled() { " +PE" } else { "" };
        format!("{} {}{pe}", e.arch.name(), e.domain.name())
    }

    pub fn macro_row(&self) -> Option<&MetricsCsvRow> {
        self.metrics.iter().find(|r| r.class == "All")
    }
}

/// Run directories live in `<dir>/runs` when that exists, else in `dir`.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let runs = if dir.join("runs").is_dir() { dir.join("runs") } else { dir.to_path_buf() };
    let listing = fs::read_dir(&runs).map_err(|e| CliError::io(&runs, e))?;
    let mut dirs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.json").exists())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let record = read_run_record(&d)?;
        let status = if d.join("status.json").exists() { Some(read_run_status(&d)?) } else { None };
        let metrics_path = d.join("metrics.csv");
        let metrics = if metrics_path.exists() { read_csv(&metrics_path)? } else { Vec::new() };
        out.push(RunResult {
            ok: status.as_ref().is_some_and(|s| s.ok()) && !metrics.is_empty(),
            message: status.and_then(|s| s.message),
            record,
            metrics,
        });
    }
    if !out.iter().any(|r| !r.metrics.is_empty()) {
        return Err(CliError::Report(format!("no metrics.csv under {}", runs.display())));
    }
    // grid order: domain, then architecture, then PE off before on
    out.sort_by_key(|r| {
        let e = &r.record.entry;
        (e.domain as u8, e.arch as u8, e.pe_enabled(), r.record.config_id.clone())
    });
    Ok(out)
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// Forward, backward and parameter counts per spec, FFT/iFFT excluded.
pub fn flops_table(specs: &[(String, ModelSpec)]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<34} {:>11} {:>16} {:>16} {:>12}", "model", "in_features", "Forward", "Backward", "Parameters").unwrap();
    for (label, spec) in specs {
        let r = flops_estimate(spec, 1);
        writeln!(
            s,
            "{:<34} {:>11} {:>16} {:>16} {:>12}",
            label, spec.in_features, r.forward, r.backward, r.parameters
        )
        .unwrap();
    }
    writeln!(s, "Counts are per sample and exclude the FFT/iFFT. k-space inputs are wider").unwrap();
    writeln!(s, "(2·H·(W/2+1) instead of H·W), so the first layer differs between domains.").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "Reference figures (GFLOPs, millions of parameters):").unwrap();
    writeln!(s, "{:<34} {:>11} {:>16} {:>16} {:>12}", "model", "", "Forward", "Backward", "Parameters").unwrap();
    for row in REFERENCE_TABLE {
        writeln!(
            s,
            "{:<34} {:>11} {:>16.2} {:>16.2} {:>12.2}",
            row.arch.name(),
            "",
            row.forward_g,
            row.backward_g,
            row.parameters_m
        )
        .unwrap();
    }
    s
}

/// FLOPs table for the selected entries of a config.
pub fn flops_for_config(cfg: &ExperimentConfig, entries: &[GridEntry]) -> String {
    let specs: Vec<(String, ModelSpec)> = entries
        .iter()
        .map(|e| {
            let pe = if e.pe_enabled() { " +PE" } else { "" };
            (format!("{} {}{pe}", e.arch.name(), e.domain.name()), e.model_spec(&cfg.dataset))
        })
        .collect();
    flops_table(&specs)
}

/// Pairs of runs that differ only in positional encoding: (with, without).
pub fn pe_pairs(results: &[RunResult]) -> Vec<(&RunResult, &RunResult)> {
    let mut out = Vec::new();
    for with in results.iter().filter(|r| r.record.entry.pe_enabled()) {
        let twin = GridEntry {
            pe: Default::default(),
            ..with.record.entry.clone()
        };
        let same_train = |r: &&RunResult| {
            let (a, b) = (&r.record.train, &with.record.train);
            (a.epochs, a.batch_size, a.lr, a.seed) == (b.epochs, b.batch_size, b.lr, b.seed)
        };
        if let Some(without) = results.iter().filter(same_train).find(|r| r.record.entry == twin) {
            out.push((with, without));
        }
    }
    out
}

pub fn text_report(results: &[RunResult]) -> String {
    let mut s = String::new();
    writeln!(s, "Test-split metrics, foreground macro (mean ± std over subjects)").unwrap();
    writeln!(s, "{:<18} {:<26} {:<15} {:<15} {:<15}", "domain", "model", "DSC", "Sens", "Spec").unwrap();
    for r in results.iter().filter(|r| r.ok) {
        let m = r.macro_row().expect("ok runs have a macro row");
        let e = &r.record.entry;
        let pe = if e.pe_enabled() { " +PE" } else { "" };
        writeln!(
            s,
            "{:<18} {:<26} {:<15} {:<15} {:<15}",
            e.domain.name(),
            format!("{}{pe}", e.arch.name()),
            pm(m.dice, m.dice_std),
            format!("{:.3}", m.sensitivity),
            format!("{:.3}", m.specificity)
        )
        .unwrap();
    }

    writeln!(s, "\nPer-class metrics").unwrap();
    for r in results.iter().filter(|r| r.ok) {
        writeln!(s, "{} [{}]", r.label(), r.record.config_id).unwrap();
        writeln!(s, "  {:<22} {:<15} {:>6} {:>6}", "class", "DSC", "Sens", "Spec").unwrap();
        for m in &r.metrics {
            writeln!(
                s,
                "  {:<22} {:<15} {:>6.3} {:>6.3}",
                m.class,
                pm(m.dice, m.dice_std),
                m.sensitivity,
                m.specificity
            )
            .unwrap();
        }
    }

    let pairs = pe_pairs(results);
    if !pairs.is_empty() {
        writeln!(s, "\nPositional-encoding ablation").unwrap();
        writeln!(s, "{:<34} {:>9} {:>9} {:>9}", "model", "DSC +PE", "DSC", "|ΔDice|").unwrap();
        for (with, without) in pairs {
            match (with.macro_row(), without.macro_row()) {
                (Some(a), Some(b)) => writeln!(
                    s,
                    "{:<34} {:>9.4} {:>9.4} {:>9.4}",
                    without.label(),
                    a.dice,
                    b.dice,
                    (a.dice - b.dice).abs()
                )
                .unwrap(),
                _ => writeln!(s, "{:<34} incomplete pair", without.label()).unwrap(),
            }
        }
    }

    let specs: Vec<(String, ModelSpec)> = results.iter().map(|r| (r.label(), r.record.train.model.clone())).collect();
    writeln!(s, "\nFLOPs").unwrap();
    s.push_str(&flops_table(&specs));

    let failed: Vec<&RunResult> = results.iter().filter(|r| !r.ok).collect();
    if !failed.is_empty() {
        writeln!(s, "\nFailed runs").unwrap();
        for r in failed {
            writeln!(
                s,
                "{} [{}]: {}",
                r.label(),
                r.record.config_id,
                r.message.as_deref().unwrap_or("no metrics")
            )
            .unwrap();
        }
    }
    s
}

const LABEL_W: f64 = 240.0;
const PLOT_W: f64 = 400.0;
const BAR_H: f64 = 14.0;
const ROW_H: f64 = 20.0;
const HEADER_H: f64 = 22.0;
const MARGIN: f64 = 10.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal Dice bars with ±std error bars, grouped by domain.
pub fn svg_report(results: &[RunResult]) -> String {
    let ok: Vec<&RunResult> = results.iter().filter(|r| r.ok).collect();
    let mut groups: Vec<(&str, Vec<&RunResult>)> = Vec::new();
    for r in ok {
        let d = r.record.entry.domain.name();
        match groups.iter_mut().find(|(g, _)| *g == d) {
            Some((_, v)) => v.push(r),
            None => groups.push((d, vec![r])),
        }
    }
    let rows: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let height = 2.0 * MARGIN + HEADER_H * groups.len() as f64 + ROW_H * rows as f64 + 20.0;
    let width = LABEL_W + PLOT_W + 2.0 * MARGIN + 60.0;
    let x0 = MARGIN + LABEL_W;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let mut y = MARGIN;
    for (domain, runs) in &groups {
        writeln!(s, r#"<text x="{MARGIN}" y="{:.2}" font-weight="bold">{}</text>"#, y + 15.0, escape(domain)).unwrap();
        y += HEADER_H;
        for r in runs {
            let m = r.macro_row().expect("ok runs have a macro row");
            let e = &r.record.entry;
            let pe = if e.pe_enabled() { " +PE" } else { "" };
            let label = format!("{}{pe}", e.arch.name());
            let bar = (m.dice.clamp(0.0, 1.0) * PLOT_W * 100.0).round() / 100.0;
            let cy = y + ROW_H / 2.0;
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, cy + 4.0, escape(&label)).unwrap();
            writeln!(
                s,
                r##"<rect class="bar" x="{x0:.2}" y="{:.2}" width="{bar:.2}" height="{BAR_H}" fill="#4c72b0" data-dice="{}"/>"##,
                cy - BAR_H / 2.0,
                m.dice
            )
            .unwrap();
            let lo = ((m.dice - m.dice_std).clamp(0.0, 1.0) * PLOT_W * 100.0).round() / 100.0;
            let hi = ((m.dice + m.dice_std).clamp(0.0, 1.0) * PLOT_W * 100.0).round() / 100.0;
            writeln!(
                s,
                r#"<g class="error" stroke="black"><line x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/></g>"#,
                x0 + lo,
                x0 + hi,
                x0 + lo,
                cy - 4.0,
                x0 + lo,
                cy + 4.0,
                x0 + hi,
                cy - 4.0,
                x0 + hi,
                cy + 4.0
            )
            .unwrap();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}">{:.3}</text>"#, x0 + hi + 4.0, cy + 4.0, m.dice).unwrap();
            y += ROW_H;
        }
    }
    // Dice axis
    writeln!(s, r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#, x0 + PLOT_W).unwrap();
    for t in 0..=5 {
        let x = x0 + PLOT_W * t as f64 / 5.0;
        writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.1}</text>"#, y + 14.0, t as f64 / 5.0).unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}
