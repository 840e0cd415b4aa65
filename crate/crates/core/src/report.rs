//! Report rendering (metrics CSV, Markdown tables) and atomic file writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::continual::ComparisonReport;
use crate::error::{Error, Result};
use crate::eval::{format_cell, MetricReport};

/// Write via a temporary file in the target directory, then rename over the
/// destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub const METRICS_HEADER: &str = "method,task,repetition,class,precision,recall,f";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per (run, task, class) plus a `macro` row per (run, task).
/// Values are printed at full precision.
pub fn metrics_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for rec in &report.records {
        let method = csv_field(&rec.method);
        for t in &rec.tasks {
            let m = &t.metrics;
            for c in 0..m.n_classes() {
                writeln!(
                    out,
                    "{method},{},{},{},{},{},{}",
                    t.task, rec.repetition, report.class_ids[c], m.precision[c], m.recall[c], m.f[c]
                )
                .unwrap();
            }
            writeln!(
                out,
                "{method},{},{},macro,{},{},{}",
                t.task, rec.repetition, m.macro_precision, m.macro_recall, m.macro_f
            )
            .unwrap();
        }
    }
    out
}

fn cells(mean: &MetricReport, std: &MetricReport) -> [String; 3] {
    [
        format_cell(mean.macro_precision, std.macro_precision),
        format_cell(mean.macro_recall, std.macro_recall),
        format_cell(mean.macro_f, std.macro_f),
    ]
}

/// Markdown report: macro precision / recall / F-score per method and task
/// as `mean (std)` over repetitions, a per-classifier table for the last
/// task when several classifier variants were run, replay and memory
/// accounting, and any failed runs.
pub fn markdown_report(report: &ComparisonReport, repetitions: usize) -> String {
    let mut out = String::new();
    writeln!(out, "# Class-incremental comparison\n").unwrap();
    writeln!(
        out,
        "Macro-averaged metrics on held-out trials; each cell is mean (standard deviation) over {repetitions} repetition(s).\n"
    )
    .unwrap();

    let mut header = String::from("| Method |");
    let mut rule = String::from("|---|");
    for t in 1..=report.n_tasks {
        for m in ["Precision", "Recall", "F-score"] {
            write!(header, " Task {t} {m} |").unwrap();
            rule.push_str("---|");
        }
    }
    writeln!(out, "{header}\n{rule}").unwrap();
    for s in &report.summaries {
        let mut row = format!("| {} |", s.method);
        for t in &s.tasks {
            match t {
                Some(sum) => {
                    for c in cells(&sum.mean, &sum.std) {
                        write!(row, " {c} |").unwrap();
                    }
                }
                None => row.push_str(" FAILED | FAILED | FAILED |"),
            }
        }
        if !s.failed_repetitions.is_empty() && s.tasks.iter().any(Option::is_some) {
            write!(row, " FAILED repetitions {:?} |", s.failed_repetitions).unwrap();
        }
        writeln!(out, "{row}").unwrap();
    }

    // strategies as rows, classifier variants as column groups, last task only
    let mut variants: Vec<&str> = Vec::new();
    let mut strategies = Vec::new();
    for s in &report.summaries {
        if !variants.contains(&s.variant.as_str()) {
            variants.push(&s.variant);
        }
        if !strategies.contains(&s.strategy) {
            strategies.push(s.strategy);
        }
    }
    if variants.len() > 1 {
        let last = report.n_tasks;
        writeln!(out, "\n## Task {last} by classifier\n").unwrap();
        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        for v in &variants {
            for m in ["Precision", "Recall", "F-score"] {
                write!(header, " {v} {m} |").unwrap();
                rule.push_str("---|");
            }
        }
        writeln!(out, "{header}\n{rule}").unwrap();
        for strategy in &strategies {
            let mut row = format!("| {strategy} |");
            for v in &variants {
                let cell = report
                    .summaries
                    .iter()
                    .find(|s| s.strategy == *strategy && s.variant == *v)
                    .map(|s| s.tasks.last().and_then(Option::as_ref));
                match cell {
                    Some(Some(sum)) => {
                        for c in cells(&sum.mean, &sum.std) {
                            write!(row, " {c} |").unwrap();
                        }
                    }
                    Some(None) => row.push_str(" FAILED | FAILED | FAILED |"),
                    None => row.push_str(" - | - | - |"),
                }
            }
            writeln!(out, "{row}").unwrap();
        }
    }

    writeln!(out, "\n## Replay and memory\n").unwrap();
    let classes = report
        .class_ids
        .iter()
        .map(|c| format!("class {c}"))
        .collect::<Vec<_>>()
        .join(", ");
    writeln!(
        out,
        "| Method | Pseudo windows generated ({classes}) | Raw earlier-class windows retained |\n|---|---|---|"
    )
    .unwrap();
    for s in &report.summaries {
        let counts = s
            .replay_counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(out, "| {} | {counts} | {} |", s.method, s.memory_footprint).unwrap();
    }

    if !report.failures.is_empty() {
        writeln!(out, "\n## FAILED runs\n").unwrap();
        for f in &report.failures {
            writeln!(out, "- FAILED {} repetition {}: {}", f.method, f.repetition, f.message).unwrap();
        }
    }
    out
}
