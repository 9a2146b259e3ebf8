use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::cv::{FoldMetrics, MetricsReport};
use super::tasks::TaskSpec;
use crate::error::{Error, Result};
use crate::io::csv_error;

const HEADER: [&str; 5] = ["task", "config", "fold", "class", "auroc"];
const MISSING: &str = "NA";

/// CSV and markdown paths for a report target. A `.md` target gets a
/// sibling `.csv`; anything else gets a sibling `.md`.
pub fn report_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "md") {
        (path.with_extension("csv"), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.with_extension("md"))
    }
}

/// Writes one CSV row per class and one `macro` row per fold, plus the
/// rendered markdown next to it. Returns both paths.
pub fn emit_report(reports: &[MetricsReport], path: &Path) -> Result<(PathBuf, PathBuf)> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no reports to write".into()));
    }
    let (csv_path, md_path) = report_paths(path);
    write_csv(reports, &csv_path)?;
    std::fs::write(&md_path, render_markdown(reports)).map_err(|e| Error::io(&md_path, e))?;
    Ok((csv_path, md_path))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| v.to_string())
}

pub fn write_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(path, e))?;
    for r in reports {
        let config = format!("{}#{}", r.label, r.fingerprint);
        let task = r.task_id.to_string();
        for f in &r.folds {
            let fold = (f.fold + 1).to_string();
            for (name, v) in r.class_names.iter().zip(&f.per_class) {
                w.write_record([task.as_str(), &config, &fold, name, &cell(*v)])
                    .map_err(|e| csv_error(path, e))?;
            }
            w.write_record([task.as_str(), &config, &fold, "macro", &cell(f.macro_auroc)])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`emit_report`] back into reports, in file order.
pub fn parse_report_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Schema(format!(
            "{}: header must be {}",
            path.display(),
            HEADER.join(",")
        )));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let parse_err = |column: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            column,
            reason,
        };
        let task_id: u8 = record[0]
            .parse()
            .map_err(|_| parse_err(1, format!("bad task {:?}", &record[0])))?;
        let (label, fingerprint) = record[1]
            .rsplit_once('#')
            .ok_or_else(|| parse_err(2, format!("config {:?} lacks a fingerprint", &record[1])))?;
        let fold: usize = record[2]
            .parse::<usize>()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| parse_err(3, format!("bad fold {:?}", &record[2])))?
            - 1;
        let class = &record[3];
        let value = match &record[4] {
            MISSING => None,
            text => Some(
                text.parse::<f64>()
                    .ok()
                    .filter(|v| (0.0..=1.0).contains(v))
                    .ok_or_else(|| parse_err(5, format!("bad AUROC {text:?}")))?,
            ),
        };

        let same = |rep: &MetricsReport| rep.task_id == task_id && rep.label == label && rep.fingerprint == fingerprint;
        if !reports.last().is_some_and(same) {
            reports.push(MetricsReport {
                task_id,
                label: label.to_string(),
                fingerprint: fingerprint.to_string(),
                class_names: Vec::new(),
                folds: Vec::new(),
            });
        }
        let rep = reports.last_mut().expect("just pushed");
        if rep.folds.last().is_none_or(|f| f.fold != fold) {
            rep.folds.push(FoldMetrics {
                fold,
                macro_auroc: None,
                per_class: Vec::new(),
            });
        }
        let first_fold = rep.folds.len() == 1;
        let current = rep.folds.last_mut().expect("just pushed");
        if class == "macro" {
            current.macro_auroc = value;
        } else {
            if first_fold {
                rep.class_names.push(class.to_string());
            } else if rep.class_names.get(current.per_class.len()).map(String::as_str) != Some(class) {
                return Err(parse_err(4, format!("unexpected class {class:?}")));
            }
            current.per_class.push(value);
        }
    }
    Ok(reports)
}

fn fmt_summary(s: Option<(f64, f64)>) -> String {
    s.map_or_else(|| MISSING.to_string(), |(m, sd)| format!("{m:.4} ± {sd:.4}"))
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| format!("{v:.4}"))
}

fn task_title(task_id: u8) -> String {
    match TaskSpec::new(task_id) {
        Ok(t) => format!("Task {task_id}: {}", t.title),
        Err(_) => format!("Task {task_id}"),
    }
}

/// `variant@h<dim>` labels produced by the ablation sweep.
fn sweep_key(label: &str) -> Option<(&str, usize)> {
    let (variant, dim) = label.rsplit_once("@h")?;
    Some((variant, dim.parse().ok()?))
}

/// Markdown tables: per task, one row per configuration with fold
/// macro-AUROCs and mean ± sd, then per-class means. Sweep results get one
/// section per variant with a column per hidden width.
pub fn render_markdown(reports: &[MetricsReport]) -> String {
    let (sweep, plain): (Vec<&MetricsReport>, Vec<&MetricsReport>) =
        reports.iter().partition(|r| sweep_key(&r.label).is_some());
    let mut out = String::new();

    let mut by_task: BTreeMap<u8, Vec<&MetricsReport>> = BTreeMap::new();
    for r in plain {
        by_task.entry(r.task_id).or_default().push(r);
    }
    for (task_id, group) in &by_task {
        let _ = writeln!(out, "## {}\n", task_title(*task_id));
        let k = group.iter().map(|r| r.folds.len()).max().unwrap_or(0);
        let mut head = "| Config |".to_string();
        let mut rule = "|---|".to_string();
        for f in 1..=k {
            let _ = write!(head, " Fold {f} |");
            rule.push_str("---|");
        }
        let _ = writeln!(out, "{head} Macro-AUROC (mean ± sd) |\n{rule}---|");
        for r in group {
            let _ = write!(out, "| {} |", r.label);
            for f in 0..k {
                let _ = write!(out, " {} |", fmt_value(r.folds.get(f).and_then(|f| f.macro_auroc)));
            }
            let _ = writeln!(out, " {} |", fmt_summary(r.summary()));
        }
        let _ = writeln!(out);
        for r in group {
            let _ = writeln!(out, "Per-class AUROC, {} (`{}`):\n", r.label, r.fingerprint);
            let _ = writeln!(out, "| Class | Mean ± sd |\n|---|---|");
            for (c, name) in r.class_names.iter().enumerate() {
                let _ = writeln!(out, "| {name} | {} |", fmt_summary(r.class_summary(c)));
            }
            let _ = writeln!(out);
        }
    }

    if !sweep.is_empty() {
        let mut variants: Vec<&str> = Vec::new();
        let mut dims: Vec<usize> = Vec::new();
        for r in &sweep {
            let (v, d) = sweep_key(&r.label).expect("partitioned");
            if !variants.contains(&v) {
                variants.push(v);
            }
            if !dims.contains(&d) {
                dims.push(d);
            }
        }
        dims.sort_unstable();
        let mut tasks: Vec<u8> = sweep.iter().map(|r| r.task_id).collect();
        tasks.dedup();
        let _ = writeln!(out, "## Ablation and hidden-width sweep\n");
        for v in variants {
            let _ = writeln!(out, "### {v}\n");
            let mut head = "| Task |".to_string();
            let mut rule = "|---|".to_string();
            for d in &dims {
                let _ = write!(head, " h{d} |");
                rule.push_str("---|");
            }
            let _ = writeln!(out, "{head}\n{rule}");
            for &t in &tasks {
                let _ = write!(out, "| {} |", task_title(t));
                for &d in &dims {
                    let hit = sweep
                        .iter()
                        .find(|r| r.task_id == t && sweep_key(&r.label) == Some((v, d)));
                    let _ = write!(
                        out,
                        " {} |",
                        hit.map_or_else(|| "-".to_string(), |r| fmt_summary(r.summary()))
                    );
                }
                let _ = writeln!(out);
            }
            let _ = writeln!(out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: &str, folds: usize) -> MetricsReport {
        MetricsReport {
            task_id: 4,
            label: label.into(),
            fingerprint: "00ff00ff00ff00ff".into(),
            class_names: vec!["malignant".into(), "infectious".into(), "immune".into()],
            folds: (0..folds)
                .map(|f| FoldMetrics {
                    fold: f,
                    macro_auroc: Some(0.7 + 0.01 * f as f64 + 1.0 / 3.0 * 1e-3),
                    per_class: vec![Some(0.1 * f as f64), None, Some(2.0 / 3.0)],
                })
                .collect(),
        }
    }

    #[test]
    fn one_fold_gives_classes_plus_macro_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, md_path) = emit_report(&[report("mfcn", 1)], &dir.path().join("r.csv")).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 1);
        assert!(text.contains(",NA\n"));
        let md = std::fs::read_to_string(md_path).unwrap();
        assert!(md.contains("0.7003 ± 0.0000"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report("mfcn", 5), report("linear", 5)];
        let (csv_path, _) = emit_report(&reports, &dir.path().join("r.csv")).unwrap();
        assert_eq!(parse_report_csv(&csv_path).unwrap(), reports);
    }

    #[test]
    fn sweep_layout_has_a_section_per_variant() {
        let mut reports = Vec::new();
        for v in ["no_residual", "depth3"] {
            for h in [16, 32, 64, 128, 256] {
                reports.push(report(&format!("{v}@h{h}"), 2));
            }
        }
        let md = render_markdown(&reports);
        assert!(md.contains("### no_residual"));
        assert!(md.contains("### depth3"));
        assert!(md.contains("| Task | h16 | h32 | h64 | h128 | h256 |"));
    }

    #[test]
    fn md_target_gets_sibling_csv() {
        let (c, m) = report_paths(Path::new("out/report.md"));
        assert_eq!(c, Path::new("out/report.csv"));
        assert_eq!(m, Path::new("out/report.md"));
        assert!(emit_report(&[], Path::new("x.csv")).is_err());
    }
}
