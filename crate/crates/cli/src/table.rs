//! Metric tables over finished runs: one row per run, then mean and best
//! (smallest `error_rel`) rows per experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gkdv::training::MetricsReport;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Md,
}

pub const COLUMNS: [&str; 8] = ["A_tilde", "A", "L", "error_Y", "error_LinfHs", "error_rel", "loss", "seconds"];

fn values(r: &MetricsReport) -> [f64; 8] {
    [r.a_tilde, r.a, r.l, r.error_y, r.error_linf_hs, r.error_rel, r.loss, r.seconds]
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let direct = dir.join("metrics.json");
    if direct.is_file() {
        out.push(direct);
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        if e.file_type()?.is_dir() {
            collect(&e.path(), out)?;
        }
    }
    Ok(())
}

pub fn load_reports(dirs: &[PathBuf]) -> Result<Vec<MetricsReport>, Failure> {
    if dirs.is_empty() {
        return Err(Failure::config("table needs at least one run directory"));
    }
    let mut reports = Vec::new();
    for dir in dirs {
        let mut files = Vec::new();
        if dir.is_file() {
            files.push(dir.clone());
        } else {
            collect(dir, &mut files).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
        }
        if files.is_empty() {
            return Err(Failure::io(format!("{}: no metrics.json found", dir.display())));
        }
        for f in files {
            reports.push(gkdv::io::load_json::<MetricsReport>(&f)?);
        }
    }
    Ok(reports)
}

/// Row label and values, grouped by experiment in first-seen order.
pub fn rows(reports: &[MetricsReport]) -> Vec<(String, [f64; 8])> {
    let mut groups: BTreeMap<usize, (String, Vec<&MetricsReport>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in reports {
        let idx = order.iter().position(|n| *n == r.name).unwrap_or_else(|| {
            order.push(r.name.clone());
            order.len() - 1
        });
        groups.entry(idx).or_insert_with(|| (r.name.clone(), Vec::new())).1.push(r);
    }
    let mut out = Vec::new();
    for (_, (name, runs)) in groups {
        for r in &runs {
            out.push((format!("{name} seed {}", r.seed), values(r)));
        }
        let n = runs.len() as f64;
        let mut mean = [0.0; 8];
        for r in &runs {
            for (m, v) in mean.iter_mut().zip(values(r)) {
                *m += v / n;
            }
        }
        out.push((format!("{name} mean"), mean));
        let best = runs
            .iter()
            .min_by(|a, b| a.error_rel.total_cmp(&b.error_rel))
            .expect("groups are non-empty");
        out.push((format!("{name} best"), values(best)));
    }
    out
}

pub fn render(rows: &[(String, [f64; 8])], format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Csv => {
            s.push_str("run,");
            s.push_str(&COLUMNS.join(","));
            s.push('\n');
            for (label, v) in rows {
                let cells: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
                s.push_str(&format!("{label},{}\n", cells.join(",")));
            }
        }
        Format::Md => {
            s.push_str(&format!("| run | {} |\n", COLUMNS.join(" | ")));
            s.push_str(&format!("|---|{}\n", "---:|".repeat(COLUMNS.len())));
            for (label, v) in rows {
                let cells: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
                s.push_str(&format!("| {label} | {} |\n", cells.join(" | ")));
            }
        }
    }
    s
}

pub fn run(dirs: &[PathBuf], format: Format) -> Result<(), Failure> {
    let reports = load_reports(dirs)?;
    print!("{}", render(&rows(&reports), format));
    Ok(())
}
