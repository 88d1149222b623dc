//! Plot-ready CSV summaries of a completed run directory.
//!
//! - `scatter.csv`: one row per filtered pair with its Q-value, influence and selection flag.
//! - `influence_hist_{t}.csv`: influence distribution of iteration `t` and its mean.
//! - `dpo_metric_corr.csv`: correlation between DPO loss and validation metric per iteration.
//! - `scaling.csv`: search effort against validation score, only after a budget sweep.
//!
//! A directory holding only a sweep gets `scaling.csv` alone.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::artifacts::{ArtifactError, RunManifest};
use crate::env::read_jsonl;
use crate::pipeline::{files, SweepRecord};
use crate::selection::ScoredPair;
use crate::stats;

pub const HIST_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Files written by [`write_reports`], relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<String>,
    pub iterations: Vec<usize>,
}

/// Minimal CSV writer; values are numbers or identifiers without commas.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

/// Iterations with an `iter_{t}` directory, ascending.
pub fn completed_iterations(run: &Path) -> Result<Vec<usize>, ReportError> {
    let entries = std::fs::read_dir(run).map_err(|source| ReportError::Io { path: run.display().to_string(), source })?;
    let mut out: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("iter_")?.parse().ok())
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let Some(lo) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = values.iter().copied().fold(lo, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c)).collect()
}

fn read_trace(path: &Path) -> Result<Vec<(f64, f64)>, ReportError> {
    let malformed = |message: String| ReportError::Malformed { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(malformed(format!("line {}: expected 3 columns", i + 1)));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| malformed(format!("line {}: {e}", i + 1)));
        rows.push((parse(cols[1])?, parse(cols[2])?));
    }
    Ok(rows)
}

/// Write every report the run directory supports and note them in the manifest.
pub fn write_reports(run: &Path) -> Result<ReportFiles, ReportError> {
    let iterations = completed_iterations(run)?;
    let sweep = run.join(files::SWEEP);
    let has_sweep = sweep.is_file();
    if iterations.is_empty() && !has_sweep {
        return Err(ReportError::MissingArtifacts(format!("{} has neither iter_* directories nor {}", run.display(), files::SWEEP)));
    }
    let iter_file = |t: usize, name: &str| -> Result<PathBuf, ReportError> {
        let p = run.join(files::iteration_dir(t)).join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(ReportError::MissingArtifacts(p.display().to_string()))
        }
    };
    let mut out = ReportFiles { files: Vec::new(), iterations: iterations.clone() };
    let mut scatter = Vec::new();
    let mut corr = Vec::new();
    for &t in &iterations {
        let path = iter_file(t, files::SCORED)?;
        let scored: Vec<ScoredPair> =
            read_jsonl(&path).map_err(|e| ReportError::Malformed { path: path.display().to_string(), message: e.to_string() })?;
        for s in &scored {
            scatter.push(vec![
                t.to_string(),
                s.pair.pair_id.clone(),
                s.pair.q_chosen.to_string(),
                s.influence.to_string(),
                s.hybrid.to_string(),
                u8::from(s.selected).to_string(),
            ]);
        }
        let infl: Vec<f64> = scored.iter().map(|s| s.influence).collect();
        let mean = num(stats::mean(&infl));
        let rows: Vec<Vec<String>> = histogram(&infl, HIST_BINS)
            .into_iter()
            .map(|(lo, hi, c)| vec![lo.to_string(), hi.to_string(), c.to_string(), mean.clone()])
            .collect();
        let name = format!("influence_hist_{t}.csv");
        write_csv(&run.join(&name), &["bin_lo", "bin_hi", "count", "iteration_mean"], &rows)?;
        out.files.push(name);

        let trace = read_trace(&iter_file(t, files::DPO_TRACE)?)?;
        let (loss, metric): (Vec<f64>, Vec<f64>) = trace.into_iter().filter(|(l, _)| l.is_finite()).unzip();
        corr.push(vec![
            t.to_string(),
            loss.len().to_string(),
            num(stats::pearson(&loss, &metric)),
            num(stats::spearman(&loss, &metric)),
        ]);
    }
    if !iterations.is_empty() {
        write_csv(&run.join("scatter.csv"), &["iteration", "pair_id", "q_chosen", "influence", "hybrid", "selected"], &scatter)?;
        out.files.push("scatter.csv".into());
        write_csv(&run.join("dpo_metric_corr.csv"), &["iteration", "points", "pearson", "spearman"], &corr)?;
        out.files.push("dpo_metric_corr.csv".into());
    }

    let scaling_note = "scaling.csv absent: no budget sweep was run in this directory";
    if has_sweep {
        let records: Vec<SweepRecord> =
            read_jsonl(&sweep).map_err(|e| ReportError::Malformed { path: sweep.display().to_string(), message: e.to_string() })?;
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    r.nodes.to_string(),
                    r.tokens.to_string(),
                    r.pairs_filtered.to_string(),
                    r.val_final.to_string(),
                    num(r.test_final),
                ]
            })
            .collect();
        write_csv(&run.join("scaling.csv"), &["k", "nodes", "tokens", "pairs_filtered", "val_score", "test_score"], &rows)?;
        out.files.push("scaling.csv".into());
    }

    if run.join(RunManifest::FILE).is_file() {
        let mut m = RunManifest::load(run)?;
        for f in &out.files {
            m.record(f.clone());
        }
        m.notes.retain(|n| !n.starts_with("scaling.csv"));
        if !has_sweep {
            m.notes.push(scaling_note.into());
        }
        m.save(run)?;
    }
    Ok(out)
}
