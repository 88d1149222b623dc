//! Multi-iteration runs: resume, sweeps and per-iteration reports.

use std::collections::BTreeMap;
use std::path::Path;

use dits::config::PipelineConfig;
use dits::env::{generate_splits, Setting};
use dits::pipeline::{run_pipeline, run_sweep, Dataset, PipelineError, RunOptions};
use dits::report::write_reports;

fn data() -> Dataset {
    Dataset::new(generate_splits(Setting::InfoExchange, 16, 8, 4, 42)).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let e = e.unwrap();
            let name = format!("{prefix}{}", e.file_name().to_string_lossy());
            if e.path().is_dir() {
                walk(&e.path(), &format!("{name}/"), out);
            } else {
                out.insert(name, std::fs::read(e.path()).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, "", &mut out);
    out.remove("manifest.json");
    out
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.path().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

#[test]
fn resume_from_iteration_two_matches_uninterrupted_run() {
    let cfg = PipelineConfig { seed: 3, iterations: 3, ..Default::default() };
    let d = data();
    let full = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(&cfg, &d, full.path(), &RunOptions::default()).unwrap();
    assert_eq!(outcome.reports.len(), 3);
    assert!(outcome.reports.iter().all(|r| r.iteration >= 1));

    let resumed = tempfile::tempdir().unwrap();
    copy_dir(full.path(), resumed.path());
    for t in [2, 3] {
        std::fs::remove_dir_all(resumed.path().join(format!("iter_{t}"))).unwrap();
    }
    let again = run_pipeline(&cfg, &d, resumed.path(), &RunOptions { resume: Some(2) }).unwrap();
    assert_eq!(again.policy, outcome.policy);
    assert_eq!(snapshot(resumed.path()), snapshot(full.path()));

    let other = PipelineConfig { seed: 4, ..cfg };
    assert!(matches!(
        run_pipeline(&other, &d, resumed.path(), &RunOptions { resume: Some(2) }),
        Err(PipelineError::Resume(_))
    ));
}

#[test]
fn three_iterations_report_influence_per_iteration() {
    let cfg = PipelineConfig { seed: 6, iterations: 3, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, &data(), dir.path(), &RunOptions::default()).unwrap();
    let written = write_reports(dir.path()).unwrap();
    assert_eq!(written.iterations, vec![1, 2, 3]);
    for t in 1..=3 {
        let hist = std::fs::read_to_string(dir.path().join(format!("influence_hist_{t}.csv"))).unwrap();
        assert!(hist.starts_with("bin_lo,bin_hi,count,iteration_mean\n"));
        let report = std::fs::read_to_string(dir.path().join(format!("iter_{t}/report.csv"))).unwrap();
        assert!(report.lines().any(|l| l.starts_with("mean_influence,")));
    }
    let corr = std::fs::read_to_string(dir.path().join("dpo_metric_corr.csv")).unwrap();
    assert_eq!(corr.lines().count(), 4);
}

#[test]
fn sweep_enables_scaling_report() {
    let cfg = PipelineConfig { seed: 1, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let records = run_sweep(&cfg, &data(), dir.path(), &[2, 4]).unwrap();
    assert_eq!(records.iter().map(|r| r.k).collect::<Vec<_>>(), vec![2, 4]);
    assert!(records[1].nodes >= records[0].nodes);
    let written = write_reports(dir.path()).unwrap();
    assert_eq!(written.files, vec!["scaling.csv".to_string()]);
    let scaling = std::fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    assert!(scaling.starts_with("k,nodes,tokens,pairs_filtered,val_score,test_score\n"));
    assert_eq!(scaling.lines().count(), 3);
}

#[test]
fn jsonl_floats_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    let mut rng = dits::seed::rng(1);
    let values: Vec<f64> = (0..2000).map(|_| rand::Rng::gen::<f64>(&mut rng) * 3.0 - 1.0).collect();
    dits::env::write_jsonl(&path, &values).unwrap();
    let back: Vec<f64> = dits::env::read_jsonl(&path).unwrap();
    assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
}
