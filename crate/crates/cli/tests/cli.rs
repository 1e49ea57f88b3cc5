// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::Command;

use graphdiff_core::metrics::MetricsReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphdiff"))
}

fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().unwrap();
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small three-class dataset with labelled, unlabelled and test roles.
fn dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("data");
    assert_eq!(
        run(&["gen", "--out", s(&out), "--counts", "40,30,10", "--dim", "8", "--spread", "0.2", "--seed", "5"]),
        0
    );
    (out.join("features.csv"), out.join("labels.csv"))
}

#[test]
fn gen_is_deterministic_and_exact_in_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(run(&["gen", "--out", s(out), "--counts", "500,300,50", "--dim", "4", "--seed", "9"]), 0);
    }
    for name in ["features.csv", "labels.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    let mut hist = [0usize; 3];
    for line in labels.lines().skip(1) {
        hist[line.split(',').nth(1).unwrap().parse::<usize>().unwrap()] += 1;
    }
    assert_eq!(hist, [500, 300, 50]);
}

#[test]
fn binary_and_csv_features_give_the_same_graph() {
    let dir = tempfile::tempdir().unwrap();
    let (csv_dir, bin_dir) = (dir.path().join("c"), dir.path().join("b"));
    for (out, format) in [(&csv_dir, "csv"), (&bin_dir, "binary")] {
        assert_eq!(run(&["gen", "--out", s(out), "--counts", "20,20", "--dim", "5", "--format", format]), 0);
    }
    let (g1, g2) = (dir.path().join("g1.csv"), dir.path().join("g2.csv"));
    assert_eq!(run(&["graph", "--features", s(&csv_dir.join("features.csv")), "--k", "4", "--out", s(&g1)]), 0);
    assert_eq!(run(&["graph", "--features", s(&bin_dir.join("features.gxf")), "--k", "4", "--out", s(&g2)]), 0);
    let (a, b) = (std::fs::read_to_string(&g1).unwrap(), std::fs::read_to_string(&g2).unwrap());
    assert!(a.starts_with("i,j,w\n"));
    // binary features are stored as f32
    let (ra, rb): (Vec<&str>, Vec<&str>) = (a.lines().skip(1).collect(), b.lines().skip(1).collect());
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(x[..2], y[..2]);
        let (wx, wy): (f64, f64) = (x[2].parse().unwrap(), y[2].parse().unwrap());
        assert!((wx - wy).abs() <= 1e-6, "{wx} vs {wy}");
    }
}

#[test]
fn diffuse_exports_one_row_per_unlabelled_node() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = dataset(dir.path());
    let (out, trace, metrics) = (dir.path().join("p.csv"), dir.path().join("t.csv"), dir.path().join("m.json"));
    let code = run(&[
        "diffuse", "--features", s(&x), "--labels", s(&y), "--k", "6", "--out", s(&out), "--trace", s(&trace),
        "--metrics", s(&metrics),
    ]);
    assert_eq!(code, 0);
    let labels = std::fs::read_to_string(&y).unwrap();
    let free = labels.lines().skip(1).filter(|l| !l.ends_with(",labelled")).count();
    let pseudo = std::fs::read_to_string(&out).unwrap();
    assert!(pseudo.starts_with("index,pred_class,certainty,score_1,score_2,score_3\n"));
    assert_eq!(pseudo.lines().count() - 1, free);
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("outer_iter,ratio_objective,inner_iters_used\n"));
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(report.per_class.len(), 3);
    assert!(report.ci[0] <= report.error && report.error <= report.ci[1]);

    let scored = dir.path().join("scored.json");
    assert_eq!(
        run(&["metrics", "--predictions", s(&out), "--labels", s(&y), "--test-only", "--out", s(&scored)]),
        0
    );
    let again: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&scored).unwrap()).unwrap();
    assert_eq!(again, report);
}

#[test]
fn baseline_writes_the_same_export_format() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = dataset(dir.path());
    let out = dir.path().join("b.csv");
    assert_eq!(run(&["baseline", "--features", s(&x), "--labels", s(&y), "--k", "6", "--alpha", "0.9", "--out", s(&out)]), 0);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("index,pred_class,certainty,score_1"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = dataset(dir.path());
    let out = dir.path().join("never.csv");
    // usage: unknown flag, missing flag, invalid k
    assert_eq!(run(&["graph", "--bogus"]), 1);
    assert_eq!(run(&["graph", "--out", s(&out)]), 1);
    assert_eq!(run(&["graph", "--features", s(&x), "--k", "1000", "--out", s(&out)]), 1);
    // data: malformed features
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "f_1,f_2\n1.0,abc\n").unwrap();
    assert_eq!(run(&["graph", "--features", s(&broken), "--k", "1", "--out", s(&out)]), 2);
    // data: only test rows listed, so no class has a labelled node
    let only_test = dir.path().join("test_only.csv");
    let text = std::fs::read_to_string(&y).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.ends_with(",test")).collect();
    std::fs::write(&only_test, format!("index,label,role\n{}\n", rows.join("\n"))).unwrap();
    assert_eq!(run(&["diffuse", "--features", s(&x), "--labels", s(&only_test), "--k", "5", "--out", s(&out)]), 2);
    assert_eq!(run(&["pipeline", "--features", s(&x), "--labels", s(&only_test), "--k", "5", "--out", s(&out)]), 2);
    // numerical: a learning rate that overflows the loss
    let code = run(&[
        "pipeline", "--features", s(&x), "--labels", s(&y), "--k", "5", "--splits", "1", "--rounds", "1",
        "--epochs-per-round", "1", "--warmup-epochs", "3", "--learning-rate", "1e200", "--out", s(&out),
    ]);
    assert_eq!(code, 3);
    assert!(!out.exists(), "failed runs must not leave output behind");
}

#[test]
fn config_file_sets_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _) = dataset(dir.path());
    let (from_file, from_flag) = (dir.path().join("file.csv"), dir.path().join("flag.csv"));
    let config = dir.path().join("c.json");
    std::fs::write(&config, format!(r#"{{"k": 3, "out": "{}"}}"#, s(&from_file))).unwrap();
    assert_eq!(run(&["graph", "--config", s(&config), "--features", s(&x)]), 0);
    assert_eq!(run(&["graph", "--config", s(&config), "--features", s(&x), "--k", "7", "--out", s(&from_flag)]), 0);
    let edges = |p: &Path| std::fs::read_to_string(p).unwrap().lines().count() - 1;
    assert!(edges(&from_flag) > edges(&from_file));
    std::fs::write(&config, r#"{"kay": 3}"#).unwrap();
    assert_eq!(run(&["graph", "--config", s(&config), "--features", s(&x), "--out", s(&from_file)]), 1);
}

#[test]
fn pipeline_plot_tables_have_one_row_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = dataset(dir.path());
    let (report, plots) = (dir.path().join("r.json"), dir.path().join("plots"));
    let code = run(&[
        "pipeline", "--features", s(&x), "--labels", s(&y), "--k", "5", "--sweep", "0.1,0.2,0.3", "--splits", "2",
        "--rounds", "2", "--epochs-per-round", "3", "--warmup-epochs", "3", "--hidden", "16", "--out", s(&report),
        "--plot-dir", s(&plots),
    ]);
    assert_eq!(code, 0);
    let table = std::fs::read_to_string(plots.join("error_vs_labels.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    let epochs = std::fs::read_to_string(plots.join("error_vs_epoch.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 1 + 3 * 3);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["fractions"].as_array().unwrap().len(), 3);
}
