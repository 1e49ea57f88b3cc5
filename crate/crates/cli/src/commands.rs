// SPDX-License-Identifier: Apache-2.0

//! Subcommand bodies. Everything is computed before the first output file
//! is written, and every file goes through an atomic rename.

use std::path::{Path, PathBuf};

use graphdiff_core::baseline::{diffuse_p2, P2Config};
use graphdiff_core::diffusion::{diffuse, ConstraintSet, DiffusionConfig, Scores};
use graphdiff_core::graph::{build_knn_graph, Graph, DEFAULT_K, DEFAULT_SIMILARITY_EXPONENT};
use graphdiff_core::io::{
    gen_synthetic, read_features, read_labels, write_atomic, write_features_binary, write_features_csv, write_labels,
    LabelFile, Role, SyntheticSpec,
};
use graphdiff_core::metrics::{confusion, MetricsReport};
use graphdiff_core::pipeline::{run_pipeline, LoopConfig, PipelineData};
use graphdiff_core::pseudolabel::{extract_labels, PseudoLabelSet, ScoreNormalization, WeightScheme};
use graphdiff_core::{Error, FeatureMatrix, Result};
use serde::Serialize;

use crate::args::*;

const DEFAULT_CONFIDENCE: f64 = 0.95;

/// A file to be written once every computation has succeeded.
type Output = (PathBuf, Vec<u8>);

fn commit(outputs: Vec<Output>) -> Result<()> {
    for (path, bytes) in outputs {
        write_atomic(&path, |w| Ok(w.write_all(&bytes)?))?;
    }
    Ok(())
}

fn render<F, E>(write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>,
    Error: From<E>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let spec = SyntheticSpec {
        counts: a.counts.clone().unwrap_or_else(|| vec![500, 300, 50]),
        dim: a.dim.unwrap_or(200),
        spread: a.spread.unwrap_or(0.25),
        seed: a.seed.unwrap_or(0),
        label_fraction: a.label_fraction.unwrap_or(0.1),
        test_fraction: a.test_fraction.unwrap_or(0.3),
    };
    let (x, labels) = gen_synthetic(&spec)?;
    let (name, features) = match a.format.unwrap_or(FeatureFormat::Csv) {
        FeatureFormat::Csv => ("features.csv", render(|b| write_features_csv(&x, b))?),
        FeatureFormat::Binary => ("features.gxf", render(|b| write_features_binary(&x, b))?),
    };
    let labels = render(|b| write_labels(&labels, b))?;
    std::fs::create_dir_all(out)?;
    commit(vec![(out.join(name), features), (out.join("labels.csv"), labels)])
}

fn knn(x: &FeatureMatrix, k: Option<usize>, exponent: Option<f64>) -> Result<Graph> {
    build_knn_graph(
        x,
        k.unwrap_or(DEFAULT_K),
        exponent.unwrap_or(DEFAULT_SIMILARITY_EXPONENT),
    )
}

pub fn graph(a: &GraphArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let x = read_features(required(&a.features, "features")?)?;
    let g = knn(&x, a.k, a.similarity_exponent)?;
    commit(vec![(out.clone(), render(|b| g.write_csv(b))?)])
}

/// Features, labels and the constraints they imply for a whole-dataset
/// diffusion run.
struct Problem {
    labels: LabelFile,
    graph: Graph,
    cons: ConstraintSet,
    /// Every node that is not labelled, in index order.
    free: Vec<usize>,
}

fn load_problem(
    features: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    k: Option<usize>,
    exponent: Option<f64>,
    epsilon: Option<f64>,
) -> Result<Problem> {
    let x = read_features(required(features, "features")?)?;
    let labels = read_labels(required(labels, "labels")?, x.rows())?;
    let classes = labels.class_count();
    let labelled: Vec<(usize, usize)> = (0..x.rows())
        .filter(|&i| labels.roles[i] == Role::Labelled)
        .filter_map(|i| labels.labels[i].map(|c| (i, c)))
        .collect();
    if let Some(c) = (0..classes).find(|c| !labelled.iter().any(|l| l.1 == *c)) {
        return Err(Error::MissingClass(c));
    }
    let graph = knn(&x, k, exponent)?;
    let cons = ConstraintSet::from_labels(x.rows(), classes, &labelled, epsilon)?;
    let free = (0..x.rows()).filter(|&i| labels.roles[i] != Role::Labelled).collect();
    Ok(Problem {
        labels,
        graph,
        cons,
        free,
    })
}

/// Scores argmax predictions on test nodes, or on unlabelled nodes with
/// known truth when no node is marked `test`.
fn score_predictions(p: &Problem, scores: &Scores, confidence: f64) -> Result<MetricsReport> {
    let has_test = p.labels.roles.contains(&Role::Test);
    let want = if has_test { Role::Test } else { Role::Unlabelled };
    let predicted = extract_labels(scores);
    let (mut preds, mut truth) = (Vec::new(), Vec::new());
    for &i in &p.free {
        if p.labels.roles[i] == want {
            if let Some(t) = p.labels.labels[i] {
                preds.push(predicted[i]);
                truth.push(t);
            }
        }
    }
    if truth.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    MetricsReport::from_confusion(&confusion(&preds, &truth, p.cons.classes())?, confidence)
}

fn pseudo_outputs(
    p: &Problem,
    scores: &Scores,
    normalization: Option<NormalizationArg>,
    out: &Path,
    metrics: &Option<PathBuf>,
    confidence: Option<f64>,
) -> Result<Vec<Output>> {
    let norm = normalization.map_or(ScoreNormalization::MinShift, Into::into);
    let set = PseudoLabelSet::from_scores(scores, &p.free, norm);
    let mut outputs = vec![(out.to_path_buf(), render(|b| set.write_csv(b))?)];
    if let Some(path) = metrics {
        let report = score_predictions(p, scores, confidence.unwrap_or(DEFAULT_CONFIDENCE))?;
        outputs.push((path.clone(), json(&report)?));
    }
    Ok(outputs)
}

pub fn diffuse_cmd(a: &DiffuseArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let p = load_problem(&a.features, &a.labels, a.k, a.similarity_exponent, a.epsilon)?;
    let d = DiffusionConfig::default();
    let cfg = DiffusionConfig {
        dt: a.dt.unwrap_or(d.dt),
        outer_max: a.outer_max.unwrap_or(d.outer_max),
        inner_max: a.inner_max.unwrap_or(d.inner_max),
        inner_tol: a.inner_tol.unwrap_or(d.inner_tol),
        outer_tol: a.outer_tol.unwrap_or(d.outer_tol),
        epsilon: a.epsilon,
        norm_iterations: d.norm_iterations,
    };
    let result = diffuse(&p.graph, &p.cons, &cfg)?;
    let mut outputs = pseudo_outputs(&p, &result.scores, a.normalization, out, &a.metrics, a.confidence)?;
    if let Some(path) = &a.trace {
        outputs.push((path.clone(), render(|b| result.write_trace(b))?));
    }
    commit(outputs)
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let p = load_problem(&a.features, &a.labels, a.k, a.similarity_exponent, None)?;
    let d = P2Config::default();
    let cfg = P2Config {
        alpha: a.alpha.unwrap_or(d.alpha),
        solver: a.solver.map_or(d.solver, Into::into),
        ..d
    };
    let result = diffuse_p2(&p.graph, &p.cons, &cfg)?;
    commit(pseudo_outputs(&p, &result.scores, a.normalization, out, &a.metrics, a.confidence)?)
}

pub fn loop_config(a: &PipelineArgs) -> LoopConfig {
    let mut cfg = LoopConfig::default();
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(label_fraction, sweep, splits, rounds, epochs_per_round, warmup_epochs, seed, k, similarity_exponent, confidence);
    if let Some(s) = a.pseudo_source {
        cfg.pseudo_source = s.into();
    }
    if let Some(beta) = a.beta {
        cfg.weights = WeightScheme::EffectiveNumber { beta };
    }
    if let Some(n) = a.normalization {
        cfg.normalization = n.into();
    }
    cfg.diffusion.epsilon = a.epsilon.or(cfg.diffusion.epsilon);
    cfg.diffusion.dt = a.dt.unwrap_or(cfg.diffusion.dt);
    cfg.diffusion.outer_max = a.outer_max.unwrap_or(cfg.diffusion.outer_max);
    cfg.diffusion.inner_max = a.inner_max.unwrap_or(cfg.diffusion.inner_max);
    cfg.train.learning_rate = a.learning_rate.unwrap_or(cfg.train.learning_rate);
    cfg.train.weight_decay = a.weight_decay.unwrap_or(cfg.train.weight_decay);
    cfg.train.batch_size = a.batch_size.unwrap_or(cfg.train.batch_size);
    cfg.train.hidden = a.hidden.unwrap_or(cfg.train.hidden);
    cfg
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let x = read_features(required(&a.features, "features")?)?;
    let labels = read_labels(required(&a.labels, "labels")?, x.rows())?;
    let test_mask = labels.test_mask();
    let data = PipelineData {
        features: &x,
        truth: &labels.labels,
        test_mask: &test_mask,
        classes: labels.class_count(),
    };
    let cfg = loop_config(a);
    let report = run_pipeline(&data, &cfg, a.jobs.unwrap_or(1))?;
    let mut outputs = vec![(out.clone(), json(&report)?)];
    if let Some(dir) = &a.plot_dir {
        std::fs::create_dir_all(dir)?;
        outputs.push((dir.join("error_vs_labels.csv"), render(|b| report.write_error_vs_labels(b))?));
        outputs.push((dir.join("error_vs_epoch.csv"), render(|b| report.write_error_vs_epoch(b))?));
    }
    commit(outputs)
}

/// `(index, pred_class)` pairs from a CSV whose header names both columns.
fn read_predictions(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .1
        .split(',')
        .map(str::trim)
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(1, format!("missing `{name}` column")))
    };
    let (ci, cp) = (column("index")?, column("pred_class")?);
    let mut out = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = |c: usize| -> Result<usize> {
            let raw = fields.get(c).ok_or_else(|| bad(no + 1, "too few fields".into()))?;
            raw.parse().map_err(|_| bad(no + 1, format!("`{raw}` is not a non-negative integer")))
        };
        out.push((field(ci)?, field(cp)?));
    }
    Ok(out)
}

/// Largest index named in the first column of an `index,...` CSV, so the
/// label file can be read without the features.
fn max_listed_index(path: &Path) -> Result<Option<usize>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next()?.trim().parse::<usize>().ok())
        .max())
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let labels_path = required(&a.labels, "labels")?;
    let preds = read_predictions(required(&a.predictions, "predictions")?)?;
    let n = preds
        .iter()
        .map(|p| p.0)
        .chain(max_listed_index(labels_path)?)
        .max()
        .map_or(0, |m| m + 1);
    let labels = read_labels(labels_path, n)?;
    let classes = a
        .classes
        .unwrap_or_else(|| labels.class_count().max(preds.iter().map(|p| p.1 + 1).max().unwrap_or(0)));
    let test_only = a.test_only.unwrap_or(false);
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    for &(i, c) in &preds {
        if test_only && labels.roles[i] != Role::Test {
            continue;
        }
        if let Some(t) = labels.labels[i] {
            predicted.push(c);
            truth.push(t);
        }
    }
    if truth.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let report = MetricsReport::from_confusion(
        &confusion(&predicted, &truth, classes)?,
        a.confidence.unwrap_or(DEFAULT_CONFIDENCE),
    )?;
    commit(vec![(out.clone(), json(&report)?)])
}
