// SPDX-License-Identifier: Apache-2.0

//! The alternating loop: supervised warm start, then per round embed the
//! training pool, rebuild the k-NN graph, diffuse labels, weight the
//! pseudo-labels and continue training. Test nodes never enter the graph.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{diffuse, ConstraintSet, DiffusionConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{build_knn_graph, DEFAULT_K, DEFAULT_SIMILARITY_EXPONENT};
use crate::io::fmt_sig;
use crate::metrics::{confusion, mean_half_width, MetricsReport};
use crate::pseudolabel::{class_weights, sample_weights, PseudoLabelSet, ScoreNormalization, WeightScheme};
use crate::trainer::{embed, predict, train_supervised, train_weighted, ModelParams, TrainConfig};

/// Ratio-objective values kept per round in the report.
pub const RATIO_TAIL: usize = 5;

/// Where pseudo-labels come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    /// Argmax of the graph diffusion.
    #[default]
    Diffusion,
    /// Argmax of the network's own predictions.
    Network,
    /// Labelled samples only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub rounds: usize,
    pub epochs_per_round: usize,
    /// Supervised epochs before the first round.
    pub warmup_epochs: usize,
    pub label_fraction: f64,
    /// When non-empty, every fraction listed is run instead of
    /// `label_fraction`.
    pub sweep: Vec<f64>,
    pub splits: usize,
    pub seed: u64,
    pub k: usize,
    pub similarity_exponent: f64,
    pub pseudo_source: PseudoSource,
    pub weights: WeightScheme,
    pub normalization: ScoreNormalization,
    pub confidence: f64,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds: 7,
            epochs_per_round: 30,
            warmup_epochs: 30,
            label_fraction: 0.1,
            sweep: Vec::new(),
            splits: 5,
            seed: 0,
            k: DEFAULT_K,
            similarity_exponent: DEFAULT_SIMILARITY_EXPONENT,
            pseudo_source: PseudoSource::Diffusion,
            weights: WeightScheme::InverseFrequency,
            normalization: ScoreNormalization::MinShift,
            confidence: 0.95,
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.splits == 0 {
            return bad("splits must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.fractions().iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("label fractions must lie in (0,1]");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0,1)");
        }
        self.diffusion.validate()?;
        self.train.validate()
    }

    pub fn fractions(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            vec![self.label_fraction]
        } else {
            self.sweep.clone()
        }
    }

    /// Epochs of training per split, warm start included.
    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.rounds * self.epochs_per_round
    }
}

/// Features with (partial) ground truth and the held-out test mask.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a> {
    pub features: &'a FeatureMatrix,
    pub truth: &'a [Option<usize>],
    pub test_mask: &'a [bool],
    pub classes: usize,
}

impl PipelineData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.features.rows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        for len in [self.truth.len(), self.test_mask.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.classes == 0 {
            return Err(Error::InvalidConfig("at least one class is required".into()));
        }
        for &class in self.truth.iter().flatten() {
            if class >= self.classes {
                return Err(Error::ClassOutOfRange {
                    class,
                    classes: self.classes,
                });
            }
        }
        Ok(())
    }
}

/// Test metrics of one model plus agreement of the pseudo-labels it was
/// trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub test: MetricsReport,
    /// Fraction of pseudo-labels on unlabelled, non-test nodes with known
    /// truth that match it.
    pub pseudo_accuracy: Option<f64>,
    pub pseudo_evaluated: usize,
}

/// Scores `params` on the test nodes and `pseudo` on unlabelled, non-test
/// nodes whose truth is known.
pub fn evaluate_round(
    params: &ModelParams,
    features: &FeatureMatrix,
    pseudo: Option<&PseudoLabelSet>,
    truth: &[Option<usize>],
    test_mask: &[bool],
    labelled_mask: &[bool],
    confidence: f64,
) -> Result<RoundMetrics> {
    let n = features.rows();
    for len in [truth.len(), test_mask.len(), labelled_mask.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let test: Vec<usize> = (0..n).filter(|&i| test_mask[i]).collect();
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let expected = test
        .iter()
        .map(|&i| truth[i].ok_or(Error::MissingTruth(i)))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict(params, &features.select(&test)?)?;
    let cm = confusion(&preds, &expected, params.classes())?;

    let (mut hits, mut seen) = (0usize, 0usize);
    if let Some(p) = pseudo {
        for (&i, &label) in p.indices.iter().zip(&p.labels) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if test_mask[i] || labelled_mask[i] {
                continue;
            }
            if let Some(t) = truth[i] {
                seen += 1;
                hits += usize::from(t == label);
            }
        }
    }
    Ok(RoundMetrics {
        test: MetricsReport::from_confusion(&cm, confidence)?,
        pseudo_accuracy: (seen > 0).then(|| hits as f64 / seen as f64),
        pseudo_evaluated: seen,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Training epochs completed by the end of the round, warm start included.
    pub epoch: usize,
    /// Last ratio-objective values of the round's diffusion.
    pub ratio_tail: Vec<f64>,
    pub outer_iterations: usize,
    pub pseudo_labels: usize,
    #[serde(flatten)]
    pub metrics: RoundMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: usize,
    pub seed: u64,
    pub labelled: usize,
    /// Test metrics right after the warm start.
    pub warmup: MetricsReport,
    pub rounds: Vec<RoundReport>,
}

impl SplitReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.warmup.accuracy, |r| r.metrics.test.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionReport {
    pub label_fraction: f64,
    pub splits: Vec<SplitReport>,
    pub mean_accuracy: f64,
    pub mean_error: f64,
    /// Student-t half-width of the mean error across splits.
    pub half_width: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: LoopConfig,
    pub classes: usize,
    pub fractions: Vec<FractionReport>,
}

impl RunReport {
    /// `label_fraction,mean_error,half_width,ci_low,ci_high`, one row per
    /// label fraction.
    pub fn write_error_vs_labels<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "label_fraction,mean_error,half_width,ci_low,ci_high")?;
        for f in &self.fractions {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_sig(f.label_fraction, 9),
                fmt_sig(f.mean_error, 9),
                fmt_sig(f.half_width, 9),
                fmt_sig(f.ci[0], 9),
                fmt_sig(f.ci[1], 9)
            )?;
        }
        Ok(())
    }

    /// `label_fraction,round,epoch,mean_error,half_width`; round 0 is the
    /// warm start.
    pub fn write_error_vs_epoch<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "label_fraction,round,epoch,mean_error,half_width")?;
        let confidence = self.config.confidence;
        for f in &self.fractions {
            let Some(first) = f.splits.first() else { continue };
            let mut rows = vec![(0, self.config.warmup_epochs)];
            rows.extend(first.rounds.iter().map(|r| (r.round, r.epoch)));
            for (slot, (round, epoch)) in rows.into_iter().enumerate() {
                let errors: Vec<f64> = f
                    .splits
                    .iter()
                    .map(|s| match slot {
                        0 => s.warmup.error,
                        r => s.rounds[r - 1].metrics.test.error,
                    })
                    .collect();
                let (mean, half) = mean_half_width(&errors, confidence).map_err(std::io::Error::other)?;
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_sig(f.label_fraction, 9),
                    round,
                    epoch,
                    fmt_sig(mean, 9),
                    fmt_sig(half, 9)
                )?;
            }
        }
        Ok(())
    }
}

/// Seed of split `s`; identical across label fractions so sweeps are paired.
pub fn split_seed(seed: u64, split: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64 + 1);
    rand::Rng::random(&mut rng)
}

/// Stratified draw from the non-test nodes with known truth: per class,
/// `round(fraction * count)` samples, at least one. Fails with
/// `MissingClass` when a class has no candidate at all.
pub fn draw_labelled(data: &PipelineData<'_>, fraction: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labelled = Vec::new();
    for c in 0..data.classes {
        let mut members: Vec<usize> = (0..data.truth.len())
            .filter(|&i| !data.test_mask[i] && data.truth[i] == Some(c))
            .collect();
        if members.is_empty() {
            return Err(Error::MissingClass(c));
        }
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        labelled.extend(members[..take].iter().map(|&i| (i, c)));
    }
    labelled.sort_unstable();
    Ok(labelled)
}

struct RoundPseudo {
    set: PseudoLabelSet,
    ratio_tail: Vec<f64>,
    outer_iterations: usize,
}

fn pseudo_labels(
    data: &PipelineData<'_>,
    cfg: &LoopConfig,
    params: &ModelParams,
    pool: &[usize],
    labelled_mask: &[bool],
) -> Result<RoundPseudo> {
    let local_unlabelled: Vec<usize> = (0..pool.len()).filter(|&l| !labelled_mask[pool[l]]).collect();
    let global = |local: &[usize]| local.iter().map(|&l| pool[l]).collect::<Vec<_>>();
    match cfg.pseudo_source {
        PseudoSource::None => Ok(RoundPseudo {
            set: PseudoLabelSet::from_rows(Vec::new(), Vec::new(), cfg.normalization),
            ratio_tail: Vec::new(),
            outer_iterations: 0,
        }),
        PseudoSource::Network => {
            let idx = global(&local_unlabelled);
            let rows = idx.iter().map(|&i| params.logits(data.features.row(i))).collect();
            Ok(RoundPseudo {
                set: PseudoLabelSet::from_rows(idx, rows, ScoreNormalization::Softmax),
                ratio_tail: Vec::new(),
                outer_iterations: 0,
            })
        }
        PseudoSource::Diffusion => {
            let emb = embed(params, &data.features.select(pool)?)?;
            let k = cfg.k.min(pool.len() - 1);
            let graph = build_knn_graph(&emb, k, cfg.similarity_exponent)?;
            let constraints: Vec<(usize, usize)> = pool
                .iter()
                .enumerate()
                .filter(|(_, &i)| labelled_mask[i])
                .map(|(l, &i)| (l, data.truth[i].expect("labelled nodes carry truth")))
                .collect();
            let cons = ConstraintSet::from_labels(pool.len(), data.classes, &constraints, cfg.diffusion.epsilon)?;
            let run = diffuse(&graph, &cons, &cfg.diffusion)?;
            let mut set = PseudoLabelSet::from_scores(&run.scores, &local_unlabelled, cfg.normalization);
            set.indices = global(&local_unlabelled);
            let history = run.ratio_history();
            Ok(RoundPseudo {
                set,
                ratio_tail: history[history.len().saturating_sub(RATIO_TAIL)..].to_vec(),
                outer_iterations: run.outer_iterations(),
            })
        }
    }
}

fn run_split(data: &PipelineData<'_>, cfg: &LoopConfig, fraction: f64, split: usize) -> Result<SplitReport> {
    let n = data.features.rows();
    let seed = split_seed(cfg.seed, split);
    let labelled = draw_labelled(data, fraction, seed)?;
    let mut labelled_mask = vec![false; n];
    for &(i, _) in &labelled {
        labelled_mask[i] = true;
    }
    let pool: Vec<usize> = (0..n).filter(|&i| !data.test_mask[i]).collect();
    if pool.len() < 2 {
        return Err(Error::InvalidConfig("the training pool needs at least two nodes".into()));
    }

    let total = cfg.total_epochs();
    let warm_cfg = TrainConfig {
        epochs: cfg.warmup_epochs,
        seed,
        epoch_offset: 0,
        total_epochs: Some(total),
        ..cfg.train.clone()
    };
    let rows: Vec<usize> = labelled.iter().map(|&(i, _)| i).collect();
    let targets: Vec<usize> = labelled.iter().map(|&(_, c)| c).collect();
    let mut params = train_supervised(&data.features.select(&rows)?, &targets, data.classes, &warm_cfg)?;
    let warmup = evaluate_round(&params, data.features, None, data.truth, data.test_mask, &labelled_mask, cfg.confidence)?.test;

    // the stratified draw keeps labelled class counts proportional to the
    // pool's class frequencies
    let mut counts = vec![0usize; data.classes];
    for &c in &targets {
        counts[c] += 1;
    }
    let omega = class_weights(&counts, cfg.weights)?;

    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let pseudo = pseudo_labels(data, cfg, &params, &pool, &labelled_mask)?;
        let samples = sample_weights(&labelled, &pseudo.set, &omega)?;
        let round_cfg = TrainConfig {
            epochs: cfg.epochs_per_round,
            seed,
            epoch_offset: cfg.warmup_epochs + r * cfg.epochs_per_round,
            total_epochs: Some(total),
            ..cfg.train.clone()
        };
        params = train_weighted(params, data.features, &samples, &round_cfg)?;
        let metrics = evaluate_round(
            &params,
            data.features,
            Some(&pseudo.set),
            data.truth,
            data.test_mask,
            &labelled_mask,
            cfg.confidence,
        )?;
        rounds.push(RoundReport {
            round: r + 1,
            epoch: round_cfg.epoch_offset + cfg.epochs_per_round,
            ratio_tail: pseudo.ratio_tail,
            outer_iterations: pseudo.outer_iterations,
            pseudo_labels: pseudo.set.len(),
            metrics,
        });
    }
    Ok(SplitReport {
        split,
        seed,
        labelled: labelled.len(),
        warmup,
        rounds,
    })
}

/// Runs every label fraction over `cfg.splits` splits. Splits run on up to
/// `jobs` threads; the report does not depend on `jobs`.
pub fn run_pipeline(data: &PipelineData<'_>, cfg: &LoopConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    data.check()?;
    let pool = data.test_mask.iter().filter(|t| !**t).count();
    let fractions = cfg.fractions();
    for &f in &fractions {
        if f * (pool as f64) < data.classes as f64 {
            return Err(Error::InvalidConfig(format!(
                "label fraction {f} of {pool} training nodes is fewer than {} classes",
                data.classes
            )));
        }
    }
    let tasks: Vec<(f64, usize)> = fractions
        .iter()
        .flat_map(|&f| (0..cfg.splits).map(move |s| (f, s)))
        .collect();
    let run = |&(f, s): &(f64, usize)| run_split(data, cfg, f, s);
    let results: Vec<SplitReport> = if jobs <= 1 {
        tasks.iter().map(run).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(|| tasks.par_iter().map(run).collect::<Result<_>>())?
    };

    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(fractions.len());
    for &label_fraction in &fractions {
        let splits: Vec<SplitReport> = results.by_ref().take(cfg.splits).collect();
        let accuracies: Vec<f64> = splits.iter().map(SplitReport::final_accuracy).collect();
        let errors: Vec<f64> = accuracies.iter().map(|a| 1.0 - a).collect();
        let (mean_error, half_width) = mean_half_width(&errors, cfg.confidence)?;
        out.push(FractionReport {
            label_fraction,
            mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
            mean_error,
            half_width,
            ci: [(mean_error - half_width).max(0.0), (mean_error + half_width).min(1.0)],
            splits,
        });
    }
    Ok(RunReport {
        config: cfg.clone(),
        classes: data.classes,
        fractions: out,
    })
}
