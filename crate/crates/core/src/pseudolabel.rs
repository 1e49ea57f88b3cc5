// SPDX-License-Identifier: Apache-2.0

//! Hard pseudo-labels from diffusion scores, entropy-based certainty and
//! class-imbalance weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::Scores;
use crate::error::{Error, Result};
use crate::io::fmt_sig;

/// Added to every shifted score before normalising to probabilities.
pub const SCORE_FLOOR: f64 = 1e-12;

/// Argmax over a row, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-node argmax class of `scores`.
pub fn extract_labels(scores: &Scores) -> Vec<usize> {
    (0..scores.nodes()).map(|i| argmax(&scores.node(i))).collect()
}

/// How a score row is turned into a probability vector before taking its
/// entropy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalization {
    /// Shift by the row minimum, add [`SCORE_FLOOR`], divide by the sum.
    #[default]
    MinShift,
    Softmax,
}

pub fn row_probabilities(row: &[f64], normalization: ScoreNormalization) -> Vec<f64> {
    match normalization {
        ScoreNormalization::MinShift => {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let shifted: Vec<f64> = row.iter().map(|v| v - min + SCORE_FLOOR).collect();
            let total: f64 = shifted.iter().sum();
            shifted.into_iter().map(|v| v / total).collect()
        }
        ScoreNormalization::Softmax => softmax(row),
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `1 - H(p) / ln L`, clamped to `[0, 1]`. Zero-probability entries
/// contribute nothing to the entropy.
pub fn certainty_from_probs(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 1.0;
    }
    let entropy: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    (1.0 - entropy / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Certainty of every node's score row.
pub fn certainty_weights(scores: &Scores, normalization: ScoreNormalization) -> Vec<f64> {
    (0..scores.nodes())
        .map(|i| certainty_from_probs(&row_probabilities(&scores.node(i), normalization)))
        .collect()
}

/// Pseudo-labels for the unlabelled nodes of one diffusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Node indices (into the diffusion graph) the entries refer to.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub certainty: Vec<f64>,
    /// Score rows, one per entry.
    pub scores: Vec<Vec<f64>>,
}

impl PseudoLabelSet {
    pub fn from_scores(scores: &Scores, indices: &[usize], normalization: ScoreNormalization) -> Self {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| scores.node(i)).collect();
        Self::from_rows(indices.to_vec(), rows, normalization)
    }

    pub fn from_rows(indices: Vec<usize>, rows: Vec<Vec<f64>>, normalization: ScoreNormalization) -> Self {
        let labels = rows.iter().map(|r| argmax(r)).collect();
        let certainty = rows
            .iter()
            .map(|r| certainty_from_probs(&row_probabilities(r, normalization)))
            .collect();
        Self {
            indices,
            labels,
            certainty,
            scores: rows,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// CSV export: `index,pred_class,certainty,score_1..score_L`.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        let classes = self.scores.first().map_or(0, Vec::len);
        let mut header = String::from("index,pred_class,certainty");
        for k in 1..=classes {
            header.push_str(&format!(",score_{k}"));
        }
        writeln!(out, "{header}")?;
        for e in 0..self.len() {
            let mut line = format!(
                "{},{},{}",
                self.indices[e],
                self.labels[e],
                fmt_sig(self.certainty[e], 9)
            );
            for s in &self.scores[e] {
                line.push(',');
                line.push_str(&fmt_sig(*s, 9));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightScheme {
    #[default]
    InverseFrequency,
    EffectiveNumber { beta: f64 },
}

/// Per-class loss multipliers, normalised to mean one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub omega: Vec<f64>,
    pub scheme: WeightScheme,
}

pub fn class_weights(counts: &[usize], scheme: WeightScheme) -> Result<ClassWeights> {
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(c));
    }
    if counts.is_empty() {
        return Err(Error::InvalidConfig("no classes".into()));
    }
    let raw: Vec<f64> = match scheme {
        WeightScheme::InverseFrequency => counts.iter().map(|&c| 1.0 / c as f64).collect(),
        WeightScheme::EffectiveNumber { beta } => {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("beta must lie in [0,1), got {beta}")));
            }
            counts
                .iter()
                .map(|&c| (1.0 - beta) / (1.0 - beta.powf(c as f64)))
                .collect()
        }
    };
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(ClassWeights {
        omega: raw.into_iter().map(|w| w / mean).collect(),
        scheme,
    })
}

/// One training sample with its loss multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub index: usize,
    pub target: usize,
    pub weight: f64,
}

/// Labelled samples weigh `omega[y]`; pseudo-labelled ones
/// `certainty * omega[y_hat]`.
pub fn sample_weights(
    labelled: &[(usize, usize)],
    pseudo: &PseudoLabelSet,
    omega: &ClassWeights,
) -> Result<Vec<WeightedSample>> {
    let classes = omega.omega.len();
    let check = |class: usize| {
        if class < classes {
            Ok(())
        } else {
            Err(Error::ClassOutOfRange { class, classes })
        }
    };
    let mut out = Vec::with_capacity(labelled.len() + pseudo.len());
    for &(index, target) in labelled {
        check(target)?;
        out.push(WeightedSample {
            index,
            target,
            weight: omega.omega[target],
        });
    }
    for e in 0..pseudo.len() {
        let target = pseudo.labels[e];
        check(target)?;
        out.push(WeightedSample {
            index: pseudo.indices[e],
            target,
            weight: pseudo.certainty[e] * omega.omega[target],
        });
    }
    Ok(out)
}
