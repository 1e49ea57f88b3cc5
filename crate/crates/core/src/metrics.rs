// SPDX-License-Identifier: Apache-2.0

//! Confusion-matrix metrics: per-class sensitivity, PPV and F1, accuracy,
//! and error rate with a Wilson score interval.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// `counts[a * classes + b]` = samples of true class `a` predicted as `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != classes) {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: bad.len(),
            });
        }
        Ok(Self {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|b| self.get(k, b)).sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|a| self.get(a, k)).sum()
    }
}

pub fn confusion(preds: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: preds.len(),
        });
    }
    let mut counts = vec![0u64; classes * classes];
    for (&p, &t) in preds.iter().zip(truth) {
        for class in [p, t] {
            if class >= classes {
                return Err(Error::ClassOutOfRange { class, classes });
            }
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub sensitivity: f64,
    pub ppv: f64,
    pub f1: f64,
    /// Set when the class has no true samples (sensitivity is 0/0).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sensitivity_undefined: bool,
    /// Set when nothing was predicted as this class (PPV is 0/0).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ppv_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|k| {
            let tp = cm.get(k, k);
            let (sensitivity, sensitivity_undefined) = ratio(tp, cm.row_sum(k));
            let (ppv, ppv_undefined) = ratio(tp, cm.col_sum(k));
            let f1 = if sensitivity + ppv > 0.0 {
                2.0 * sensitivity * ppv / (sensitivity + ppv)
            } else {
                0.0
            };
            ClassMetrics {
                class: k,
                sensitivity,
                ppv,
                f1,
                sensitivity_undefined,
                ppv_undefined,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub accuracy: f64,
    pub error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided standard normal quantile for `confidence`.
fn z_value(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence must lie in (0,1), got {confidence}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + confidence / 2.0))
}

/// Wilson score interval for a binomial proportion `successes / n`.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let z = z_value(confidence)?;
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

pub fn accuracy_error_ci(cm: &ConfusionMatrix, confidence: f64) -> Result<AccuracySummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptySet);
    }
    let correct = cm.trace();
    let accuracy = correct as f64 / total as f64;
    let errors = total - correct;
    let (ci_low, ci_high) = wilson_interval(errors, total, confidence)?;
    Ok(AccuracySummary {
        accuracy,
        error: errors as f64 / total as f64,
        ci_low,
        ci_high,
    })
}

/// Mean of per-split values with a Student-t half-width at `confidence`.
/// A single value gets a zero half-width.
pub fn mean_half_width(values: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, 0.0));
    }
    z_value(confidence)?;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + confidence / 2.0);
    Ok((mean, t * (var / n).sqrt()))
}

/// The metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub error: f64,
    pub ci: [f64; 2],
    pub n: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, confidence: f64) -> Result<Self> {
        let summary = accuracy_error_ci(cm, confidence)?;
        Ok(Self {
            per_class: per_class_metrics(cm),
            accuracy: summary.accuracy,
            error: summary.error,
            ci: [summary.ci_low, summary.ci_high],
            n: cm.total(),
        })
    }
}
