// SPDX-License-Identifier: Apache-2.0

//! One-hidden-layer classifier over precomputed feature vectors.
//!
//! The hidden layer (a rectifier) doubles as the embedding that the graph is
//! rebuilt from between rounds. Training is plain minibatch SGD on a
//! per-sample weighted cross-entropy with L2 weight decay and a cosine
//! learning-rate schedule.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::Scores;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::pseudolabel::{softmax, WeightedSample};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GXC1";

/// Network parameters stored flat in checkpoint order: hidden weights
/// (`hidden x inputs`, row-major), hidden biases, output weights
/// (`classes x hidden`, row-major), output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    inputs: usize,
    hidden: usize,
    classes: usize,
    data: Vec<f64>,
}

fn param_count(inputs: usize, hidden: usize, classes: usize) -> usize {
    hidden * inputs + hidden + classes * hidden + classes
}

impl ModelParams {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "network shape ({inputs}, {hidden}, {classes}) has an empty layer"
            )));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
            data: vec![0.0; param_count(inputs, hidden, classes)],
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init(inputs: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(inputs, hidden, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_in = 1.0 / (inputs as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        let split = hidden * inputs + hidden;
        for (idx, v) in p.data.iter_mut().enumerate() {
            let bound = if idx < split { b_in } else { b_hid };
            *v = rng.random_range(-bound..=bound);
        }
        Ok(p)
    }

    pub fn from_flat(inputs: usize, hidden: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(inputs, hidden, classes)?;
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch {
                expected: p.data.len(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("model parameters"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, _, _] = self.offsets();
        &self.data[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.data[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.offsets();
        &self.data[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [_, _, _, b2] = self.offsets();
        &self.data[b2..]
    }

    /// Mutable views of `(w1, b1, w2, b2)`.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [_, b1, w2, b2] = self.offsets();
        let (w1s, rest) = self.data.split_at_mut(b1);
        let (b1s, rest) = rest.split_at_mut(w2 - b1);
        let (w2s, b2s) = rest.split_at_mut(b2 - w2);
        (w1s, b1s, w2s, b2s)
    }

    fn check_inputs(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                got: features.dim(),
            });
        }
        Ok(())
    }

    fn hidden_into(&self, x: &[f64], pre: &mut [f64]) {
        let (w1, b1) = (self.w1(), self.b1());
        for (j, p) in pre.iter_mut().enumerate() {
            let row = &w1[j * self.inputs..(j + 1) * self.inputs];
            *p = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn logits_into(&self, h: &[f64], z: &mut [f64]) {
        let (w2, b2) = (self.w2(), self.b2());
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &w2[k * self.hidden..(k + 1) * self.hidden];
            *zk = b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Output logits for one input row.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        self.hidden_into(x, &mut h);
        relu(&mut h);
        let mut z = vec![0.0; self.classes];
        self.logits_into(&h, &mut z);
        z
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn write_checkpoint<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for dim in [self.inputs, self.hidden, self.classes] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn parse_checkpoint(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |location: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {location}"),
            message: message.to_string(),
        };
        if !bytes.starts_with(CHECKPOINT_MAGIC) {
            return Err(bad(0, "missing GXC1 magic"));
        }
        if bytes.len() < 16 {
            return Err(bad(bytes.len(), "truncated header"));
        }
        let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let (inputs, hidden, classes) = (dim(4), dim(8), dim(12));
        let count = param_count(inputs, hidden, classes);
        let body = &bytes[16..];
        if body.len() != count * 8 {
            return Err(bad(16 + body.len().min(count * 8), "parameter block length does not match header"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_flat(inputs, hidden, classes, data)
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        Self::parse_checkpoint(path, &std::fs::read(path)?)
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    /// Epochs run by one training call.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Position of this call's first epoch inside the annealing window.
    pub epoch_offset: usize,
    /// Length of the annealing window; `None` means `epochs`.
    pub total_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-2,
            schedule: Schedule::Cosine,
            weight_decay: 2e-4,
            epochs: 210,
            batch_size: 16,
            seed: 0,
            hidden: 128,
            epoch_offset: 0,
            total_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch_size and hidden must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for epoch `e` of this call.
    pub fn learning_rate_at(&self, e: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let total = self.total_epochs.unwrap_or(self.epochs).max(1) as f64;
                let t = ((self.epoch_offset + e) as f64 / total).min(1.0);
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

struct Workspace {
    pre: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    dh: Vec<f64>,
}

impl Workspace {
    fn new(p: &ModelParams) -> Self {
        Self {
            pre: vec![0.0; p.hidden],
            h: vec![0.0; p.hidden],
            z: vec![0.0; p.classes],
            dh: vec![0.0; p.hidden],
        }
    }
}

/// Accumulates `weight * CE(softmax(f(x)), target)` for one sample into
/// `grad` and returns the sample's weighted loss.
fn accumulate(
    params: &ModelParams,
    x: &[f64],
    target: usize,
    weight: f64,
    ws: &mut Workspace,
    grad: &mut ModelParams,
) -> f64 {
    params.hidden_into(x, &mut ws.pre);
    ws.h.copy_from_slice(&ws.pre);
    relu(&mut ws.h);
    params.logits_into(&ws.h, &mut ws.z);
    let max = ws.z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + ws.z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = weight * (lse - ws.z[target]);
    if weight == 0.0 {
        return 0.0;
    }

    let (inputs, hidden) = (params.inputs, params.hidden);
    let w2 = params.w2();
    let (gw1, gb1, gw2, gb2) = grad.parts_mut();
    ws.dh.fill(0.0);
    for k in 0..params.classes {
        let p = (ws.z[k] - lse).exp();
        let dz = weight * (p - if k == target { 1.0 } else { 0.0 });
        gb2[k] += dz;
        let row = &mut gw2[k * hidden..(k + 1) * hidden];
        for (j, g) in row.iter_mut().enumerate() {
            *g += dz * ws.h[j];
            ws.dh[j] += dz * w2[k * hidden + j];
        }
    }
    for j in 0..hidden {
        if ws.pre[j] <= 0.0 {
            continue;
        }
        let d = ws.dh[j];
        gb1[j] += d;
        for (g, v) in gw1[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
            *g += d * v;
        }
    }
    loss
}

fn add_decay(params: &ModelParams, weight_decay: f64, loss: &mut f64, grad: &mut ModelParams) {
    if weight_decay == 0.0 {
        return;
    }
    *loss += 0.5 * weight_decay * params.squared_norm();
    for (g, v) in grad.data.iter_mut().zip(&params.data) {
        *g += weight_decay * v;
    }
}

/// `sum_i w_i CE(softmax(f(x_i)), t_i) + weight_decay * |theta|^2 / 2` and
/// its exact gradient.
pub fn weighted_ce_loss_grad(
    params: &ModelParams,
    features: &FeatureMatrix,
    targets: &[usize],
    weights: &[f64],
    weight_decay: f64,
) -> Result<(f64, ModelParams)> {
    params.check_inputs(features)?;
    for len in [targets.len(), weights.len()] {
        if len != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: len,
            });
        }
    }
    check_targets(targets.iter().copied(), params.classes)?;
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidConfig("sample weights must be finite and non-negative".into()));
    }
    let mut grad = ModelParams::zeros(params.inputs, params.hidden, params.classes)?;
    let mut ws = Workspace::new(params);
    let mut loss = 0.0;
    for i in 0..features.rows() {
        loss += accumulate(params, features.row(i), targets[i], weights[i], &mut ws, &mut grad);
    }
    add_decay(params, weight_decay, &mut loss, &mut grad);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, grad))
}

fn check_targets(targets: impl Iterator<Item = usize>, classes: usize) -> Result<()> {
    for class in targets {
        if class >= classes {
            return Err(Error::ClassOutOfRange { class, classes });
        }
    }
    Ok(())
}

/// Minibatch SGD over `(row, target, weight)` triples. Zero-weight samples
/// carry no gradient and never enter a batch. The batch loss is averaged
/// over the batch size.
fn sgd(mut params: ModelParams, features: &FeatureMatrix, samples: &[WeightedSample], cfg: &TrainConfig) -> Result<ModelParams> {
    let mut order: Vec<WeightedSample> = samples.iter().copied().filter(|s| s.weight > 0.0).collect();
    if order.is_empty() {
        return Ok(params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.epoch_offset as u64);
    let mut grad = ModelParams::zeros(params.inputs, params.hidden, params.classes)?;
    let mut ws = Workspace::new(&params);
    for e in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(e);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.data.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for s in batch {
                loss += accumulate(&params, features.row(s.index), s.target, s.weight * scale, &mut ws, &mut grad);
            }
            add_decay(&params, cfg.weight_decay, &mut loss, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            for (v, g) in params.data.iter_mut().zip(&grad.data) {
                *v -= lr * g;
            }
        }
    }
    if params.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(params)
}

/// Supervised warm start with unit weights from a seeded initialisation.
pub fn train_supervised(features: &FeatureMatrix, labels: &[usize], classes: usize, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            got: labels.len(),
        });
    }
    check_targets(labels.iter().copied(), classes)?;
    if let Some(k) = (0..classes).find(|k| !labels.contains(k)) {
        return Err(Error::MissingClass(k));
    }
    let params = ModelParams::init(features.dim(), cfg.hidden, classes, cfg.seed)?;
    let samples: Vec<WeightedSample> = labels
        .iter()
        .enumerate()
        .map(|(index, &target)| WeightedSample {
            index,
            target,
            weight: 1.0,
        })
        .collect();
    sgd(params, features, &samples, cfg)
}

/// Continues training on weighted samples; `index` refers to rows of
/// `features`.
pub fn train_weighted(
    params: ModelParams,
    features: &FeatureMatrix,
    samples: &[WeightedSample],
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    params.check_inputs(features)?;
    for s in samples {
        if s.index >= features.rows() {
            return Err(Error::IndexOutOfRange {
                index: s.index,
                n: features.rows(),
            });
        }
        if !(s.weight >= 0.0 && s.weight.is_finite()) {
            return Err(Error::InvalidConfig("sample weights must be finite and non-negative".into()));
        }
    }
    check_targets(samples.iter().map(|s| s.target), params.classes)?;
    sgd(params, features, samples, cfg)
}

/// Hidden-layer activations, one row per input row.
pub fn embed(params: &ModelParams, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    params.check_inputs(features)?;
    let mut data = vec![0.0; features.rows() * params.hidden];
    for (i, out) in data.chunks_exact_mut(params.hidden).enumerate() {
        params.hidden_into(features.row(i), out);
        relu(out);
    }
    FeatureMatrix::new(features.rows(), params.hidden, data)
}

/// Softmax outputs as a `classes x n` score table.
pub fn predict_probs(params: &ModelParams, features: &FeatureMatrix) -> Result<Scores> {
    params.check_inputs(features)?;
    let mut per_class = vec![vec![0.0; features.rows()]; params.classes];
    for i in 0..features.rows() {
        for (k, p) in softmax(&params.logits(features.row(i))).into_iter().enumerate() {
            per_class[k][i] = p;
        }
    }
    Scores::from_classes(per_class)
}

/// Argmax of the logits, lowest class on ties.
pub fn predict(params: &ModelParams, features: &FeatureMatrix) -> Result<Vec<usize>> {
    params.check_inputs(features)?;
    Ok((0..features.rows())
        .map(|i| crate::pseudolabel::argmax(&params.logits(features.row(i))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_features(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        FeatureMatrix::new(rows, dim, (0..rows * dim).map(|_| n.sample(&mut rng)).collect()).unwrap()
    }

    fn blobs(per_class: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let centre = if c == 0 { -1.0 } else { 1.0 };
            for _ in 0..per_class {
                rows.push(vec![centre + n.sample(&mut rng), centre + n.sample(&mut rng)]);
                labels.push(c);
            }
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn zero_weights_leave_only_decay() {
        let p = ModelParams::init(3, 4, 2, 1).unwrap();
        let x = random_features(5, 3, 2);
        let (loss, grad) = weighted_ce_loss_grad(&p, &x, &[0, 1, 0, 1, 0], &[0.0; 5], 0.1).unwrap();
        assert!((loss - 0.05 * p.squared_norm()).abs() < 1e-15);
        for (g, v) in grad.as_slice().iter().zip(p.as_slice()) {
            assert!((g - 0.1 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_logits_give_log_classes() {
        let p = ModelParams::zeros(2, 3, 3).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![0.4, -1.0]]).unwrap();
        let (loss, _) = weighted_ce_loss_grad(&p, &x, &[2], &[1.0], 0.0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn split_weight_is_linear() {
        let p = ModelParams::init(3, 5, 3, 9).unwrap();
        let x = random_features(1, 3, 4);
        let twice = FeatureMatrix::new(2, 3, [x.as_slice(), x.as_slice()].concat()).unwrap();
        let (l1, g1) = weighted_ce_loss_grad(&p, &x, &[1], &[1.0], 2e-4).unwrap();
        let (l2, g2) = weighted_ce_loss_grad(&p, &twice, &[1, 1], &[0.5, 0.5], 2e-4).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_out_of_range_are_rejected() {
        let p = ModelParams::zeros(1, 1, 2).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            weighted_ce_loss_grad(&p, &x, &[2], &[1.0], 0.0),
            Err(Error::ClassOutOfRange { class: 2, classes: 2 })
        ));
    }

    #[test]
    fn exploding_parameters_are_reported() {
        let data = vec![1e300; param_count(1, 1, 2)];
        let p = ModelParams::from_flat(1, 1, 2, data).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![1e10]]).unwrap();
        assert!(matches!(weighted_ce_loss_grad(&p, &x, &[0], &[1.0], 1.0), Err(Error::NonFiniteLoss)));
    }

    #[test]
    fn cosine_schedule_spans_the_window() {
        let cfg = TrainConfig {
            epochs: 10,
            epoch_offset: 20,
            total_epochs: Some(40),
            ..Default::default()
        };
        assert!((cfg.learning_rate_at(0) - 0.5 * cfg.learning_rate).abs() < 1e-15);
        let whole = TrainConfig {
            epochs: 4,
            ..Default::default()
        };
        assert_eq!(whole.learning_rate_at(0), whole.learning_rate);
        assert!(whole.learning_rate_at(3) < whole.learning_rate_at(1));
    }

    #[test]
    fn supervised_separates_blobs() {
        let (x, y) = blobs(10, 3);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            ..Default::default()
        };
        let p = train_supervised(&x, &y, 2, &cfg).unwrap();
        assert_eq!(predict(&p, &x).unwrap(), y);
    }

    #[test]
    fn absent_class_is_missing() {
        let (x, _) = blobs(3, 1);
        let y = vec![0; 6];
        assert!(matches!(
            train_supervised(&x, &y, 2, &TrainConfig::default()),
            Err(Error::MissingClass(1))
        ));
    }

    #[test]
    fn zero_epochs_return_the_initialisation() {
        let (x, y) = blobs(3, 1);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 77,
            ..Default::default()
        };
        let p = train_supervised(&x, &y, 2, &cfg).unwrap();
        assert_eq!(p, ModelParams::init(2, cfg.hidden, 2, 77).unwrap());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (x, y) = blobs(8, 5);
        let cfg = TrainConfig {
            epochs: 7,
            seed: 3,
            ..Default::default()
        };
        let a = train_supervised(&x, &y, 2, &cfg).unwrap();
        let b = train_supervised(&x, &y, 2, &cfg).unwrap();
        let bits = |p: &ModelParams| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_pseudo_weights_match_labelled_only_training() {
        let (x, y) = blobs(6, 8);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            ..Default::default()
        };
        let init = ModelParams::init(2, cfg.hidden, 2, 4).unwrap();
        let labelled: Vec<WeightedSample> = (0..4)
            .map(|i| WeightedSample {
                index: i * 3,
                target: y[i * 3],
                weight: 1.3,
            })
            .collect();
        let mut with_pseudo = labelled.clone();
        with_pseudo.extend((0..12).filter(|i| i % 3 != 0).map(|i| WeightedSample {
            index: i,
            target: 1 - y[i],
            weight: 0.0,
        }));
        let a = train_weighted(init.clone(), &x, &labelled, &cfg).unwrap();
        let b = train_weighted(init, &x, &with_pseudo, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_of_identity_layer_passes_nonnegative_inputs() {
        let mut p = ModelParams::zeros(3, 3, 2).unwrap();
        let (w1, _, _, _) = p.parts_mut();
        for j in 0..3 {
            w1[j * 3 + j] = 1.0;
        }
        let x = FeatureMatrix::from_rows(&[vec![0.5, 2.0, 0.0], vec![1.0, 0.0, 3.0], vec![0.5, 2.0, 0.0]]).unwrap();
        let e = embed(&p, &x).unwrap();
        assert_eq!(e.as_slice(), x.as_slice());
        assert_eq!(e.row(0), e.row(2));
    }

    #[test]
    fn zero_hidden_weights_embed_to_zero() {
        let p = ModelParams::zeros(2, 4, 2).unwrap();
        let e = embed(&p, &random_features(3, 2, 1)).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn probabilities_are_softmax_of_logits() {
        let p = ModelParams::init(4, 6, 3, 12).unwrap();
        let x = random_features(20, 4, 13);
        let probs = predict_probs(&p, &x).unwrap();
        let preds = predict(&p, &x).unwrap();
        for i in 0..20 {
            let row = probs.node(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(crate::pseudolabel::argmax(&row), preds[i]);
        }
        let zero = ModelParams::zeros(4, 6, 3).unwrap();
        let u = predict_probs(&zero, &x).unwrap();
        assert!(u.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn bias_shift_leaves_probabilities_unchanged() {
        let p = ModelParams::init(2, 3, 3, 5).unwrap();
        let mut shifted = p.clone();
        let (_, _, _, b2) = shifted.parts_mut();
        for b in b2 {
            *b += 7.5;
        }
        let x = random_features(4, 2, 6);
        let a = predict_probs(&p, &x).unwrap();
        let b = predict_probs(&shifted, &x).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(3, 4, 2, 21).unwrap();
        let mut bytes = Vec::new();
        p.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"GXC1");
        assert_eq!(bytes.len(), 16 + 8 * p.as_slice().len());
        let back = ModelParams::parse_checkpoint(Path::new("m.bin"), &bytes).unwrap();
        assert_eq!(back, p);
        assert!(ModelParams::parse_checkpoint(Path::new("m.bin"), &bytes[..20]).is_err());
    }
}
