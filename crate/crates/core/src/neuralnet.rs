//! Fully-connected energy regressor with hand-written backpropagation.
//!
//! Weights of layer `l` are stored as an `(in, out)` matrix so a batch
//! `X` (rows are samples) maps to `X·W + b`. Hidden layers apply the
//! rectifier; the output layer is affine with width 1.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::DatasetRecord;
use crate::encoding::{add_uniform_noise, encode, EncodingError, MultiHotVector, Vocabulary};
use crate::seeding::{child_rng, rng};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer sizes need an input, at least one hidden layer and an output of width 1 (got {0:?})")]
    Shape(Vec<usize>),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("input has {found} features, model expects {expected}")]
    InputSize { found: usize, expected: usize },
    #[error("batch has {inputs} inputs but {labels} labels")]
    LabelCount { inputs: usize, labels: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dataset needs at least 2 records (got {0})")]
    TooFewRecords(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("model is bound to vocabulary {model}, input comes from {input}")]
    Fingerprint { model: String, input: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("not a model checkpoint (bad magic)")]
    Magic,
    #[error("checkpoint truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("unsupported checkpoint schema `{0}`")]
    Schema(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint was trained on vocabulary {stored}, not {requested}")]
    Fingerprint { stored: String, requested: String },
    #[error("checkpoint has no embedded vocabulary")]
    NoVocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    /// Per-sample loss and its derivative with respect to the prediction.
    fn eval(self, pred: f64, label: f64) -> (f64, f64) {
        let d = pred - label;
        match self {
            LossKind::L1 => (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }),
            LossKind::L2 => (d * d, 2.0 * d),
        }
    }

    pub fn mean(self, preds: &[f64], labels: &[f64]) -> f64 {
        preds
            .iter()
            .zip(labels)
            .map(|(p, y)| self.eval(*p, *y).0)
            .sum::<f64>()
            / preds.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam { lr: f64 },
    AdamW { lr: f64, weight_decay: f64 },
}

impl Optimizer {
    pub fn lr(self) -> f64 {
        match self {
            Optimizer::Adam { lr } | Optimizer::AdamW { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Fingerprint of the vocabulary whose layout the input follows; empty
    /// for an unbound model.
    pub vocab_fingerprint: String,
}

/// Weight and bias gradients in the model's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<MlpModel, NnError> {
    if layer_sizes.len() < 3 || layer_sizes.last() != Some(&1) {
        return Err(NnError::Shape(layer_sizes.to_vec()));
    }
    if let Some(i) = layer_sizes.iter().position(|s| *s == 0) {
        return Err(NnError::ZeroWidth(i));
    }
    let mut r = rng(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| r.random_range(-bound..bound)));
        biases.push(Array1::from_shape_fn(fan_out, |_| r.random_range(-bound..bound)));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        vocab_fingerprint: String::new(),
    })
}

impl MlpModel {
    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Binds the model to a vocabulary layout; fails if the input size differs.
    pub fn bind(mut self, vocab: &Vocabulary) -> Result<Self, NnError> {
        if vocab.input_len() != self.input_size() {
            return Err(NnError::InputSize {
                found: vocab.input_len(),
                expected: self.input_size(),
            });
        }
        self.vocab_fingerprint = vocab.fingerprint();
        Ok(self)
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_size() {
            return Err(NnError::InputSize {
                found: x.ncols(),
                expected: self.input_size(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer for a batch.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            if l + 1 < self.n_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        self.check_batch(&x)?;
        if x.nrows() == 0 {
            return Ok(Vec::new());
        }
        Ok(self.activations(x).pop().expect("output").column(0).to_vec())
    }

    pub fn predict(&self, values: &[f64]) -> Result<f64, NnError> {
        let x = ArrayView2::from_shape((1, values.len()), values).expect("row shape");
        Ok(self.predict_batch(x)?[0])
    }
}

impl MlpModel {
    /// Prediction for one input and the gradient of `upstream(prediction)`
    /// with respect to that input, where `upstream` returns dLoss/dPrediction.
    pub fn input_gradient(&self, values: &[f64], upstream: impl Fn(f64) -> f64) -> Result<(f64, Vec<f64>), NnError> {
        let x = ArrayView2::from_shape((1, values.len()), values).expect("row shape");
        self.check_batch(&x)?;
        let acts = self.activations(x);
        let pred = acts.last().expect("output")[[0, 0]];
        let mut delta = Array2::from_elem((1, 1), upstream(pred));
        for l in (0..self.n_layers()).rev() {
            let mut back = delta.dot(&self.weights[l].t());
            if l > 0 {
                ndarray::Zip::from(&mut back).and(&acts[l]).for_each(|g, a| {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        Ok((pred, delta.into_raw_vec_and_offset().0))
    }

    /// SHA-256 over all parameters in checkpoint order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

/// Prediction for one encoded circuit.
pub fn forward(m: &MlpModel, x: &MultiHotVector) -> Result<f64, NnError> {
    if !m.vocab_fingerprint.is_empty() && m.vocab_fingerprint != x.fingerprint {
        return Err(NnError::Fingerprint {
            model: m.vocab_fingerprint.clone(),
            input: x.fingerprint.clone(),
        });
    }
    m.predict(&x.values)
}

/// Mean loss over the batch with gradients for every weight, bias and input.
pub fn loss_and_gradients(
    m: &MlpModel,
    x: ArrayView2<f64>,
    labels: &[f64],
    loss: LossKind,
) -> Result<(f64, Gradients, Array2<f64>), NnError> {
    m.check_batch(&x)?;
    if x.nrows() != labels.len() {
        return Err(NnError::LabelCount {
            inputs: x.nrows(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let n = labels.len() as f64;
    let acts = m.activations(x);
    let out = acts.last().expect("output");
    let mut total = 0.0;
    let mut delta = Array2::zeros((labels.len(), 1));
    for (i, y) in labels.iter().enumerate() {
        let (l, d) = loss.eval(out[[i, 0]], *y);
        total += l;
        delta[[i, 0]] = d / n;
    }
    let layers = m.n_layers();
    let mut gw = vec![Array2::zeros((0, 0)); layers];
    let mut gb = vec![Array1::zeros(0); layers];
    for l in (0..layers).rev() {
        gw[l] = acts[l].t().dot(&delta);
        gb[l] = delta.sum_axis(Axis(0));
        let mut back = delta.dot(&m.weights[l].t());
        if l > 0 {
            // acts[l] is post-rectifier, so zero entries mark inactive units.
            ndarray::Zip::from(&mut back)
                .and(&acts[l])
                .for_each(|g, a| {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                });
        }
        delta = back;
    }
    Ok((total / n, Gradients { weights: gw, biases: gb }, delta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(m: &MlpModel) -> Self {
        Self {
            step: 0,
            m_w: m.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: m.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: m.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: m.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// One Adam or AdamW step. Decoupled decay `w <- w - lr*lambda*w` is applied
/// to weights (not biases) before the moment update.
pub fn optimizer_step(m: &mut MlpModel, g: &Gradients, state: &mut AdamState, opt: Optimizer) {
    state.step += 1;
    let t = state.step as i32;
    let lr = opt.lr();
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let decay = match opt {
        Optimizer::AdamW { weight_decay, .. } => weight_decay,
        Optimizer::Adam { .. } => 0.0,
    };
    let update = |p: &mut f64, g: f64, mo: &mut f64, ve: &mut f64| {
        *mo = BETA1 * *mo + (1.0 - BETA1) * g;
        *ve = BETA2 * *ve + (1.0 - BETA2) * g * g;
        *p -= lr * (*mo / c1) / ((*ve / c2).sqrt() + ADAM_EPS);
    };
    for l in 0..m.n_layers() {
        if decay != 0.0 {
            m.weights[l].mapv_inplace(|w| w - lr * decay * w);
        }
        ndarray::Zip::from(&mut m.weights[l])
            .and(&g.weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.v_w[l])
            .for_each(|p, g, mo, ve| update(p, *g, mo, ve));
        ndarray::Zip::from(&mut m.biases[l])
            .and(&g.biases[l])
            .and(&mut state.m_b[l])
            .and(&mut state.v_b[l])
            .for_each(|p, g, mo, ve| update(p, *g, mo, ve));
    }
}

/// Which snapshot `train` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// Lowest held-out loss seen at the end of any epoch.
    BestTest,
    /// Weights after the last epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub loss: LossKind,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: f64,
    pub noise_lower: f64,
    pub noise_upper: f64,
    /// Stop after this many epochs without a held-out improvement.
    pub patience: Option<usize>,
    pub selection: Selection,
    /// Start the output bias at the mean training label.
    pub center_output: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![700, 700, 700],
            loss: LossKind::L2,
            optimizer: Optimizer::Adam { lr: 1e-5 },
            epochs: 2000,
            batch_size: 64,
            split: 0.85,
            noise_lower: 0.1,
            noise_upper: 0.95,
            patience: Some(200),
            selection: Selection::BestTest,
            center_output: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        if !(0.0 <= self.noise_lower && self.noise_lower <= self.noise_upper && self.noise_upper.is_finite()) {
            return bad("noise bounds must satisfy 0 <= lower <= upper");
        }
        if let Optimizer::AdamW { weight_decay, .. } = self.optimizer {
            if !(weight_decay >= 0.0) {
                return bad("weight_decay must be non-negative");
            }
        }
        if !(self.optimizer.lr() > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub best_test_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Held-out loss of predicting the mean training label for every record.
    pub baseline_test_loss: f64,
    pub train_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Deterministic 85:15-style split after one seeded shuffle; returns
/// (train indices, test indices).
pub fn split_indices(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut child_rng(seed, 0x5917));
    let n_train = ((n as f64 * split).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test = idx.split_off(n_train);
    (idx, test)
}

fn encode_rows(records: &[DatasetRecord], idx: &[usize], vocab: &Vocabulary) -> Result<(Array2<f64>, Vec<f64>), NnError> {
    let mut x = Array2::zeros((idx.len(), vocab.input_len()));
    let mut y = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let r = &records[i];
        let c = r.parse().map_err(|e| NnError::Record {
            index: i,
            reason: e.to_string(),
        })?;
        let v = encode(&c, vocab)?;
        x.row_mut(row).assign(&Array1::from(v.values));
        y.push(r.energy);
    }
    Ok((x, y))
}

/// Trains a fresh model on `records` encoded with `vocab`.
pub fn train(
    records: &[DatasetRecord],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport), NnError> {
    cfg.check()?;
    if records.len() < 2 {
        return Err(NnError::TooFewRecords(records.len()));
    }
    let (train_idx, test_idx) = split_indices(records.len(), cfg.split, cfg.seed);
    let (x_train, y_train) = encode_rows(records, &train_idx, vocab)?;
    let (x_test, y_test) = encode_rows(records, &test_idx, vocab)?;

    let mut sizes = vec![vocab.input_len()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut model = init_model(&sizes, cfg.seed)?.bind(vocab)?;
    let train_mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
    if cfg.center_output {
        let last = model.n_layers() - 1;
        model.biases[last][0] = train_mean;
    }
    let baseline_test_loss = cfg.loss.mean(&vec![train_mean; y_test.len()], &y_test);

    let mut state = AdamState::new(&model);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut noise_rng = child_rng(cfg.seed, 0xA015E);
    let mut shuffle_rng = child_rng(cfg.seed, 0x0D3E);
    let mut train_curve = Vec::new();
    let mut test_curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let width = vocab.input_len();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut xb = Array2::zeros((chunk.len(), width));
            let mut yb = Vec::with_capacity(chunk.len());
            for (row, &i) in chunk.iter().enumerate() {
                let mut r = xb.row_mut(row);
                r.assign(&x_train.row(i));
                add_uniform_noise(r.as_slice_mut().expect("contiguous"), cfg.noise_lower, cfg.noise_upper, &mut noise_rng);
                yb.push(y_train[i]);
            }
            let (loss, grads, _) = loss_and_gradients(&model, xb.view(), &yb, cfg.loss)?;
            epoch_loss += loss * chunk.len() as f64;
            optimizer_step(&mut model, &grads, &mut state, cfg.optimizer);
        }
        train_curve.push(epoch_loss / order.len() as f64);
        let test_loss = cfg.loss.mean(&model.predict_batch(x_test.view())?, &y_test);
        test_curve.push(test_loss);
        if test_loss < best.0 {
            best = (test_loss, epoch, if cfg.selection == Selection::BestTest { model.clone() } else { MlpModel::placeholder() });
        }
        if let Some(p) = cfg.patience {
            if epoch >= best.1 + p {
                break;
            }
        }
    }
    let epochs_run = test_curve.len();
    let (best_test_loss, best_epoch, best_model) = best;
    let chosen = match cfg.selection {
        Selection::BestTest if epochs_run > 0 => best_model,
        _ => model,
    };
    let final_train_loss = cfg.loss.mean(&chosen.predict_batch(x_train.view())?, &y_train);
    let final_test_loss = cfg.loss.mean(&chosen.predict_batch(x_test.view())?, &y_test);
    Ok((
        chosen,
        TrainReport {
            final_train_loss,
            final_test_loss,
            best_test_loss,
            best_epoch,
            epochs_run,
            baseline_test_loss,
            train_curve,
            test_curve,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
        },
    ))
}

impl MlpModel {
    fn placeholder() -> Self {
        Self {
            layer_sizes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
            vocab_fingerprint: String::new(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const CHECKPOINT_MAGIC: &[u8] = b"QDDMLP\n";
pub const CHECKPOINT_SCHEMA: &str = "qdd-mlp-v1";

/// Header stored as JSON between the magic line and the raw parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema: String,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub parameter_layout: String,
    pub vocab_fingerprint: String,
    pub encoding_layout: Option<String>,
    pub vocabulary: Option<Vocabulary>,
    pub train_config_digest: Option<String>,
    pub train_config: Option<TrainConfig>,
}

/// A model with the metadata needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub vocabulary: Option<Vocabulary>,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    /// Embedded vocabulary, checked against `expected` when given.
    pub fn vocabulary_for(&self, expected: Option<&Vocabulary>) -> Result<Vocabulary, CheckpointError> {
        if let Some(v) = expected {
            if v.fingerprint() != self.model.vocab_fingerprint {
                return Err(CheckpointError::Fingerprint {
                    stored: self.model.vocab_fingerprint.clone(),
                    requested: v.fingerprint(),
                });
            }
            return Ok(v.clone());
        }
        self.vocabulary.clone().ok_or(CheckpointError::NoVocabulary)
    }
}

const PARAMETER_LAYOUT: &str =
    "for each layer in order: weights as (in, out) row-major, then bias (out); f64 little-endian; trailing 32-byte SHA-256 of all preceding bytes";

/// Layout: magic line, decimal header length and newline, JSON header,
/// raw parameters, SHA-256 checksum.
pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA.into(),
        layer_sizes: ck.model.layer_sizes.clone(),
        activation: "relu".into(),
        parameter_layout: PARAMETER_LAYOUT.into(),
        vocab_fingerprint: ck.model.vocab_fingerprint.clone(),
        encoding_layout: ck.vocabulary.as_ref().map(|v| v.layout_description()),
        vocabulary: ck.vocabulary.clone(),
        train_config_digest: ck.train_config.as_ref().map(|c| c.digest()),
        train_config: ck.train_config.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 8 * ck.model.parameter_count() + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(format!("{}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    for (w, b) in ck.model.weights.iter().zip(&ck.model.biases) {
        for v in w.iter().chain(b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let rest = bytes.strip_prefix(CHECKPOINT_MAGIC).ok_or(CheckpointError::Magic)?;
    let nl = rest
        .iter()
        .position(|b| *b == b'\n')
        .ok_or(CheckpointError::Truncated { needed: bytes.len() + 1, found: bytes.len() })?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::Header("bad header length".into()))?;
    let start = CHECKPOINT_MAGIC.len() + nl + 1;
    if bytes.len() < start + len {
        return Err(CheckpointError::Truncated { needed: start + len, found: bytes.len() });
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[start..start + len]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(CheckpointError::Schema(header.schema));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 {
        return Err(CheckpointError::Header("fewer than two layer sizes".into()));
    }
    let count: usize = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    let body = start + len;
    let needed = body + 8 * count + 32;
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(CheckpointError::Header(format!("{} trailing bytes", bytes.len() - needed)));
    }
    if Sha256::digest(&bytes[..needed - 32]).as_slice() != &bytes[needed - 32..] {
        return Err(CheckpointError::Checksum);
    }
    let mut values = bytes[body..needed - 32]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for p in sizes.windows(2) {
        let w: Vec<f64> = values.by_ref().take(p[0] * p[1]).collect();
        weights.push(Array2::from_shape_vec((p[0], p[1]), w).expect("sized"));
        biases.push(Array1::from(values.by_ref().take(p[1]).collect::<Vec<f64>>()));
    }
    Ok(Checkpoint {
        model: MlpModel {
            layer_sizes: sizes.clone(),
            weights,
            biases,
            vocab_fingerprint: header.vocab_fingerprint,
        },
        vocabulary: header.vocabulary,
        train_config: header.train_config,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(ck)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_checked() {
        assert_eq!(init_model(&[19, 4, 1], 0).unwrap(), init_model(&[19, 4, 1], 0).unwrap());
        assert_ne!(init_model(&[19, 4, 1], 0).unwrap(), init_model(&[19, 4, 1], 1).unwrap());
        assert!(matches!(init_model(&[19, 0, 1], 0), Err(NnError::ZeroWidth(1))));
        assert!(matches!(init_model(&[19, 1], 0), Err(NnError::Shape(_))));
        assert!(matches!(init_model(&[19, 4, 2], 0), Err(NnError::Shape(_))));
    }

    #[test]
    fn zero_weights_predict_output_bias() {
        let mut m = init_model(&[5, 3, 1], 4).unwrap();
        for w in &mut m.weights {
            w.fill(0.0);
        }
        for b in &mut m.biases {
            b.fill(0.0);
        }
        m.biases[1][0] = -2.5;
        assert_eq!(m.predict(&[1.0, 0.3, 0.0, 7.0, -1.0]).unwrap(), -2.5);
        assert!(matches!(m.predict(&[1.0]), Err(NnError::InputSize { found: 1, expected: 5 })));
    }

    #[test]
    fn hand_computed_two_layer_example() {
        // h = relu(x W1 + [0, 1]) with W1 = [1, 2; -1, 0.5]; y = 3 h0 - 2 h1 + 0.5
        let m = MlpModel {
            layer_sizes: vec![2, 2, 1],
            weights: vec![array![[1.0, 2.0], [-1.0, 0.5]], array![[3.0], [-2.0]]],
            biases: vec![array![0.0, 1.0], array![0.5]],
            vocab_fingerprint: String::new(),
        };
        // x = (2, 1): z = (1, 5.5) -> y = 3 - 11 + 0.5
        assert_eq!(m.predict(&[2.0, 1.0]).unwrap(), -7.5);
        // x = (1, 3): z = (-2, 4.5) -> h = (0, 4.5) -> y = -9 + 0.5
        assert_eq!(m.predict(&[1.0, 3.0]).unwrap(), -8.5);
        let batch = array![[2.0, 1.0], [1.0, 3.0]];
        assert_eq!(m.predict_batch(batch.view()).unwrap(), vec![-7.5, -8.5]);
    }

    #[test]
    fn scalar_l2_gradient_closed_form() {
        // Hidden unit passes x through (w1 = 1, b1 = 0, x > 0) so f = w x + b.
        let m = MlpModel {
            layer_sizes: vec![1, 1, 1],
            weights: vec![array![[1.0]], array![[0.7]]],
            biases: vec![array![0.0], array![0.2]],
            vocab_fingerprint: String::new(),
        };
        let x = array![[1.5]];
        let (loss, g, gx) = loss_and_gradients(&m, x.view(), &[3.0], LossKind::L2).unwrap();
        let pred = 0.7 * 1.5 + 0.2;
        assert!((loss - (pred - 3.0f64).powi(2)).abs() < 1e-15);
        assert!((g.weights[1][[0, 0]] - 2.0 * (pred - 3.0) * 1.5).abs() < 1e-12);
        assert!((g.biases[1][0] - 2.0 * (pred - 3.0)).abs() < 1e-12);
        assert!((gx[[0, 0]] - 2.0 * (pred - 3.0) * 0.7).abs() < 1e-12);
    }

    #[test]
    fn exact_prediction_has_zero_gradient() {
        let m = init_model(&[4, 3, 1], 2).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4]];
        let y = m.predict_batch(x.view()).unwrap();
        let (loss, g, gx) = loss_and_gradients(&m, x.view(), &y, LossKind::L2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.weights.iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert!(gx.iter().all(|v| *v == 0.0));
        assert!(matches!(
            loss_and_gradients(&m, x.slice(ndarray::s![0..0, ..]), &[], LossKind::L2),
            Err(NnError::EmptyBatch)
        ));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = MlpModel {
            layer_sizes: vec![1, 1, 1],
            weights: vec![array![[1.0]], array![[1.0]]],
            biases: vec![array![0.0], array![0.0]],
            vocab_fingerprint: String::new(),
        };
        let g = Gradients {
            weights: vec![array![[1.0]], array![[0.0]]],
            biases: vec![array![0.0], array![0.0]],
        };
        let mut s = AdamState::new(&m);
        optimizer_step(&mut m, &g, &mut s, Optimizer::Adam { lr: 0.1 });
        assert!((m.weights[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert_eq!(m.weights[1][[0, 0]], 1.0);
    }

    #[test]
    fn adamw_decays_weights_not_biases() {
        let base = MlpModel {
            layer_sizes: vec![1, 1, 1],
            weights: vec![array![[1.0]], array![[1.0]]],
            biases: vec![array![1.0], array![1.0]],
            vocab_fingerprint: String::new(),
        };
        let zero = Gradients {
            weights: vec![array![[0.0]], array![[0.0]]],
            biases: vec![array![0.0], array![0.0]],
        };
        let mut m = base.clone();
        let mut s = AdamState::new(&m);
        optimizer_step(&mut m, &zero, &mut s, Optimizer::AdamW { lr: 1e-6, weight_decay: 1.0 });
        assert!((m.weights[0][[0, 0]] - 0.999999).abs() < 1e-15);
        assert_eq!(m.biases, base.biases);

        let mut plain = base.clone();
        let mut s = AdamState::new(&plain);
        optimizer_step(&mut plain, &zero, &mut s, Optimizer::Adam { lr: 1e-3 });
        assert_eq!(plain, base);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let m = init_model(&[6, 5, 4, 1], 9).unwrap();
        let ck = Checkpoint {
            model: m.clone(),
            vocabulary: None,
            train_config: Some(TrainConfig::default()),
        };
        let bytes = checkpoint_bytes(&ck);
        assert_eq!(parse_checkpoint(&bytes).unwrap(), ck);
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(parse_checkpoint(&bytes[..cut]).is_err());
        }
        assert!(matches!(
            parse_checkpoint(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut flipped = bytes.clone();
        let k = bytes.len() - 40;
        flipped[k] ^= 1;
        assert!(matches!(parse_checkpoint(&flipped), Err(CheckpointError::Checksum)));
        assert!(matches!(parse_checkpoint(b"nope"), Err(CheckpointError::Magic)));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(20, 0.85, 3);
        assert_eq!((a.len(), b.len()), (17, 3));
        assert_eq!(split_indices(20, 0.85, 3), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let (a, b) = split_indices(2, 0.85, 0);
        assert_eq!((a.len(), b.len()), (1, 1));
    }
}
