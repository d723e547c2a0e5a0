//! Input-space gradient descent on a frozen regressor.
//!
//! Each outer epoch takes the working vector through `inner_steps` steps of
//! `x <- x - lr * d(pred(x) - target)^2 / dx`, decodes it and scores the
//! candidate by the model prediction on its clean encoding. A candidate whose
//! dreaming loss does not exceed the current one becomes the current circuit
//! and the next epoch starts from its re-encoding with fresh noise. A worse
//! candidate is recorded but discarded, and the current circuit is
//! re-encoded with fresh noise. When the candidate equals the current
//! circuit the working vector is kept, so the descent can still cross a
//! decision boundary later.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{parse_circuit_string, Circuit};
use crate::encoding::{add_uniform_noise, decode, encode, EncodingError, MultiHotVector, Vocabulary};
use crate::neuralnet::{MlpModel, NnError};
use crate::seeding::{derive_seed, rng};
use crate::simulator::{HamiltonianSpec, SimError};
use crate::vqe::{minimize_energy, VqeConfig};

pub const TRACE_SCHEMA: &str = "qdd-trace-v1";

#[derive(Debug, Error)]
pub enum DreamError {
    #[error("invalid dream config: {0}")]
    Config(String),
    #[error("model is bound to vocabulary {model}, not {vocab}")]
    Fingerprint { model: String, vocab: String },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamConfig {
    pub target_energy: f64,
    pub lr: f64,
    pub noise_lower: f64,
    pub noise_upper: f64,
    pub inner_steps: usize,
    pub outer_epochs: usize,
    /// Stop once the current dreaming loss falls below this value.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            target_energy: -8.0,
            lr: 0.01,
            noise_lower: 0.1,
            noise_upper: 0.9,
            inner_steps: 50,
            outer_epochs: 10,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl DreamConfig {
    pub fn check(&self) -> Result<(), DreamError> {
        let bad = |m: &str| Err(DreamError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.outer_epochs == 0 {
            return bad("outer_epochs must be at least 1");
        }
        if !(0.0 <= self.noise_lower && self.noise_lower <= self.noise_upper && self.noise_upper.is_finite()) {
            return bad("noise bounds must satisfy 0 <= lower <= upper");
        }
        if !self.target_energy.is_finite() {
            return bad("target energy must be finite");
        }
        Ok(())
    }
}

pub fn dreaming_loss(prediction: f64, target: f64) -> f64 {
    (prediction - target).powi(2)
}

pub fn dreaming_loss_grad(prediction: f64, target: f64) -> f64 {
    2.0 * (prediction - target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamEpoch {
    pub epoch: usize,
    pub circuit: String,
    pub predicted: f64,
    pub loss: f64,
    pub energy: f64,
    /// Whether this circuit became the current circuit.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamTrace {
    pub n_qubits: usize,
    pub target_energy: f64,
    /// Epoch 0 is the initial circuit.
    pub epochs: Vec<DreamEpoch>,
}

impl DreamTrace {
    pub fn initial(&self) -> &DreamEpoch {
        &self.epochs[0]
    }

    /// Last accepted epoch, the outcome of the run.
    pub fn final_epoch(&self) -> &DreamEpoch {
        self.epochs.iter().rev().find(|e| e.accepted).unwrap_or(&self.epochs[0])
    }

    /// True when no epoch produced a circuit different from the initial one.
    pub fn is_stagnant(&self) -> bool {
        self.epochs.iter().all(|e| e.circuit == self.epochs[0].circuit)
    }

    pub fn final_circuit(&self) -> Result<Circuit, crate::circuit::CircuitError> {
        parse_circuit_string(&self.final_epoch().circuit, self.n_qubits)
    }
}

fn check_binding(m: &MlpModel, vocab: &Vocabulary) -> Result<(), DreamError> {
    let fp = vocab.fingerprint();
    if m.vocab_fingerprint != fp {
        return Err(DreamError::Fingerprint {
            model: m.vocab_fingerprint.clone(),
            vocab: fp,
        });
    }
    Ok(())
}

/// One gradient step on the input; the model is only read.
pub fn dream_step(m: &MlpModel, x: &MultiHotVector, cfg: &DreamConfig) -> Result<MultiHotVector, DreamError> {
    if !m.vocab_fingerprint.is_empty() && m.vocab_fingerprint != x.fingerprint {
        return Err(DreamError::Fingerprint {
            model: m.vocab_fingerprint.clone(),
            vocab: x.fingerprint.clone(),
        });
    }
    let mut out = x.clone();
    dream_step_values(m, &mut out.values, cfg)?;
    Ok(out)
}

fn dream_step_values(m: &MlpModel, values: &mut [f64], cfg: &DreamConfig) -> Result<f64, DreamError> {
    let target = cfg.target_energy;
    let (pred, grad) = m.input_gradient(values, |p| dreaming_loss_grad(p, target))?;
    for (v, g) in values.iter_mut().zip(grad) {
        *v -= cfg.lr * g;
    }
    Ok(pred)
}

/// Labels circuits once per run; identical circuits share a label.
struct Labeler<'a> {
    h: &'a HamiltonianSpec,
    vqe: &'a VqeConfig,
    memo: HashMap<String, f64>,
}

impl Labeler<'_> {
    fn energy(&mut self, c: &Circuit) -> Result<f64, DreamError> {
        let key = c.serialize();
        if let Some(e) = self.memo.get(&key) {
            return Ok(*e);
        }
        let e = minimize_energy(c, self.h, &self.vqe.keyed_to(c))?.energy;
        self.memo.insert(key, e);
        Ok(e)
    }
}

/// Dreams `c0` toward `cfg.target_energy`, labeling every decoded circuit.
pub fn dream_run(
    m: &MlpModel,
    vocab: &Vocabulary,
    c0: &Circuit,
    cfg: &DreamConfig,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
) -> Result<DreamTrace, DreamError> {
    cfg.check()?;
    check_binding(m, vocab)?;
    let mut labeler = Labeler {
        h,
        vqe,
        memo: HashMap::new(),
    };
    let target = cfg.target_energy;
    let clean = encode(c0, vocab)?;
    let pred0 = m.predict(&clean.values)?;
    let mut current = c0.clone();
    let mut current_loss = dreaming_loss(pred0, target);
    let mut epochs = vec![DreamEpoch {
        epoch: 0,
        circuit: c0.serialize(),
        predicted: pred0,
        loss: current_loss,
        energy: labeler.energy(c0)?,
        accepted: true,
    }];
    let mut noise = rng(cfg.seed);
    let fresh = |c: &Circuit, noise: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<f64>, DreamError> {
        let mut v = encode(c, vocab)?.values;
        add_uniform_noise(&mut v, cfg.noise_lower, cfg.noise_upper, noise);
        Ok(v)
    };
    let mut x = fresh(&current, &mut noise)?;
    for epoch in 1..=cfg.outer_epochs {
        if current_loss < cfg.tolerance {
            break;
        }
        for _ in 0..cfg.inner_steps {
            dream_step_values(m, &mut x, cfg)?;
        }
        let candidate = decode(
            &MultiHotVector {
                values: x.clone(),
                fingerprint: vocab.fingerprint(),
            },
            vocab,
        )?;
        let predicted = m.predict(&encode(&candidate, vocab)?.values)?;
        let loss = dreaming_loss(predicted, target);
        let accepted = loss <= current_loss;
        epochs.push(DreamEpoch {
            epoch,
            circuit: candidate.serialize(),
            predicted,
            loss,
            energy: labeler.energy(&candidate)?,
            accepted,
        });
        if candidate == current {
            continue;
        }
        if accepted {
            current = candidate;
            current_loss = loss;
        }
        x = fresh(&current, &mut noise)?;
    }
    Ok(DreamTrace {
        n_qubits: c0.n_qubits(),
        target_energy: target,
        epochs,
    })
}

/// `n` distinct indices below `len` drawn without replacement, in draw order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    rand::seq::index::sample(&mut rng(seed), len, n.min(len)).into_vec()
}

/// Dreams every circuit; run `i` uses a seed derived from `cfg.seed` and `i`.
pub fn dream_cohort(
    m: &MlpModel,
    vocab: &Vocabulary,
    circuits: &[Circuit],
    cfg: &DreamConfig,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
) -> Result<Vec<DreamTrace>, DreamError> {
    circuits
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let run_cfg = DreamConfig {
                seed: derive_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            dream_run(m, vocab, c, &run_cfg, h, vqe)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    schema: String,
    run: usize,
    n_qubits: usize,
    target: f64,
    #[serde(flatten)]
    epoch: DreamEpoch,
}

/// One line per epoch per run, in run then epoch order.
pub fn write_traces(mut w: impl Write, traces: &[DreamTrace]) -> Result<(), DreamError> {
    for (run, t) in traces.iter().enumerate() {
        for e in &t.epochs {
            let line = TraceLine {
                schema: TRACE_SCHEMA.into(),
                run,
                n_qubits: t.n_qubits,
                target: t.target_energy,
                epoch: e.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| DreamError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| DreamError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| DreamError::Io(e.to_string()))
}

pub fn read_traces(r: impl BufRead) -> Result<Vec<DreamTrace>, DreamError> {
    let mut traces: Vec<DreamTrace> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let parse = |reason: String| DreamError::Parse { line: i + 1, reason };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: TraceLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if l.schema != TRACE_SCHEMA {
            return Err(parse(format!("unsupported schema `{}`", l.schema)));
        }
        if l.run == traces.len() {
            traces.push(DreamTrace {
                n_qubits: l.n_qubits,
                target_energy: l.target,
                epochs: Vec::new(),
            });
        } else if l.run + 1 != traces.len() {
            return Err(parse(format!("run {} out of order", l.run)));
        }
        traces.last_mut().expect("pushed").epochs.push(l.epoch);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{parse_circuit_string, validate, GatePool};
    use crate::neuralnet::init_model;

    fn setup() -> (MlpModel, Vocabulary, Circuit) {
        let pool = GatePool::ry_cnot();
        let c = parse_circuit_string("RY=0=nop=nop0@CNOT=1=0=nop@RY=2=nop=nop1", 3).unwrap();
        let tokens = ["nop0", "nop1", "nop2"].map(|t| crate::circuit::Param::Var(t.into()));
        let v = crate::encoding::build_vocabulary(&pool, 3, tokens, 5).unwrap();
        let m = init_model(&[v.input_len(), 16, 8, 1], 5).unwrap().bind(&v).unwrap();
        (m, v, c)
    }

    fn quick_vqe() -> VqeConfig {
        VqeConfig {
            restarts: 1,
            max_iterations: 100,
            ..VqeConfig::default()
        }
    }

    #[test]
    fn loss_arithmetic() {
        assert_eq!(dreaming_loss(-8.0, -8.0), 0.0);
        assert_eq!(dreaming_loss(-6.0, -8.0), 4.0);
        let (p, t, h) = (-6.3, -8.0, 1e-6);
        let fd = (dreaming_loss(p + h, t) - dreaming_loss(p - h, t)) / (2.0 * h);
        assert!((fd - dreaming_loss_grad(p, t)).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_and_constant_model_leave_input() {
        let (m, v, c) = setup();
        let x = encode(&c, &v).unwrap();
        let cfg = DreamConfig {
            lr: 0.0,
            ..DreamConfig::default()
        };
        assert_eq!(dream_step(&m, &x, &cfg).unwrap(), x);

        let mut flat = m.clone();
        for w in &mut flat.weights {
            w.fill(0.0);
        }
        assert_eq!(dream_step(&flat, &x, &DreamConfig::default()).unwrap(), x);
    }

    #[test]
    fn small_step_descends() {
        let (m, v, c) = setup();
        let x = encode(&c, &v).unwrap();
        let cfg = DreamConfig::default();
        let before = dreaming_loss(m.predict(&x.values).unwrap(), cfg.target_energy);
        let mut lr = 0.1;
        let mut improved = false;
        for _ in 0..30 {
            let y = dream_step(&m, &x, &DreamConfig { lr, ..cfg.clone() }).unwrap();
            if dreaming_loss(m.predict(&y.values).unwrap(), cfg.target_energy) < before {
                improved = true;
                break;
            }
            lr /= 2.0;
        }
        assert!(improved);
    }

    #[test]
    fn run_is_valid_reproducible_and_frozen() {
        let (m, v, c) = setup();
        let h = HamiltonianSpec::tfim(3, 1.0, 1.0);
        let cfg = DreamConfig {
            lr: 0.5,
            inner_steps: 5,
            outer_epochs: 4,
            seed: 3,
            ..DreamConfig::default()
        };
        let sum = m.checksum();
        let t = dream_run(&m, &v, &c, &cfg, &h, &quick_vqe()).unwrap();
        assert_eq!(m.checksum(), sum);
        assert_eq!(t.epochs.len(), 5);
        assert_eq!(t, dream_run(&m, &v, &c, &cfg, &h, &quick_vqe()).unwrap());
        let pool = v.pool();
        let mut last = f64::INFINITY;
        for e in &t.epochs {
            let dc = parse_circuit_string(&e.circuit, 3).unwrap();
            assert!(validate(&dc, &pool).is_empty());
            assert_eq!(e.loss, dreaming_loss(e.predicted, cfg.target_energy));
            if e.accepted {
                assert!(e.loss <= last);
                last = e.loss;
            }
        }
        let mut buf = Vec::new();
        write_traces(&mut buf, &[t.clone(), t.clone()]).unwrap();
        assert_eq!(read_traces(&buf[..]).unwrap(), vec![t.clone(), t]);
    }

    #[test]
    fn vanishing_lr_never_changes_circuit() {
        let (m, v, c) = setup();
        let cfg = DreamConfig {
            lr: 1e-12,
            inner_steps: 3,
            outer_epochs: 3,
            ..DreamConfig::default()
        };
        let t = dream_run(&m, &v, &c, &cfg, &HamiltonianSpec::tfim(3, 1.0, 1.0), &quick_vqe()).unwrap();
        assert!(t.is_stagnant());
        assert_eq!(t.final_epoch().circuit, c.serialize());
    }

    #[test]
    fn converged_start_records_single_epoch() {
        let (mut m, v, c) = setup();
        for w in &mut m.weights {
            w.fill(0.0);
        }
        for b in &mut m.biases {
            b.fill(0.0);
        }
        let last = m.biases.len() - 1;
        m.biases[last][0] = -8.0;
        let t = dream_run(&m, &v, &c, &DreamConfig::default(), &HamiltonianSpec::tfim(3, 1.0, 1.0), &quick_vqe()).unwrap();
        assert_eq!(t.epochs.len(), 1);
        assert_eq!(t.final_epoch().circuit, c.serialize());
    }

    #[test]
    fn unbound_vocabulary_is_rejected() {
        let (m, _, c) = setup();
        let other = crate::encoding::build_vocabulary(&GatePool::broad(), 3, [], 5).unwrap();
        let err = dream_run(&m, &other, &c, &DreamConfig::default(), &HamiltonianSpec::tfim(3, 1.0, 1.0), &quick_vqe());
        assert!(matches!(err, Err(DreamError::Fingerprint { .. })));
    }
}
