//! Multi-hot circuit encoding.
//!
//! Layout (slot-major): the vector holds `max_gates` slots of equal width.
//! Each slot is four one-hot sub-segments in this order:
//!
//! 1. gate: pool gates in pool order, then `NOP`
//! 2. target: qubits `0..n`
//! 3. control: qubits `0..n`, then `nop`
//! 4. param: parameter tokens in insertion order, then `nop`
//!
//! A gate without a parameter leaves the param sub-segment all zero, so the
//! trailing `nop` position of that sub-segment is never hot. Slots past the
//! last gate are all zero.
//!
//! A slot counts as occupied when its gate, target and control sub-segments
//! all peak above a threshold: the midpoint between the largest and smallest
//! entry of the vector, raised to the largest runner-up of any sub-segment
//! when that is higher. Under additive noise of width below one the runner-ups
//! are all cold, so occupied slots always clear the threshold. Decoding then
//! takes the argmax of each
//! sub-segment (lowest index on ties) restricted to choices that keep the
//! circuit valid for the vocabulary's pool and connectivity. Slots whose gate
//! is `NOP` are dropped; a vector with no remaining gates decodes to the
//! canonical identity circuit.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::{Circuit, Connectivity, Gate, GatePool, GateSpec, Param, NOP_TOKEN};
use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("gate pool is empty")]
    EmptyPool,
    #[error("max_gates must be positive")]
    ZeroSlots,
    #[error("circuit has {gates} gates but the vocabulary holds {max_gates} slots")]
    TooManyGates { gates: usize, max_gates: usize },
    #[error("circuit acts on {circuit} qubits, vocabulary on {vocab}")]
    QubitMismatch { circuit: usize, vocab: usize },
    #[error("gate {0} is not in the vocabulary")]
    UnknownGate(Gate),
    #[error("parameter token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("gate {0} has no parameter to encode")]
    MissingParameter(Gate),
    #[error("vector length {found} does not match layout length {expected}")]
    Length { found: usize, expected: usize },
    #[error("vector was produced by a different vocabulary")]
    Fingerprint,
    #[error("noise bounds must satisfy 0 <= lower <= upper (got {lower}, {upper})")]
    NoiseBounds { lower: f64, upper: f64 },
}

/// The four index dictionaries plus slot count and connectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    gates: Vec<Gate>,
    n_qubits: usize,
    param_tokens: Vec<String>,
    max_gates: usize,
    connectivity: Connectivity,
}

/// Offsets of the four sub-segments within a slot.
#[derive(Debug, Clone, Copy)]
struct SlotLayout {
    gate: usize,
    target: usize,
    control: usize,
    param: usize,
    width: usize,
}

impl Vocabulary {
    pub fn gate_dim(&self) -> usize {
        self.gates.len()
    }

    pub fn target_dim(&self) -> usize {
        self.n_qubits
    }

    pub fn control_dim(&self) -> usize {
        self.n_qubits + 1
    }

    pub fn param_dim(&self) -> usize {
        self.param_tokens.len() + 1
    }

    pub fn segment_width(&self) -> usize {
        self.gate_dim() + self.target_dim() + self.control_dim() + self.param_dim()
    }

    pub fn max_gates(&self) -> usize {
        self.max_gates
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn input_len(&self) -> usize {
        self.max_gates * self.segment_width()
    }

    /// Gate dictionary in index order; `NOP` is last.
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Parameter dictionary in index order, excluding the trailing `nop`.
    pub fn param_tokens(&self) -> &[String] {
        &self.param_tokens
    }

    pub fn gate_index(&self, gate: Gate) -> Option<usize> {
        self.gates.iter().position(|g| *g == gate)
    }

    pub fn control_index(&self, control: Option<usize>) -> usize {
        control.unwrap_or(self.n_qubits)
    }

    pub fn param_index(&self, token: &str) -> Option<usize> {
        if token == NOP_TOKEN {
            return Some(self.param_tokens.len());
        }
        self.param_tokens.iter().position(|t| t == token)
    }

    pub fn pool(&self) -> GatePool {
        GatePool::new(
            self.gates.iter().copied().filter(|g| *g != Gate::NOP).collect(),
            self.connectivity,
        )
    }

    fn layout(&self) -> SlotLayout {
        let gate = 0;
        let target = gate + self.gate_dim();
        let control = target + self.target_dim();
        let param = control + self.control_dim();
        SlotLayout {
            gate,
            target,
            control,
            param,
            width: param + self.param_dim(),
        }
    }

    /// Human-readable, exact description of the vector layout.
    pub fn layout_description(&self) -> String {
        let gates: Vec<String> = self
            .gates
            .iter()
            .map(|g| if *g == Gate::NOP { NOP_TOKEN.to_string() } else { g.name().to_string() })
            .collect();
        let conn = match self.connectivity {
            Connectivity::AllToAll => "all-to-all".to_string(),
            Connectivity::NearestNeighbor { max_distance } => format!("nearest-neighbor({max_distance})"),
        };
        format!(
            "qdd-multihot-v1; slot-major; slots={}; width={}; order=gate|target|control|param; \
             gate=[{}]; target=[q0..q{}]; control=[q0..q{},nop]; param=[{}{}nop]; \
             absent-param=all-zero; padding=all-zero; connectivity={}",
            self.max_gates,
            self.segment_width(),
            gates.join(","),
            self.n_qubits.saturating_sub(1),
            self.n_qubits.saturating_sub(1),
            self.param_tokens.join(","),
            if self.param_tokens.is_empty() { "" } else { "," },
            conn,
        )
    }

    /// SHA-256 of [`Self::layout_description`], hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.layout_description().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Token set and slot count sufficient for `circuits`.
    pub fn for_circuits<'a>(
        pool: &GatePool,
        n_qubits: usize,
        circuits: impl IntoIterator<Item = &'a Circuit>,
    ) -> Result<Vocabulary, EncodingError> {
        let mut tokens = Vec::new();
        let mut max_gates = 0;
        for c in circuits {
            max_gates = max_gates.max(c.len());
            tokens.extend(c.gates().iter().map(|g| g.param.clone()));
        }
        build_vocabulary(pool, n_qubits, tokens, max_gates)
    }
}

/// Builds the four dictionaries: gates in pool order then `NOP`, qubits in
/// order, and parameter tokens in insertion order (duplicates and `nop`
/// skipped).
pub fn build_vocabulary(
    pool: &GatePool,
    n_qubits: usize,
    param_tokens: impl IntoIterator<Item = Param>,
    max_gates: usize,
) -> Result<Vocabulary, EncodingError> {
    if pool.allowed.is_empty() {
        return Err(EncodingError::EmptyPool);
    }
    if max_gates == 0 {
        return Err(EncodingError::ZeroSlots);
    }
    let mut gates = pool.allowed.clone();
    gates.push(Gate::NOP);
    let mut tokens: Vec<String> = Vec::new();
    for p in param_tokens {
        if p == Param::None {
            continue;
        }
        let t = p.token();
        if !tokens.contains(&t) {
            tokens.push(t);
        }
    }
    Ok(Vocabulary {
        gates,
        n_qubits,
        param_tokens: tokens,
        max_gates,
        connectivity: pool.connectivity,
    })
}

/// Continuous circuit representation bound to the vocabulary that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHotVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
}

impl MultiHotVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-hot encodes every gate into its slot; remaining slots stay zero.
pub fn encode(circuit: &Circuit, vocab: &Vocabulary) -> Result<MultiHotVector, EncodingError> {
    if circuit.n_qubits() != vocab.n_qubits {
        return Err(EncodingError::QubitMismatch {
            circuit: circuit.n_qubits(),
            vocab: vocab.n_qubits,
        });
    }
    if circuit.len() > vocab.max_gates {
        return Err(EncodingError::TooManyGates {
            gates: circuit.len(),
            max_gates: vocab.max_gates,
        });
    }
    let layout = vocab.layout();
    let mut values = vec![0.0; vocab.input_len()];
    for (slot, g) in circuit.gates().iter().enumerate() {
        let base = slot * layout.width;
        let gi = vocab.gate_index(g.gate).ok_or(EncodingError::UnknownGate(g.gate))?;
        values[base + layout.gate + gi] = 1.0;
        values[base + layout.target + g.target] = 1.0;
        values[base + layout.control + vocab.control_index(g.control)] = 1.0;
        match (&g.param, g.gate.is_parametrized()) {
            (Param::None, true) => return Err(EncodingError::MissingParameter(g.gate)),
            (Param::None, false) => {}
            (p, _) => {
                let token = p.token();
                let pi = vocab
                    .param_index(&token)
                    .filter(|i| *i < vocab.param_tokens.len())
                    .ok_or(EncodingError::UnknownToken(token))?;
                values[base + layout.param + pi] = 1.0;
            }
        }
    }
    Ok(MultiHotVector {
        values,
        fingerprint: vocab.fingerprint(),
    })
}

/// Adds independent `U[lower, upper]` noise to every entry.
pub fn inject_noise<R: Rng + ?Sized>(
    x: &MultiHotVector,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<MultiHotVector, EncodingError> {
    if !(0.0 <= lower && lower <= upper) || !upper.is_finite() {
        return Err(EncodingError::NoiseBounds { lower, upper });
    }
    let mut values = x.values.clone();
    add_uniform_noise(&mut values, lower, upper, rng);
    Ok(MultiHotVector {
        values,
        fingerprint: x.fingerprint.clone(),
    })
}

/// In-place form of [`inject_noise`] without bound checks; draws one value
/// per entry in index order.
pub fn add_uniform_noise<R: Rng + ?Sized>(values: &mut [f64], lower: f64, upper: f64, rng: &mut R) {
    for v in values {
        *v += rng.random_range(lower..=upper);
    }
}

pub fn inject_noise_seeded(
    x: &MultiHotVector,
    lower: f64,
    upper: f64,
    seed: u64,
) -> Result<MultiHotVector, EncodingError> {
    inject_noise(x, lower, upper, &mut seeding::rng(seed))
}

/// Index of the first maximum among `candidates`.
fn argmax(values: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in candidates {
        let v = values[i];
        match best {
            Some((_, b)) if !(v > b) => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn second_largest(seg: &[f64]) -> f64 {
    let mut top = [f64::NEG_INFINITY; 2];
    for &v in seg {
        if v > top[0] {
            top = [v, top[0]];
        } else if v > top[1] {
            top[1] = v;
        }
    }
    top[1]
}

/// Decodes a vector produced by (or shaped like) [`encode`].
pub fn decode(x: &MultiHotVector, vocab: &Vocabulary) -> Result<Circuit, EncodingError> {
    if x.fingerprint != vocab.fingerprint() {
        return Err(EncodingError::Fingerprint);
    }
    decode_values(&x.values, vocab)
}

/// [`decode`] on raw values, checking only the length.
pub fn decode_values(values: &[f64], vocab: &Vocabulary) -> Result<Circuit, EncodingError> {
    if values.len() != vocab.input_len() {
        return Err(EncodingError::Length {
            found: values.len(),
            expected: vocab.input_len(),
        });
    }
    let n = vocab.n_qubits;
    let identity = || Circuit::identity(n);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi - lo >= 0.5) {
        return Ok(identity());
    }
    let layout = vocab.layout();
    // Below a sub-segment maximum every entry of a noisy encoding is cold, so
    // the largest runner-up bounds the cold level from below.
    let runner_up = values
        .chunks_exact(layout.width)
        .flat_map(|slot| {
            [
                &slot[layout.gate..layout.target],
                &slot[layout.target..layout.control],
                &slot[layout.control..layout.param],
                &slot[layout.param..layout.width],
            ]
        })
        .map(second_largest)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = (0.5 * (hi + lo)).max(runner_up);

    let has_tokens = !vocab.param_tokens.is_empty();
    let pair_exists = (0..n).any(|a| (0..n).any(|b| vocab.connectivity.allows(a, b)));
    let feasible: Vec<usize> = vocab
        .gates
        .iter()
        .enumerate()
        .filter(|(_, g)| (has_tokens || !g.is_parametrized()) && (pair_exists || !g.is_two_qubit()))
        .map(|(i, _)| i)
        .collect();

    let mut gates = Vec::new();
    for slot in values.chunks_exact(layout.width) {
        let gate_seg = &slot[layout.gate..layout.target];
        // An occupied slot has a hot entry in each of these three sub-segments.
        let seg_max = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let occupancy = seg_max(gate_seg)
            .min(seg_max(&slot[layout.target..layout.control]))
            .min(seg_max(&slot[layout.control..layout.param]));
        if !(occupancy > threshold) {
            continue;
        }
        let Some(gi) = argmax(gate_seg, feasible.iter().copied()) else {
            continue;
        };
        let gate = vocab.gates[gi];
        if gate == Gate::NOP {
            continue;
        }
        let target_seg = &slot[layout.target..layout.control];
        let candidates = (0..n).filter(|&t| !gate.is_two_qubit() || (0..n).any(|c| vocab.connectivity.allows(t, c)));
        let Some(target) = argmax(target_seg, candidates) else {
            continue;
        };
        let control = if gate.is_two_qubit() {
            let control_seg = &slot[layout.control..layout.param];
            argmax(control_seg, (0..n).filter(|&c| vocab.connectivity.allows(target, c)))
        } else {
            None
        };
        let param = if gate.is_parametrized() {
            let param_seg = &slot[layout.param..layout.width];
            let pi = argmax(param_seg, 0..vocab.param_tokens.len()).expect("tokens present");
            Param::from_token(&vocab.param_tokens[pi]).expect("vocabulary tokens are valid")
        } else {
            Param::None
        };
        gates.push(GateSpec::new(gate, target, control, param));
    }
    if gates.is_empty() {
        return Ok(identity());
    }
    Ok(Circuit::new(n, gates).expect("decoded gates respect the vocabulary"))
}
