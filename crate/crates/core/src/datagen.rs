//! Labeled circuit datasets: random generation, mean-field prefixes,
//! recycling, and line-delimited JSON storage.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    parse_circuit_string, validate, Circuit, CircuitError, Gate, GatePool, GateSpec,
    Param,
};
use crate::seeding::child_rng;
use crate::simulator::{Binding, HamiltonianSpec, SimError};
use crate::vqe::{minimize_energy, VqeConfig};

pub const DATASET_SCHEMA: &str = "qdd-dataset-v1";

/// Fixed mean-field rotation angles for the six-qubit chain at `J = g = 1`.
pub const FIXED_MF_ANGLES: [f64; 6] = [
    0.8766386666903253,
    0.587783873106211,
    0.5334355932535123,
    0.5334355932535123,
    0.5877838731062109,
    0.8766386666903251,
];

/// Energy of the fixed mean-field circuit.
pub const MEAN_FIELD_ENERGY: f64 = -6.902497;

/// Prefix used for generated free-parameter names.
pub const PARAM_PREFIX: &str = "nop";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("mean-field circuit is only defined for 6 qubits (got {0})")]
    UnsupportedQubits(usize),
    #[error("moments {moments} not in range {range:?}")]
    MomentOutOfRange { moments: usize, range: Vec<usize> },
    #[error("record {index} cannot be split into a mean-field prefix and suffix: {reason}")]
    NotDecomposable { index: usize, reason: String },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unsupported schema `{found}`")]
    Schema { line: usize, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfMode {
    None,
    Relaxed,
    Fixed,
}

impl std::str::FromStr for MfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(MfMode::None),
            "relaxed" => Ok(MfMode::Relaxed),
            "fixed" => Ok(MfMode::Fixed),
            other => Err(format!("unknown mean-field mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub size: usize,
    pub n_qubits: usize,
    pub moment_range: Vec<usize>,
    pub gate_pool: GatePool,
    /// Probabilities of (identity, one-qubit gate, two-qubit gate) per free qubit.
    pub gate_ratios: [f64; 3],
    pub mf_mode: MfMode,
    pub seed: u64,
}

pub const BROAD_RATIOS: [f64; 3] = [0.1, 0.45, 0.45];
pub const TARGETED_RATIOS: [f64; 3] = [0.2, 0.4, 0.4];

impl DatasetSpec {
    pub fn check(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.size == 0 {
            return bad("size must be positive");
        }
        if self.n_qubits == 0 {
            return bad("n_qubits must be positive");
        }
        if self.moment_range.is_empty() || self.moment_range.contains(&0) {
            return bad("moment_range must be non-empty and positive");
        }
        if self.gate_ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("gate ratios must be non-negative");
        }
        if (self.gate_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("gate ratios must sum to 1");
        }
        if self.gate_pool.allowed.is_empty() {
            return bad("gate pool is empty");
        }
        if self.mf_mode != MfMode::None && self.n_qubits != 6 {
            return Err(DatagenError::UnsupportedQubits(self.n_qubits));
        }
        Ok(())
    }

    /// Broad-distribution small dataset: 5000 circuits, 4 to 8 moments.
    pub fn broad(name: &str, mf_mode: MfMode, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            size: 5000,
            n_qubits: 6,
            moment_range: vec![4, 5, 6, 7, 8],
            gate_pool: GatePool::broad(),
            gate_ratios: BROAD_RATIOS,
            mf_mode,
            seed,
        }
    }

    pub fn a_s(seed: u64) -> Self {
        Self::broad("A_s", MfMode::None, seed)
    }

    pub fn b_s(seed: u64) -> Self {
        Self::broad("B_s", MfMode::Relaxed, seed)
    }

    pub fn c_s(seed: u64) -> Self {
        Self::broad("C_s", MfMode::Fixed, seed)
    }

    /// Same structure with the record count scaled (at least one record).
    /// The moment cycle is preserved so counts per moment differ by at most one.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            size: ((self.size as f64 * factor).round() as usize).max(1),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetedSet {
    RyCnot,
    XyY,
}

impl TargetedSet {
    pub fn spec(self, seed: u64) -> DatasetSpec {
        match self {
            TargetedSet::RyCnot => DatasetSpec {
                name: "ry_cnot".into(),
                size: 3000,
                n_qubits: 6,
                moment_range: vec![4, 5, 6],
                gate_pool: GatePool::ry_cnot(),
                gate_ratios: TARGETED_RATIOS,
                mf_mode: MfMode::None,
                seed,
            },
            TargetedSet::XyY => DatasetSpec {
                name: "xy_y".into(),
                size: 2000,
                n_qubits: 6,
                moment_range: vec![4, 5],
                gate_pool: GatePool::xy_y(),
                gate_ratios: TARGETED_RATIOS,
                mf_mode: MfMode::None,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub circuit: String,
    pub n_qubits: usize,
    pub energy: f64,
    pub params: Binding,
    pub provenance: Provenance,
}

impl DatasetRecord {
    pub fn parse(&self) -> Result<Circuit, CircuitError> {
        parse_circuit_string(&self.circuit, self.n_qubits)
    }
}

fn param_name(k: usize) -> Param {
    Param::Var(format!("{PARAM_PREFIX}{k}"))
}

/// Random gate layer sequence; free parameters are named from `param_offset`.
///
/// Within each moment qubits are scanned in order. Every qubit not yet used
/// in the moment draws identity, a one-qubit gate or a two-qubit gate; a
/// two-qubit gate takes a random free partner allowed by the connectivity
/// and falls back to a one-qubit gate when there is none. If no gate of a
/// moment lands on the current critical path, a one-qubit gate is placed on
/// a critical qubit so the greedy depth grows by exactly one per moment.
pub fn random_gates<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    moments: usize,
    param_offset: usize,
    rng: &mut R,
) -> Vec<GateSpec> {
    let n = spec.n_qubits;
    let one_q = spec.gate_pool.one_qubit_gates();
    let two_q = spec.gate_pool.two_qubit_gates();
    let [p_id, p_one, _] = spec.gate_ratios;
    let force = p_id < 1.0;
    let mut next_param = param_offset;
    let mut depth = vec![0usize; n];
    let mut gates = Vec::new();

    let mut place = |gate: Gate, target: usize, control: Option<usize>, depth: &mut Vec<usize>, gates: &mut Vec<GateSpec>| {
        let param = if gate.is_parametrized() {
            next_param += 1;
            param_name(next_param - 1)
        } else {
            Param::None
        };
        let spec = GateSpec::new(gate, target, control, param);
        let layer = spec.support().map(|q| depth[q]).max().unwrap_or(0) + 1;
        for q in spec.support() {
            depth[q] = layer;
        }
        gates.push(spec);
        layer
    };

    for moment in 1..=moments {
        let mut used = vec![false; n];
        let mut reached = false;
        for q in 0..n {
            if used[q] {
                continue;
            }
            used[q] = true;
            let r: f64 = rng.random();
            if r < p_id {
                continue;
            }
            let mut want_two = r >= p_id + p_one;
            if one_q.is_empty() {
                want_two = true;
            }
            if want_two && !two_q.is_empty() {
                let partners: Vec<usize> = (0..n)
                    .filter(|&p| !used[p] && spec.gate_pool.connectivity.allows(q, p))
                    .collect();
                if let Some(&p) = partners.choose(rng) {
                    used[p] = true;
                    let gate = *two_q.choose(rng).expect("non-empty");
                    let (t, c) = if rng.random_bool(0.5) { (q, p) } else { (p, q) };
                    reached |= place(gate, t, Some(c), &mut depth, &mut gates) >= moment;
                    continue;
                }
            }
            if let Some(&gate) = one_q.choose(rng) {
                reached |= place(gate, q, None, &mut depth, &mut gates) >= moment;
            }
        }
        if force && !reached {
            let critical: Vec<usize> = (0..n).filter(|&q| depth[q] == moment - 1).collect();
            let q = *critical.choose(rng).expect("some qubit is on the critical path");
            if let Some(&gate) = one_q.choose(rng) {
                place(gate, q, None, &mut depth, &mut gates);
            } else if let Some(&gate) = two_q.choose(rng) {
                let partners: Vec<usize> = (0..n)
                    .filter(|&p| p != q && spec.gate_pool.connectivity.allows(q, p))
                    .collect();
                if let Some(&p) = partners.choose(rng) {
                    place(gate, q, Some(p), &mut depth, &mut gates);
                }
            }
        }
    }
    gates
}

/// A random circuit with `moments` layers; an all-identity draw yields the
/// canonical identity circuit.
pub fn random_circuit<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    moments: usize,
    rng: &mut R,
) -> Result<Circuit, DatagenError> {
    spec.check()?;
    if !spec.moment_range.contains(&moments) {
        return Err(DatagenError::MomentOutOfRange {
            moments,
            range: spec.moment_range.clone(),
        });
    }
    let gates = random_gates(spec, moments, 0, rng);
    Ok(assemble(spec.n_qubits, gates))
}

fn assemble(n_qubits: usize, gates: Vec<GateSpec>) -> Circuit {
    if gates.is_empty() {
        Circuit::identity(n_qubits)
    } else {
        Circuit::new(n_qubits, gates).expect("generated gates are in range")
    }
}

fn mf_gates(mode: MfMode, n_qubits: usize) -> Result<Vec<GateSpec>, DatagenError> {
    if n_qubits != 6 {
        return Err(DatagenError::UnsupportedQubits(n_qubits));
    }
    Ok(match mode {
        MfMode::None => Vec::new(),
        MfMode::Relaxed => (0..6).map(|q| GateSpec::rotation(Gate::RY, q, param_name(q))).collect(),
        MfMode::Fixed => FIXED_MF_ANGLES
            .iter()
            .enumerate()
            .map(|(q, a)| GateSpec::rotation(Gate::RY, q, Param::Fixed(*a)))
            .collect(),
    })
}

/// Single layer of RY rotations: free (`Relaxed`) or at the mean-field
/// angles (`Fixed`).
pub fn mean_field_circuit(mode: MfMode, n_qubits: usize) -> Result<Circuit, DatagenError> {
    if mode == MfMode::None {
        return Err(DatagenError::InvalidSpec("mean-field mode must be Relaxed or Fixed".into()));
    }
    Ok(Circuit::new(n_qubits, mf_gates(mode, n_qubits)?)?)
}

fn mf_param_count(mode: MfMode) -> usize {
    if mode == MfMode::Relaxed {
        6
    } else {
        0
    }
}

/// Circuit for record `index` of `spec`, before labeling.
pub fn dataset_circuit(spec: &DatasetSpec, index: usize) -> Result<Circuit, DatagenError> {
    spec.check()?;
    let moments = spec.moment_range[index % spec.moment_range.len()];
    let mut rng = child_rng(spec.seed, index as u64);
    let mut gates = if spec.mf_mode == MfMode::None {
        Vec::new()
    } else {
        mf_gates(spec.mf_mode, spec.n_qubits)?
    };
    gates.extend(random_gates(spec, moments, mf_param_count(spec.mf_mode), &mut rng));
    Ok(assemble(spec.n_qubits, gates))
}

fn label(
    circuit: &Circuit,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
    provenance: Provenance,
) -> Result<DatasetRecord, DatagenError> {
    let l = minimize_energy(circuit, h, &vqe.keyed_to(circuit))?;
    Ok(DatasetRecord {
        circuit: circuit.serialize(),
        n_qubits: circuit.n_qubits(),
        energy: l.energy,
        params: l.best_params,
        provenance,
    })
}

/// Generates and labels `spec.size` circuits; moments cycle over
/// `moment_range`. Output order is the index order.
pub fn build_dataset(
    spec: &DatasetSpec,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
) -> Result<Vec<DatasetRecord>, DatagenError> {
    spec.check()?;
    (0..spec.size)
        .into_par_iter()
        .map(|i| {
            let c = dataset_circuit(spec, i)?;
            debug_assert!(validate(&c, &spec.gate_pool).is_empty());
            label(
                &c,
                h,
                vqe,
                Provenance {
                    source: spec.name.clone(),
                    seed: spec.seed,
                    index: i,
                },
            )
        })
        .collect()
}

/// Splits off a leading mean-field layer (relaxed or fixed) if present.
pub fn split_mf_prefix(circuit: &Circuit) -> (MfMode, &[GateSpec]) {
    let g = circuit.gates();
    if circuit.n_qubits() != 6 || g.len() < 6 {
        return (MfMode::None, g);
    }
    for mode in [MfMode::Relaxed, MfMode::Fixed] {
        let prefix = mf_gates(mode, 6).expect("six qubits");
        if g[..6] == prefix[..] {
            return (mode, &g[6..]);
        }
    }
    (MfMode::None, g)
}

/// Renames free parameters in first-appearance order to consecutive
/// generated names starting at `offset`.
fn renumber(gates: &[GateSpec], offset: usize) -> Vec<GateSpec> {
    let mut map: BTreeMap<String, Param> = BTreeMap::new();
    gates
        .iter()
        .map(|g| {
            let mut g = g.clone();
            if let Param::Var(name) = &g.param {
                let next = offset + map.len();
                g.param = map.entry(name.clone()).or_insert_with(|| param_name(next)).clone();
            }
            g
        })
        .collect()
}

/// Replaces each circuit's mean-field prefix by `new_mode` and relabels.
pub fn recycle_dataset(
    records: &[DatasetRecord],
    new_mode: MfMode,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
    source: &str,
) -> Result<Vec<DatasetRecord>, DatagenError> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let c = r.parse().map_err(|e| DatagenError::NotDecomposable {
                index: i,
                reason: e.to_string(),
            })?;
            if new_mode != MfMode::None && c.n_qubits() != 6 {
                return Err(DatagenError::NotDecomposable {
                    index: i,
                    reason: format!("{} qubits", c.n_qubits()),
                });
            }
            let (_, suffix) = split_mf_prefix(&c);
            let suffix: Vec<GateSpec> = suffix.iter().filter(|g| g.gate != Gate::NOP).cloned().collect();
            let mut gates = if new_mode == MfMode::None {
                Vec::new()
            } else {
                mf_gates(new_mode, 6)?
            };
            gates.extend(renumber(&suffix, mf_param_count(new_mode)));
            let out = assemble(c.n_qubits(), gates);
            label(
                &out,
                h,
                vqe,
                Provenance {
                    source: source.to_string(),
                    seed: r.provenance.seed,
                    index: i,
                },
            )
        })
        .collect()
}

pub fn targeted_dataset(
    set: TargetedSet,
    seed: u64,
    scale: f64,
    h: &HamiltonianSpec,
    vqe: &VqeConfig,
) -> Result<Vec<DatasetRecord>, DatagenError> {
    build_dataset(&set.spec(seed).scaled(scale), h, vqe)
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    schema: std::borrow::Cow<'a, str>,
    #[serde(flatten)]
    record: std::borrow::Cow<'a, DatasetRecord>,
}

pub fn write_records(mut w: impl Write, records: &[DatasetRecord]) -> std::io::Result<()> {
    for r in records {
        let line = Line {
            schema: DATASET_SCHEMA.into(),
            record: std::borrow::Cow::Borrowed(r),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_records(r: impl BufRead) -> Result<Vec<DatasetRecord>, DatagenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DatagenError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| DatagenError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if parsed.schema != DATASET_SCHEMA {
            return Err(DatagenError::Schema {
                line: i + 1,
                found: parsed.schema.into_owned(),
            });
        }
        out.push(parsed.record.into_owned());
    }
    Ok(out)
}

fn io_err(path: &Path, e: std::io::Error) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<(), DatagenError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_records(BufWriter::new(f), records).map_err(|e| io_err(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatagenError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_records(BufReader::new(f))
}
