//! Dense statevector simulation and transverse-field Ising energies.
//!
//! Conventions:
//! - Qubit 0 is the least significant bit of a basis index (little-endian).
//! - Rotations are `R_P(a) = exp(-i a/2 P)` for `P` in {X, Y, Z}.
//! - Controlled rotations apply `R_P(a)` to the target when the control is 1.
//! - `XY(a) = exp(-i a/2 (X⊗X + Y⊗Y))`, acting on `target` and `control`.
//! - Two-qubit matrices are indexed by `2·c + t`, with `c` the control bit
//!   and `t` the target bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, GateSpec, Param};

pub type C64 = Complex64;

/// Parameter name → angle in radians.
pub type Binding = BTreeMap<String, f64>;

/// Default qubit cap for dense diagonalization.
pub const DEFAULT_DIAG_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("gate {0} requires a parameter")]
    MissingParameter(Gate),
    #[error("gate {0} does not take a parameter")]
    SuperfluousParameter(Gate),
    #[error("parameter `{0}` is unbound")]
    Unbound(String),
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("expectation has imaginary residue {0:e}")]
    NotReal(f64),
    #[error("{n_qubits} qubits exceeds the dense diagonalization cap of {cap}")]
    CapExceeded { n_qubits: usize, cap: usize },
    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("ground-energy cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub type Mat2 = [[C64; 2]; 2];
pub type Mat4 = [[C64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMatrix {
    One(Mat2),
    Two(Mat4),
}

fn pauli(gate: Gate) -> Mat2 {
    match gate {
        Gate::X | Gate::RX | Gate::CRX | Gate::CNOT => [[ZERO, ONE], [ONE, ZERO]],
        Gate::Y | Gate::RY | Gate::CRY => [[ZERO, -I], [I, ZERO]],
        Gate::Z | Gate::RZ | Gate::CRZ => [[ONE, ZERO], [ZERO, -ONE]],
        _ => [[ONE, ZERO], [ZERO, ONE]],
    }
}

/// `exp(-i a/2 P) = cos(a/2) I - i sin(a/2) P`.
fn rotation(gate: Gate, angle: f64) -> Mat2 {
    let p = pauli(gate);
    let (s, c) = (angle / 2.0).sin_cos();
    let mut m = [[ZERO; 2]; 2];
    for r in 0..2 {
        for k in 0..2 {
            let id = if r == k { c } else { 0.0 };
            m[r][k] = C64::new(id, 0.0) - I * s * p[r][k];
        }
    }
    m
}

/// `d/da exp(-i a/2 P) = -i/2 P exp(-i a/2 P)`.
fn rotation_derivative(gate: Gate, angle: f64) -> Mat2 {
    let p = pauli(gate);
    let (s, c) = (angle / 2.0).sin_cos();
    let mut m = [[ZERO; 2]; 2];
    for r in 0..2 {
        for k in 0..2 {
            let id = if r == k { -s / 2.0 } else { 0.0 };
            m[r][k] = C64::new(id, 0.0) - I * (c / 2.0) * p[r][k];
        }
    }
    m
}

fn controlled(block: Mat2, identity_block: bool) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    if identity_block {
        m[0][0] = ONE;
        m[1][1] = ONE;
    }
    for r in 0..2 {
        for k in 0..2 {
            m[2 + r][2 + k] = block[r][k];
        }
    }
    m
}

/// XY(a) only mixes |01> and |10>: `cos(a) I - i sin(a) σx` on that block.
fn xy(angle: f64) -> Mat4 {
    let (s, c) = angle.sin_cos();
    let mut m = [[ZERO; 4]; 4];
    m[0][0] = ONE;
    m[3][3] = ONE;
    m[1][1] = C64::new(c, 0.0);
    m[2][2] = C64::new(c, 0.0);
    m[1][2] = C64::new(0.0, -s);
    m[2][1] = C64::new(0.0, -s);
    m
}

fn xy_derivative(angle: f64) -> Mat4 {
    let (s, c) = angle.sin_cos();
    let mut m = [[ZERO; 4]; 4];
    m[1][1] = C64::new(-s, 0.0);
    m[2][2] = C64::new(-s, 0.0);
    m[1][2] = C64::new(0.0, -c);
    m[2][1] = C64::new(0.0, -c);
    m
}

/// Unitary for `spec` at angle `theta`; `theta` must be present iff the gate is parametrized.
pub fn gate_matrix(spec: &GateSpec, theta: Option<f64>) -> Result<GateMatrix, SimError> {
    let gate = spec.gate;
    let angle = match (gate.is_parametrized(), theta) {
        (true, Some(a)) => a,
        (true, None) => return Err(SimError::MissingParameter(gate)),
        (false, Some(_)) => return Err(SimError::SuperfluousParameter(gate)),
        (false, None) => 0.0,
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(match gate {
        Gate::NOP => GateMatrix::One([[ONE, ZERO], [ZERO, ONE]]),
        Gate::X | Gate::Y | Gate::Z => GateMatrix::One(pauli(gate)),
        Gate::H => GateMatrix::One([
            [C64::new(h, 0.0), C64::new(h, 0.0)],
            [C64::new(h, 0.0), C64::new(-h, 0.0)],
        ]),
        Gate::RX | Gate::RY | Gate::RZ => GateMatrix::One(rotation(gate, angle)),
        Gate::CNOT => GateMatrix::Two(controlled(pauli(Gate::X), true)),
        Gate::CRX | Gate::CRY | Gate::CRZ => GateMatrix::Two(controlled(rotation(gate, angle), true)),
        Gate::XY => GateMatrix::Two(xy(angle)),
    })
}

/// Derivative of the gate unitary with respect to its angle.
pub(crate) fn gate_derivative(gate: Gate, angle: f64) -> Option<GateMatrix> {
    match gate {
        Gate::RX | Gate::RY | Gate::RZ => Some(GateMatrix::One(rotation_derivative(gate, angle))),
        Gate::CRX | Gate::CRY | Gate::CRZ => Some(GateMatrix::Two(controlled(
            rotation_derivative(gate, angle),
            false,
        ))),
        Gate::XY => Some(GateMatrix::Two(xy_derivative(angle))),
        _ => None,
    }
}

/// Angle carried by `spec` under `binding`, `None` for non-parametrized gates.
pub fn resolve_angle(spec: &GateSpec, binding: &Binding) -> Result<Option<f64>, SimError> {
    match (&spec.param, spec.gate.is_parametrized()) {
        (Param::None, false) => Ok(None),
        (Param::None, true) => Err(SimError::MissingParameter(spec.gate)),
        (_, false) => Err(SimError::SuperfluousParameter(spec.gate)),
        (Param::Fixed(v), true) => Ok(Some(*v)),
        (Param::Var(name), true) => binding
            .get(name)
            .copied()
            .map(Some)
            .ok_or_else(|| SimError::Unbound(name.clone())),
    }
}

/// Normalized complex amplitudes over `2^n` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    /// `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Self { amplitudes }
    }

    /// Wraps amplitudes whose norm is 1 within 1e-10.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self, SimError> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(SimError::Dimension {
                left: len,
                right: len.next_power_of_two(),
            });
        }
        let state = Self { amplitudes };
        let norm = state.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(SimError::NotNormalized(norm));
        }
        Ok(state)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn apply(&mut self, spec: &GateSpec, matrix: &GateMatrix) {
        match matrix {
            GateMatrix::One(m) => apply_one(&mut self.amplitudes, spec.target, m),
            GateMatrix::Two(m) => apply_two(
                &mut self.amplitudes,
                spec.target,
                spec.control.expect("two-qubit gate without second qubit"),
                m,
            ),
        }
    }
}

pub(crate) fn apply_one(amps: &mut [C64], q: usize, m: &Mat2) {
    let bit = 1usize << q;
    for i in 0..amps.len() {
        if i & bit == 0 {
            let j = i | bit;
            let (a0, a1) = (amps[i], amps[j]);
            amps[i] = m[0][0] * a0 + m[0][1] * a1;
            amps[j] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

pub(crate) fn apply_two(amps: &mut [C64], target: usize, control: usize, m: &Mat4) {
    let tb = 1usize << target;
    let cb = 1usize << control;
    for i in 0..amps.len() {
        if i & (tb | cb) == 0 {
            let idx = [i, i | tb, i | cb, i | tb | cb];
            let v = idx.map(|k| amps[k]);
            for (r, &k) in idx.iter().enumerate() {
                amps[k] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
            }
        }
    }
}

pub(crate) fn apply_matrix(amps: &mut [C64], spec: &GateSpec, matrix: &GateMatrix) {
    match matrix {
        GateMatrix::One(m) => apply_one(amps, spec.target, m),
        GateMatrix::Two(m) => apply_two(amps, spec.target, spec.control.unwrap_or(0), m),
    }
}

pub(crate) fn adjoint(matrix: &GateMatrix) -> GateMatrix {
    match matrix {
        GateMatrix::One(m) => {
            let mut a = [[ZERO; 2]; 2];
            for r in 0..2 {
                for k in 0..2 {
                    a[r][k] = m[k][r].conj();
                }
            }
            GateMatrix::One(a)
        }
        GateMatrix::Two(m) => {
            let mut a = [[ZERO; 4]; 4];
            for r in 0..4 {
                for k in 0..4 {
                    a[r][k] = m[k][r].conj();
                }
            }
            GateMatrix::Two(a)
        }
    }
}

/// Prepares `|0…0⟩` and applies every gate of `circuit` in order.
pub fn apply_circuit(circuit: &Circuit, binding: &Binding) -> Result<StateVector, SimError> {
    let mut state = StateVector::zero(circuit.n_qubits());
    for spec in circuit.gates() {
        if spec.gate == Gate::NOP {
            continue;
        }
        let m = gate_matrix(spec, resolve_angle(spec, binding)?)?;
        state.apply(spec, &m);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Open,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        })
    }
}

/// `H = -J (Σ⟨i,j⟩ Z_i Z_j + g Σ_i X_i)` on a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub n_qubits: usize,
    pub j: f64,
    pub g: f64,
    pub boundary: Boundary,
}

impl HamiltonianSpec {
    pub fn tfim(n_qubits: usize, j: f64, g: f64) -> Self {
        Self {
            n_qubits,
            j,
            g,
            boundary: Boundary::Open,
        }
    }

    /// The 6-qubit, J = g = 1, open-chain system used for all datasets.
    pub fn benchmark() -> Self {
        Self::tfim(6, 1.0, 1.0)
    }

    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        let mut bonds: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if self.boundary == Boundary::Periodic && n > 2 {
            bonds.push((n - 1, 0));
        }
        bonds
    }

    fn diagonal(&self, index: usize, bonds: &[(usize, usize)]) -> f64 {
        let zz: f64 = bonds
            .iter()
            .map(|&(a, b)| {
                if ((index >> a) ^ (index >> b)) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .sum();
        -self.j * zz
    }

    /// `H |ψ⟩` as a raw amplitude vector.
    pub fn apply(&self, amps: &[C64]) -> Vec<C64> {
        let bonds = self.bonds();
        let field = -self.j * self.g;
        (0..amps.len())
            .map(|i| {
                let mut acc = amps[i] * self.diagonal(i, &bonds);
                for q in 0..self.n_qubits {
                    acc += amps[i ^ (1 << q)] * field;
                }
                acc
            })
            .collect()
    }

    /// Dense real-symmetric matrix of the Hamiltonian.
    pub fn dense(&self) -> DMatrix<f64> {
        let dim = 1usize << self.n_qubits;
        let bonds = self.bonds();
        let field = -self.j * self.g;
        DMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                self.diagonal(r, &bonds)
            } else if (r ^ c).is_power_of_two() {
                field
            } else {
                0.0
            }
        })
    }
}

/// `⟨ψ|H|ψ⟩`; fails if the imaginary residue exceeds 1e-10.
pub fn tfim_expectation(psi: &StateVector, h: &HamiltonianSpec) -> Result<f64, SimError> {
    let dim = 1usize << h.n_qubits;
    if psi.dim() != dim {
        return Err(SimError::Dimension {
            left: psi.dim(),
            right: dim,
        });
    }
    let h_psi = h.apply(psi.amplitudes());
    let value: C64 = psi
        .amplitudes()
        .iter()
        .zip(&h_psi)
        .map(|(a, b)| a.conj() * b)
        .sum();
    if value.im.abs() > 1e-10 {
        return Err(SimError::NotReal(value.im));
    }
    Ok(value.re)
}

/// Minimum eigenvalue of `h` by dense diagonalization.
pub fn exact_ground_energy(h: &HamiltonianSpec) -> Result<f64, SimError> {
    exact_ground_energy_capped(h, DEFAULT_DIAG_CAP)
}

pub fn exact_ground_energy_capped(h: &HamiltonianSpec, cap: usize) -> Result<f64, SimError> {
    if h.n_qubits > cap {
        return Err(SimError::CapExceeded {
            n_qubits: h.n_qubits,
            cap,
        });
    }
    let eig = h.dense().symmetric_eigenvalues();
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

/// `|⟨a|b⟩|²`.
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64, SimError> {
    if a.dim() != b.dim() {
        return Err(SimError::Dimension {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let overlap: C64 = a
        .amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(overlap.norm_sqr().min(1.0))
}

/// On-disk table of exact ground energies.
///
/// Text format, one entry per line after a `# qdd ground-energy cache v1`
/// header: `<n_qubits> <J> <g> <open|periodic> <energy>`, whitespace
/// separated, floats in shortest round-trip form.
#[derive(Debug)]
pub struct GroundEnergyCache {
    path: PathBuf,
    entries: Vec<(HamiltonianSpec, f64)>,
}

const CACHE_HEADER: &str = "# qdd ground-energy cache v1";

impl GroundEnergyCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let bad = |reason: &str| SimError::Cache {
                    path: path.clone(),
                    reason: format!("line {}: {reason}", lineno + 1),
                };
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(bad("expected 5 fields"));
                }
                let boundary = match f[3] {
                    "open" => Boundary::Open,
                    "periodic" => Boundary::Periodic,
                    _ => return Err(bad("unknown boundary")),
                };
                let spec = HamiltonianSpec {
                    n_qubits: f[0].parse().map_err(|_| bad("bad qubit count"))?,
                    j: f[1].parse().map_err(|_| bad("bad J"))?,
                    g: f[2].parse().map_err(|_| bad("bad g"))?,
                    boundary,
                };
                let energy = f[4].parse().map_err(|_| bad("bad energy"))?;
                entries.push((spec, energy));
            }
        }
        Ok(Self { path, entries })
    }

    pub fn lookup(&self, h: &HamiltonianSpec) -> Option<f64> {
        self.entries.iter().find(|(s, _)| s == h).map(|(_, e)| *e)
    }

    /// Cached energy, computing and persisting it on a miss.
    pub fn get_or_compute(&mut self, h: &HamiltonianSpec) -> Result<f64, SimError> {
        if let Some(e) = self.lookup(h) {
            return Ok(e);
        }
        let e = exact_ground_energy(h)?;
        self.entries.push((*h, e));
        self.save()?;
        Ok(e)
    }

    fn save(&self) -> Result<(), SimError> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut text = String::from(CACHE_HEADER);
        text.push('\n');
        for (s, e) in &self.entries {
            text.push_str(&format!(
                "{} {} {} {} {}\n",
                s.n_qubits, s.j, s.g, s.boundary, e
            ));
        }
        fs::write(&self.path, text)?;
        Ok(())
    }
}
