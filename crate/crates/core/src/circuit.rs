//! Discrete circuit representation and the circuit-string grammar.
//!
//! A circuit string is a sequence of `gate=target=control=param` records
//! joined by `@`. The literal `nop` marks an absent control or parameter.
//! A parameter token that parses as a finite float is a fixed angle in
//! radians; any other token (for example `nop3`) names a free parameter
//! that is bound at VQE time.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder token for an absent control qubit or parameter.
pub const NOP_TOKEN: &str = "nop";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("empty circuit string")]
    Empty,
    #[error("record {index} `{record}`: expected 4 '='-separated fields, found {found}")]
    FieldCount {
        index: usize,
        record: String,
        found: usize,
    },
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("invalid qubit token `{0}`")]
    BadQubit(String),
    #[error("gate {gate}: qubit {qubit} out of range for {n_qubits} qubits")]
    QubitOutOfRange {
        gate: Gate,
        qubit: usize,
        n_qubits: usize,
    },
    #[error("one-qubit gate {0} cannot take a control qubit")]
    UnexpectedControl(Gate),
    #[error("two-qubit gate {0} requires a control qubit")]
    MissingControl(Gate),
    #[error("gate {0}: control equals target")]
    ControlIsTarget(Gate),
    #[error("non-parametrized gate {0} cannot take a parameter")]
    UnexpectedParam(Gate),
    #[error("invalid parameter name `{0}`")]
    BadParamName(String),
    #[error("circuit must act on at least one qubit")]
    NoQubits,
}

/// Gate identifiers available to circuit pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    X,
    Y,
    Z,
    H,
    RX,
    RY,
    RZ,
    CNOT,
    CRX,
    CRY,
    CRZ,
    /// Two-qubit `exp(-i a/2 (X⊗X + Y⊗Y))`.
    XY,
    /// Identity placeholder.
    NOP,
}

impl Gate {
    pub const ALL: [Gate; 13] = [
        Gate::X,
        Gate::Y,
        Gate::Z,
        Gate::H,
        Gate::RX,
        Gate::RY,
        Gate::RZ,
        Gate::CNOT,
        Gate::CRX,
        Gate::CRY,
        Gate::CRZ,
        Gate::XY,
        Gate::NOP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gate::X => "X",
            Gate::Y => "Y",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::RX => "RX",
            Gate::RY => "RY",
            Gate::RZ => "RZ",
            Gate::CNOT => "CNOT",
            Gate::CRX => "CRX",
            Gate::CRY => "CRY",
            Gate::CRZ => "CRZ",
            Gate::XY => "XY",
            Gate::NOP => "NOP",
        }
    }

    pub fn is_parametrized(self) -> bool {
        matches!(
            self,
            Gate::RX | Gate::RY | Gate::RZ | Gate::CRX | Gate::CRY | Gate::CRZ | Gate::XY
        )
    }

    pub fn is_two_qubit(self) -> bool {
        matches!(
            self,
            Gate::CNOT | Gate::CRX | Gate::CRY | Gate::CRZ | Gate::XY
        )
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gate {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Gate::ALL
            .iter()
            .copied()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CircuitError::UnknownGate(s.to_string()))
    }
}

/// Gate parameter slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Param {
    None,
    /// Named free parameter, bound at evaluation time.
    Var(String),
    /// Literal angle in radians.
    Fixed(f64),
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Param::None, Param::None) => true,
            (Param::Var(a), Param::Var(b)) => a == b,
            (Param::Fixed(a), Param::Fixed(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Param {}

impl Param {
    /// Parses a parameter field of a circuit-string record.
    pub fn from_token(token: &str) -> Result<Param, CircuitError> {
        if token == NOP_TOKEN {
            return Ok(Param::None);
        }
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Param::Fixed(v)),
            _ => Param::var(token),
        }
    }

    /// Builds a named free parameter, rejecting names the grammar cannot carry.
    pub fn var(name: &str) -> Result<Param, CircuitError> {
        let bad = name.is_empty()
            || name == NOP_TOKEN
            || matches!(name.parse::<f64>(), Ok(v) if v.is_finite())
            || name.contains(['=', '@'])
            || name.chars().any(char::is_whitespace);
        if bad {
            Err(CircuitError::BadParamName(name.to_string()))
        } else {
            Ok(Param::Var(name.to_string()))
        }
    }

    pub fn token(&self) -> String {
        match self {
            Param::None => NOP_TOKEN.to_string(),
            Param::Var(name) => name.clone(),
            // `{}` on f64 prints the shortest string that parses back to the same bits.
            Param::Fixed(v) => format!("{v}"),
        }
    }
}

/// One gate application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSpec {
    pub gate: Gate,
    pub target: usize,
    /// Control qubit for controlled gates; second qubit for `XY`.
    pub control: Option<usize>,
    pub param: Param,
}

impl GateSpec {
    pub fn new(gate: Gate, target: usize, control: Option<usize>, param: Param) -> Self {
        Self {
            gate,
            target,
            control,
            param,
        }
    }

    pub fn one(gate: Gate, target: usize) -> Self {
        Self::new(gate, target, None, Param::None)
    }

    pub fn rotation(gate: Gate, target: usize, param: Param) -> Self {
        Self::new(gate, target, None, param)
    }

    pub fn two(gate: Gate, target: usize, control: usize, param: Param) -> Self {
        Self::new(gate, target, Some(control), param)
    }

    /// Qubits touched by this gate.
    pub fn support(&self) -> impl Iterator<Item = usize> {
        std::iter::once(self.target).chain(self.control)
    }

    pub fn check(&self, n_qubits: usize) -> Result<(), CircuitError> {
        let out_of_range = |qubit| CircuitError::QubitOutOfRange {
            gate: self.gate,
            qubit,
            n_qubits,
        };
        if self.target >= n_qubits {
            return Err(out_of_range(self.target));
        }
        match (self.gate.is_two_qubit(), self.control) {
            (false, Some(_)) => return Err(CircuitError::UnexpectedControl(self.gate)),
            (true, None) => return Err(CircuitError::MissingControl(self.gate)),
            (true, Some(c)) if c >= n_qubits => return Err(out_of_range(c)),
            (true, Some(c)) if c == self.target => {
                return Err(CircuitError::ControlIsTarget(self.gate))
            }
            _ => {}
        }
        if !self.gate.is_parametrized() && self.param != Param::None {
            return Err(CircuitError::UnexpectedParam(self.gate));
        }
        Ok(())
    }

    fn record(&self) -> String {
        let control = match self.control {
            Some(c) => c.to_string(),
            None => NOP_TOKEN.to_string(),
        };
        format!(
            "{}={}={}={}",
            self.gate,
            self.target,
            control,
            self.param.token()
        )
    }
}

/// An ordered gate list over `n_qubits` qubits, never empty.
///
/// Qubit 0 is the least significant bit of a basis-state index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<GateSpec>,
}

impl Circuit {
    pub fn new(n_qubits: usize, gates: Vec<GateSpec>) -> Result<Self, CircuitError> {
        if n_qubits == 0 {
            return Err(CircuitError::NoQubits);
        }
        if gates.is_empty() {
            return Err(CircuitError::Empty);
        }
        for g in &gates {
            g.check(n_qubits)?;
        }
        Ok(Self { n_qubits, gates })
    }

    /// Canonical identity: one `NOP` per qubit.
    pub fn identity(n_qubits: usize) -> Self {
        let gates = (0..n_qubits.max(1))
            .map(|q| GateSpec::one(Gate::NOP, q))
            .collect();
        Self {
            n_qubits: n_qubits.max(1),
            gates,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[GateSpec] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Gates excluding `NOP` placeholders.
    pub fn active_gates(&self) -> impl Iterator<Item = &GateSpec> {
        self.gates.iter().filter(|g| g.gate != Gate::NOP)
    }

    /// True when the circuit contains only `NOP` gates.
    pub fn is_identity(&self) -> bool {
        self.active_gates().next().is_none()
    }

    /// Names of free parameters in order of first appearance.
    pub fn free_parameters(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut names = Vec::new();
        for g in &self.gates {
            if let Param::Var(name) = &g.param {
                if seen.insert(name.as_str()) {
                    names.push(name.clone());
                }
            }
        }
        names
    }

    /// Concatenates `other` after `self`.
    pub fn then(&self, other: &Circuit) -> Result<Circuit, CircuitError> {
        let n = self.n_qubits.max(other.n_qubits);
        let gates = self.gates.iter().chain(&other.gates).cloned().collect();
        Circuit::new(n, gates)
    }

    /// Number of layers under greedy left alignment, ignoring `NOP` gates.
    pub fn moment_count(&self) -> usize {
        let mut depth = vec![0usize; self.n_qubits];
        for g in self.active_gates() {
            let layer = g.support().map(|q| depth[q]).max().unwrap_or(0) + 1;
            for q in g.support() {
                depth[q] = layer;
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.gates.iter().enumerate() {
            if i > 0 {
                f.write_str("@")?;
            }
            f.write_str(&g.record())?;
        }
        Ok(())
    }
}

fn parse_qubit(token: &str) -> Result<usize, CircuitError> {
    token
        .parse::<usize>()
        .map_err(|_| CircuitError::BadQubit(token.to_string()))
}

/// Parses an `@`-joined circuit string over `n_qubits` qubits.
pub fn parse_circuit_string(s: &str, n_qubits: usize) -> Result<Circuit, CircuitError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(CircuitError::Empty);
    }
    let mut gates = Vec::new();
    for (index, record) in s.split('@').enumerate() {
        let fields: Vec<&str> = record.split('=').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(CircuitError::FieldCount {
                index,
                record: record.to_string(),
                found: fields.len(),
            });
        }
        let gate: Gate = fields[0].parse()?;
        let target = parse_qubit(fields[1])?;
        let control = match fields[2] {
            NOP_TOKEN => None,
            tok => Some(parse_qubit(tok)?),
        };
        let param = Param::from_token(fields[3])?;
        gates.push(GateSpec::new(gate, target, control, param));
    }
    Circuit::new(n_qubits, gates)
}

/// Two-qubit connectivity constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    NearestNeighbor { max_distance: usize },
    AllToAll,
}

impl Connectivity {
    pub fn allows(self, a: usize, b: usize) -> bool {
        match self {
            Connectivity::AllToAll => a != b,
            Connectivity::NearestNeighbor { max_distance } => a != b && a.abs_diff(b) <= max_distance,
        }
    }
}

/// Gates a circuit may draw from, plus two-qubit connectivity.
///
/// `NOP` is always permitted regardless of `allowed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePool {
    pub allowed: Vec<Gate>,
    pub connectivity: Connectivity,
}

impl GatePool {
    pub fn new(allowed: Vec<Gate>, connectivity: Connectivity) -> Self {
        let mut seen = BTreeSet::new();
        let allowed = allowed
            .into_iter()
            .filter(|g| *g != Gate::NOP && seen.insert(*g))
            .collect();
        Self {
            allowed,
            connectivity,
        }
    }

    /// One-qubit X, Y, Z, H, RX, RY, RZ and two-qubit CNOT, CRX, CRY, CRZ.
    pub fn broad() -> Self {
        use Gate::*;
        Self::new(
            vec![X, Y, Z, H, RX, RY, RZ, CNOT, CRX, CRY, CRZ],
            Connectivity::AllToAll,
        )
    }

    pub fn ry_cnot() -> Self {
        Self::new(
            vec![Gate::RY, Gate::CNOT],
            Connectivity::NearestNeighbor { max_distance: 1 },
        )
    }

    pub fn xy_y() -> Self {
        Self::new(vec![Gate::XY, Gate::Y], Connectivity::AllToAll)
    }

    pub fn contains(&self, gate: Gate) -> bool {
        gate == Gate::NOP || self.allowed.contains(&gate)
    }

    pub fn one_qubit_gates(&self) -> Vec<Gate> {
        self.allowed
            .iter()
            .copied()
            .filter(|g| !g.is_two_qubit())
            .collect()
    }

    pub fn two_qubit_gates(&self) -> Vec<Gate> {
        self.allowed
            .iter()
            .copied()
            .filter(|g| g.is_two_qubit())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    GateNotInPool(Gate),
    Connectivity { target: usize, control: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

/// Lists every gate outside `pool` or violating its connectivity.
pub fn validate(circuit: &Circuit, pool: &GatePool) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, g) in circuit.gates().iter().enumerate() {
        if !pool.contains(g.gate) {
            out.push(Violation {
                index,
                kind: ViolationKind::GateNotInPool(g.gate),
            });
        }
        if let Some(control) = g.control {
            if !pool.connectivity.allows(g.target, control) {
                out.push(Violation {
                    index,
                    kind: ViolationKind::Connectivity {
                        target: g.target,
                        control,
                    },
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED_MF: &str = "RY=0=nop=0.8766386666903253@RY=1=nop=0.587783873106211@RY=2=nop=0.5334355932535123@RY=3=nop=0.5334355932535123@RY=4=nop=0.5877838731062109@RY=5=nop=0.8766386666903251";

    #[test]
    fn parses_single_cnot() {
        let c = parse_circuit_string("CNOT=0=1=nop", 4).unwrap();
        assert_eq!(c.gates(), &[GateSpec::two(Gate::CNOT, 0, 1, Param::None)]);
        assert_eq!(c.serialize(), "CNOT=0=1=nop");
    }

    #[test]
    fn parses_fixed_mean_field_listing() {
        let c = parse_circuit_string(FIXED_MF, 6).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.gates().iter().all(|g| g.gate == Gate::RY));
        assert_eq!(c.gates()[0].param, Param::Fixed(0.8766386666903253));
        assert_eq!(c.gates()[5].param, Param::Fixed(0.8766386666903251));
        assert_eq!(c.serialize(), FIXED_MF);
    }

    #[test]
    fn var_tokens_round_trip() {
        let s = "RY=0=nop=nop0@RY=1=nop=nop1@RY=2=nop=nop2@RY=3=nop=nop3@RY=4=nop=nop4@RY=5=nop=nop5";
        let c = parse_circuit_string(s, 6).unwrap();
        assert_eq!(c.gates()[3].param, Param::Var("nop3".into()));
        assert_eq!(c.free_parameters().len(), 6);
        assert_eq!(c.serialize(), s);
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(parse_circuit_string("", 4), Err(CircuitError::Empty));
        assert!(matches!(
            parse_circuit_string("CNOT=0=1", 4),
            Err(CircuitError::FieldCount { found: 3, .. })
        ));
        assert!(matches!(
            parse_circuit_string("FOO=0=nop=nop", 4),
            Err(CircuitError::UnknownGate(_))
        ));
        assert!(matches!(
            parse_circuit_string("H=4=nop=nop", 4),
            Err(CircuitError::QubitOutOfRange { qubit: 4, .. })
        ));
        assert_eq!(
            parse_circuit_string("H=0=1=nop", 4),
            Err(CircuitError::UnexpectedControl(Gate::H))
        );
        assert_eq!(
            parse_circuit_string("CNOT=0=nop=nop", 4),
            Err(CircuitError::MissingControl(Gate::CNOT))
        );
        assert_eq!(
            parse_circuit_string("CNOT=1=1=nop", 4),
            Err(CircuitError::ControlIsTarget(Gate::CNOT))
        );
        assert_eq!(
            parse_circuit_string("X=0=nop=0.5", 4),
            Err(CircuitError::UnexpectedParam(Gate::X))
        );
    }

    #[test]
    fn empty_gate_list_is_rejected() {
        assert_eq!(Circuit::new(3, vec![]), Err(CircuitError::Empty));
    }

    #[test]
    fn moments_follow_greedy_layering() {
        let parallel = Circuit::new(
            6,
            (0..6)
                .map(|q| GateSpec::rotation(Gate::RY, q, Param::Var(format!("nop{q}"))))
                .collect(),
        )
        .unwrap();
        assert_eq!(parallel.moment_count(), 1);

        let chain = parse_circuit_string("CNOT=0=1=nop@CNOT=1=2=nop", 3).unwrap();
        assert_eq!(chain.moment_count(), 2);

        let extra = parse_circuit_string("RX=0=nop=t", 6).unwrap();
        assert_eq!(parallel.then(&extra).unwrap().moment_count(), 2);

        assert_eq!(Circuit::identity(4).moment_count(), 0);
    }

    #[test]
    fn validate_reports_pool_and_connectivity() {
        let nn = GatePool::new(
            vec![Gate::RY, Gate::CNOT],
            Connectivity::NearestNeighbor { max_distance: 1 },
        );
        let far = parse_circuit_string("CNOT=0=3=nop", 6).unwrap();
        assert_eq!(
            validate(&far, &nn),
            vec![Violation {
                index: 0,
                kind: ViolationKind::Connectivity {
                    target: 0,
                    control: 3
                }
            }]
        );

        let all = GatePool::new(vec![Gate::CNOT], Connectivity::AllToAll);
        let wide = parse_circuit_string("CNOT=0=5=nop", 6).unwrap();
        assert!(validate(&wide, &all).is_empty());

        let h = parse_circuit_string("H=0=nop=nop", 6).unwrap();
        assert_eq!(
            validate(&h, &GatePool::ry_cnot())[0].kind,
            ViolationKind::GateNotInPool(Gate::H)
        );
        assert!(validate(&Circuit::identity(6), &GatePool::ry_cnot()).is_empty());
    }

    #[test]
    fn param_names_are_checked() {
        assert!(Param::var("nop").is_err());
        assert!(Param::var("1.5").is_err());
        assert!(Param::var("a=b").is_err());
        assert!(Param::var("theta").is_ok());
        assert_eq!(Param::from_token("inf").unwrap(), Param::Var("inf".into()));
    }
}
