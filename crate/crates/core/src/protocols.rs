//! The six benchmark protocols: variants, thresholds, swap distances and the
//! gate templates that turn a path into a runnable circuit.
//!
//! Templates are data. Each one is a list of [`TemplateOp`]s whose qubit
//! positions are written relative to the path length (`"0"`, `"n-1"`), so a
//! protocol definition document can replace any template without code
//! changes. The success predicate of each protocol is fixed and reads the
//! classical register layout documented on [`ProtocolId::is_success`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{Path, QubitId};

pub const CIRCUIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("{protocol}: path of {len} qubits is shorter than the minimum {min}")]
    PathTooShort { protocol: ProtocolId, len: usize, min: usize },
    #[error("{protocol}: variant {variant} does not belong to this protocol")]
    UnknownVariant { protocol: ProtocolId, variant: String },
    #[error("threshold {1} for {0} is outside [0, 1]")]
    ThresholdOutOfRange(ProtocolId, f64),
    #[error("unknown protocol '{0}'")]
    UnknownProtocol(String),
    #[error("template for {protocol}: {message}")]
    BadTemplate { protocol: ProtocolId, message: String },
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("malformed document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolId {
    Transmit,
    DoNothing,
    Teleportation,
    BellStateTransfer,
    SuperDenseCoding,
    EntanglementSwapping,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 6] = [
        ProtocolId::Transmit,
        ProtocolId::DoNothing,
        ProtocolId::Teleportation,
        ProtocolId::BellStateTransfer,
        ProtocolId::SuperDenseCoding,
        ProtocolId::EntanglementSwapping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolId::Transmit => "transmit",
            ProtocolId::DoNothing => "do_nothing",
            ProtocolId::Teleportation => "teleportation",
            ProtocolId::BellStateTransfer => "bell_state_transfer",
            ProtocolId::SuperDenseCoding => "super_dense_coding",
            ProtocolId::EntanglementSwapping => "entanglement_swapping",
        }
    }

    /// State-transfer protocols estimate an average state fidelity.
    pub fn transfers_state(self) -> bool {
        matches!(self, ProtocolId::Transmit | ProtocolId::DoNothing | ProtocolId::Teleportation)
    }

    /// Default quantumness threshold.
    pub fn default_threshold(self) -> f64 {
        match self {
            ProtocolId::Transmit | ProtocolId::DoNothing | ProtocolId::Teleportation => 2.0 / 3.0,
            ProtocolId::BellStateTransfer => 0.5,
            // Not published for these two; 0.5 is a configurable stand-in.
            ProtocolId::SuperDenseCoding | ProtocolId::EntanglementSwapping => 0.5,
        }
    }

    /// Whether the default threshold is a stand-in rather than a known bound.
    pub fn threshold_is_default_guess(self) -> bool {
        matches!(self, ProtocolId::SuperDenseCoding | ProtocolId::EntanglementSwapping)
    }

    /// Success predicate over the measured bits (in measurement-bit order).
    ///
    /// Register layouts of the built-in templates:
    /// * transmit, do_nothing: `[work]`, success on 0
    /// * teleportation: `[alice_z, alice_x, bob]`; under
    ///   [`TeleportCorrection::PauliFrame`] the uncorrected frame `X^x Z^z`
    ///   on Bob's qubit flips the decoded bit exactly when it anticommutes
    ///   with the prepared state's axis, otherwise success on `bob = 0`
    /// * bell_state_transfer: `[z, x]` of the final Bell measurement, success on `00`
    /// * super_dense_coding: `[z, x]`, success when equal to the message bits
    /// * entanglement_swapping: `[mid_z, mid_x, a, b]`; success when the
    ///   frame-corrected parity of `a ^ b` matches the Φ+ eigenvalue of the
    ///   measured setting
    pub fn is_success(self, variant: &Variant, correction: TeleportCorrection, bits: &[u8]) -> bool {
        let bit = |i: usize| bits.get(i).copied().unwrap_or(0) & 1;
        let frame = correction == TeleportCorrection::PauliFrame;
        match (self, variant.kind) {
            (ProtocolId::Transmit | ProtocolId::DoNothing, _) => bit(0) == 0,
            (ProtocolId::Teleportation, VariantKind::PreparedState(state)) if frame => {
                let (z, x) = (bit(0), bit(1));
                let flip = match state.axis() {
                    Axis::Z => x,
                    Axis::X => z,
                    Axis::Y => x ^ z,
                };
                bit(2) ^ flip == 0
            }
            // Haar states always run with explicit feed-forward corrections.
            (ProtocolId::Teleportation, _) => bit(2) == 0,
            (ProtocolId::BellStateTransfer, _) => bit(0) == 0 && bit(1) == 0,
            (ProtocolId::SuperDenseCoding, VariantKind::Message(m)) => bit(0) == (m >> 1) & 1 && bit(1) == m & 1,
            (ProtocolId::SuperDenseCoding, _) => false,
            (ProtocolId::EntanglementSwapping, VariantKind::Setting(axis)) => {
                let (z, x) = (bit(0), bit(1));
                let (flip, expected) = match axis {
                    Axis::X => (z, 0),
                    Axis::Y => (z ^ x, 1),
                    Axis::Z => (x, 0),
                };
                (bit(2) ^ bit(3) ^ flip) == expected
            }
            (ProtocolId::EntanglementSwapping, _) => false,
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolId {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let id = match norm.as_str() {
            "transmit" => ProtocolId::Transmit,
            "do_nothing" | "donothing" => ProtocolId::DoNothing,
            "teleportation" | "teleport" => ProtocolId::Teleportation,
            "bell_state_transfer" | "bell_swap" | "bst" => ProtocolId::BellStateTransfer,
            "super_dense_coding" | "superdense" | "sdc" => ProtocolId::SuperDenseCoding,
            "entanglement_swapping" | "ent_swapping" | "es" => ProtocolId::EntanglementSwapping,
            _ => return Err(ProtocolError::UnknownProtocol(s.to_string())),
        };
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// The six Pauli eigenstates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CardinalState {
    #[serde(rename = "+z")]
    PlusZ,
    #[serde(rename = "-z")]
    MinusZ,
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
    #[serde(rename = "+y")]
    PlusY,
    #[serde(rename = "-y")]
    MinusY,
}

impl CardinalState {
    pub const ALL: [CardinalState; 6] = [
        CardinalState::PlusZ,
        CardinalState::MinusZ,
        CardinalState::PlusX,
        CardinalState::MinusX,
        CardinalState::PlusY,
        CardinalState::MinusY,
    ];

    pub fn axis(self) -> Axis {
        match self {
            CardinalState::PlusZ | CardinalState::MinusZ => Axis::Z,
            CardinalState::PlusX | CardinalState::MinusX => Axis::X,
            CardinalState::PlusY | CardinalState::MinusY => Axis::Y,
        }
    }

    /// Bloch vector of the state.
    pub fn bloch(self) -> [f64; 3] {
        match self {
            CardinalState::PlusX => [1.0, 0.0, 0.0],
            CardinalState::MinusX => [-1.0, 0.0, 0.0],
            CardinalState::PlusY => [0.0, 1.0, 0.0],
            CardinalState::MinusY => [0.0, -1.0, 0.0],
            CardinalState::PlusZ => [0.0, 0.0, 1.0],
            CardinalState::MinusZ => [0.0, 0.0, -1.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CardinalState::PlusZ => "+z",
            CardinalState::MinusZ => "-z",
            CardinalState::PlusX => "+x",
            CardinalState::MinusX => "-x",
            CardinalState::PlusY => "+y",
            CardinalState::MinusY => "-y",
        }
    }

    /// Gates (after the preparation) that rotate this state back to |0>.
    fn unprepare(self, q: usize) -> Vec<Gate> {
        match self {
            CardinalState::PlusZ => vec![],
            CardinalState::MinusZ => vec![Gate::X(q)],
            CardinalState::PlusX => vec![Gate::H(q)],
            CardinalState::MinusX => vec![Gate::H(q), Gate::X(q)],
            CardinalState::PlusY => vec![Gate::Sdg(q), Gate::H(q)],
            CardinalState::MinusY => vec![Gate::S(q), Gate::H(q)],
        }
    }
}

impl FromStr for CardinalState {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CardinalState::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ProtocolError::Malformed(format!("unknown cardinal state '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    PreparedState(CardinalState),
    /// Haar-random input state; angles derive from the seed.
    HaarState {
        seed: u64,
    },
    /// Two-bit message `zx` encoded as `Z^z X^x`.
    Message(u8),
    /// Witness measurement setting (XX, YY or ZZ).
    Setting(Axis),
    /// The single Φ+ transfer run by bell-state transfer.
    BellPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub kind: VariantKind,
    pub index: u16,
}

impl Variant {
    pub fn cardinal(state: CardinalState) -> Self {
        let index = CardinalState::ALL.iter().position(|&c| c == state).unwrap() as u16;
        Variant { kind: VariantKind::PreparedState(state), index }
    }

    pub fn message(m: u8) -> Self {
        Variant { kind: VariantKind::Message(m & 3), index: (m & 3) as u16 }
    }

    pub fn setting(axis: Axis) -> Self {
        let index = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        };
        Variant { kind: VariantKind::Setting(axis), index }
    }

    /// Polar and azimuthal angles of a Haar state.
    pub fn haar_angles(seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (cos_theta.clamp(-1.0, 1.0).acos(), phi)
    }

    pub fn belongs_to(&self, protocol: ProtocolId) -> bool {
        match self.kind {
            VariantKind::PreparedState(_) | VariantKind::HaarState { .. } => protocol.transfers_state(),
            VariantKind::Message(m) => protocol == ProtocolId::SuperDenseCoding && m < 4,
            VariantKind::Setting(_) => protocol == ProtocolId::EntanglementSwapping,
            VariantKind::BellPair => protocol == ProtocolId::BellStateTransfer,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VariantKind::PreparedState(s) => f.write_str(s.label()),
            VariantKind::HaarState { seed } => write!(f, "haar#{}:{seed}", self.index),
            VariantKind::Message(m) => write!(f, "msg{}{}", (m >> 1) & 1, m & 1),
            VariantKind::Setting(a) => write!(f, "{a:?}{a:?}"),
            VariantKind::BellPair => f.write_str("phi+"),
        }
    }
}

/// How input states for the state-transfer protocols are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateDesign {
    /// The six cardinal states (a state 2-design).
    Cardinal,
    /// `samples` Haar-random states derived from `seed`.
    Haar { samples: u16, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleportCorrection {
    /// Corrections folded into the success predicate; no mid-circuit measurement.
    PauliFrame,
    /// Mid-circuit measurement with classically controlled X/Z.
    FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Lets teleportation and bell-state transfer run at swap distance 0 (n = 3).
    pub allow_zero_swap: bool,
    pub design: StateDesign,
    pub teleport_correction: TeleportCorrection,
    /// Threshold overrides per protocol.
    pub thresholds: BTreeMap<ProtocolId, f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            allow_zero_swap: true,
            design: StateDesign::Cardinal,
            teleport_correction: TeleportCorrection::PauliFrame,
            thresholds: BTreeMap::new(),
        }
    }
}

impl ProtocolConfig {
    pub fn with_threshold(mut self, protocol: ProtocolId, value: f64) -> Result<Self, ProtocolError> {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(ProtocolError::ThresholdOutOfRange(protocol, value));
        }
        self.thresholds.insert(protocol, value);
        Ok(self)
    }

    pub fn threshold(&self, protocol: ProtocolId) -> f64 {
        threshold(protocol, &self.thresholds).unwrap_or_else(|_| protocol.default_threshold())
    }

    pub fn min_path_len(&self, protocol: ProtocolId) -> usize {
        min_path_len_with(protocol, self.allow_zero_swap)
    }

    /// Variants executed per path.
    pub fn variants(&self, protocol: ProtocolId) -> Vec<Variant> {
        match protocol {
            ProtocolId::Transmit | ProtocolId::DoNothing | ProtocolId::Teleportation => match self.design {
                StateDesign::Cardinal => CardinalState::ALL.into_iter().map(Variant::cardinal).collect(),
                StateDesign::Haar { samples, seed } => (0..samples)
                    .map(|i| Variant {
                        kind: VariantKind::HaarState { seed: crate::seeds::mix(seed, i as u64) },
                        index: i,
                    })
                    .collect(),
            },
            ProtocolId::BellStateTransfer => vec![Variant { kind: VariantKind::BellPair, index: 0 }],
            ProtocolId::SuperDenseCoding => (0..4).map(Variant::message).collect(),
            ProtocolId::EntanglementSwapping => [Axis::X, Axis::Y, Axis::Z].into_iter().map(Variant::setting).collect(),
        }
    }
}

/// Threshold with overrides applied.
pub fn threshold(protocol: ProtocolId, overrides: &BTreeMap<ProtocolId, f64>) -> Result<f64, ProtocolError> {
    match overrides.get(&protocol) {
        Some(&v) if (0.0..=1.0).contains(&v) => Ok(v),
        Some(&v) => Err(ProtocolError::ThresholdOutOfRange(protocol, v)),
        None => Ok(protocol.default_threshold()),
    }
}

/// Minimum path length with zero-swap teleportation / bell-state transfer allowed.
pub fn min_path_len(protocol: ProtocolId) -> usize {
    min_path_len_with(protocol, true)
}

pub fn min_path_len_with(protocol: ProtocolId, allow_zero_swap: bool) -> usize {
    match protocol {
        ProtocolId::Transmit | ProtocolId::DoNothing => 2,
        ProtocolId::SuperDenseCoding => 3,
        ProtocolId::Teleportation | ProtocolId::BellStateTransfer => {
            if allow_zero_swap {
                3
            } else {
                4
            }
        }
        ProtocolId::EntanglementSwapping => 5,
    }
}

/// Charted swap distance for a path of `n` qubits.
pub fn swap_distance(protocol: ProtocolId, n: usize) -> Result<usize, ProtocolError> {
    let min = min_path_len(protocol);
    if n < min {
        return Err(ProtocolError::PathTooShort { protocol, len: n, min });
    }
    Ok(match protocol {
        ProtocolId::Transmit | ProtocolId::DoNothing => n - 1,
        ProtocolId::Teleportation | ProtocolId::BellStateTransfer => n - 3,
        ProtocolId::SuperDenseCoding => n - 2,
        ProtocolId::EntanglementSwapping => n - 5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Reset(usize),
    Prepare(usize, CardinalState),
    U3 {
        qubit: usize,
        theta: f64,
        phi: f64,
        lambda: f64,
    },
    H(usize),
    X(usize),
    Y(usize),
    Z(usize),
    S(usize),
    Sdg(usize),
    Cx {
        control: usize,
        target: usize,
    },
    Swap(usize, usize),
    Measure {
        qubit: usize,
        bit: usize,
    },
    /// Classically controlled X, applied when `bit` reads 1.
    CondX {
        qubit: usize,
        bit: usize,
    },
    CondZ {
        qubit: usize,
        bit: usize,
    },
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::Reset(_) => "reset",
            Gate::Prepare(..) => "prepare",
            Gate::U3 { .. } => "u3",
            Gate::H(_) => "h",
            Gate::X(_) => "x",
            Gate::Y(_) => "y",
            Gate::Z(_) => "z",
            Gate::S(_) => "s",
            Gate::Sdg(_) => "sdg",
            Gate::Cx { .. } => "cx",
            Gate::Swap(..) => "swap",
            Gate::Measure { .. } => "measure",
            Gate::CondX { .. } => "c_x",
            Gate::CondZ { .. } => "c_z",
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Reset(q)
            | Gate::Prepare(q, _)
            | Gate::H(q)
            | Gate::X(q)
            | Gate::Y(q)
            | Gate::Z(q)
            | Gate::S(q)
            | Gate::Sdg(q) => vec![q],
            Gate::U3 { qubit, .. } | Gate::Measure { qubit, .. } => vec![qubit],
            Gate::CondX { qubit, .. } | Gate::CondZ { qubit, .. } => vec![qubit],
            Gate::Cx { control, target } => vec![control, target],
            Gate::Swap(a, b) => vec![a, b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cx { .. } | Gate::Swap(..))
    }

    /// Unitary single-qubit gates that receive single-qubit gate noise.
    pub fn is_one_qubit_unitary(&self) -> bool {
        matches!(
            self,
            Gate::Prepare(..)
                | Gate::U3 { .. }
                | Gate::H(_)
                | Gate::X(_)
                | Gate::Y(_)
                | Gate::Z(_)
                | Gate::S(_)
                | Gate::Sdg(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitMeta {
    pub protocol: ProtocolId,
    pub variant: Variant,
    pub path: Path,
    pub correction: TeleportCorrection,
}

/// Gate list over the path roster; gate operands are roster positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub qubits: Vec<QubitId>,
    pub gates: Vec<Gate>,
    pub num_bits: usize,
    pub meta: CircuitMeta,
}

impl Circuit {
    pub fn width(&self) -> usize {
        self.qubits.len()
    }

    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.meta.protocol, self.meta.variant, self.meta.path)
    }

    pub fn count(&self, name: &str) -> usize {
        self.gates.iter().filter(|g| g.name() == name).count()
    }

    pub fn is_success(&self, bits: &[u8]) -> bool {
        self.meta.protocol.is_success(&self.meta.variant, self.meta.correction, bits)
    }

    /// True when no gate other than a measurement follows the first measurement.
    pub fn measures_only_at_end(&self) -> bool {
        match self.gates.iter().position(|g| matches!(g, Gate::Measure { .. })) {
            None => true,
            Some(first) => self.gates[first..].iter().all(|g| matches!(g, Gate::Measure { .. })),
        }
    }

    /// Checks operand ranges, adjacency of two-qubit gates and the register.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let n = self.width();
        let mut written = vec![false; self.num_bits];
        for g in &self.gates {
            let qs = g.qubits();
            if qs.iter().any(|&q| q >= n) {
                return Err(ProtocolError::InvalidCircuit(format!("{} operand out of range", g.name())));
            }
            if g.is_two_qubit() && qs[0].abs_diff(qs[1]) != 1 {
                return Err(ProtocolError::InvalidCircuit(format!(
                    "{} on non-adjacent positions {} and {}",
                    g.name(),
                    qs[0],
                    qs[1]
                )));
            }
            match *g {
                Gate::Measure { bit, .. } => {
                    if bit >= self.num_bits || written[bit] {
                        return Err(ProtocolError::InvalidCircuit(format!("bad measurement bit {bit}")));
                    }
                    written[bit] = true;
                }
                Gate::CondX { bit, .. } | Gate::CondZ { bit, .. } => {
                    if bit >= self.num_bits || !written[bit] {
                        return Err(ProtocolError::InvalidCircuit(format!("condition on unset bit {bit}")));
                    }
                }
                _ => {}
            }
        }
        if self.num_bits == 0 || written.iter().any(|w| !w) {
            return Err(ProtocolError::InvalidCircuit("every register bit must be measured".into()));
        }
        Ok(())
    }

    /// Structured-text export (JSON) for external transpilers.
    pub fn to_document(&self) -> CircuitDocument {
        CircuitDocument {
            schema_version: CIRCUIT_SCHEMA_VERSION,
            protocol: self.meta.protocol,
            variant: self.meta.variant,
            path: self.meta.path.clone(),
            correction: self.meta.correction,
            qubits: self.qubits.clone(),
            num_bits: self.num_bits,
            gates: self.gates.iter().map(GateDocument::from).collect(),
        }
    }

    pub fn from_document(doc: CircuitDocument) -> Result<Circuit, ProtocolError> {
        if doc.schema_version != CIRCUIT_SCHEMA_VERSION {
            return Err(ProtocolError::Malformed(format!("circuit schema {}", doc.schema_version)));
        }
        let gates = doc.gates.iter().map(Gate::try_from).collect::<Result<Vec<_>, _>>()?;
        let c = Circuit {
            qubits: doc.qubits,
            gates,
            num_bits: doc.num_bits,
            meta: CircuitMeta {
                protocol: doc.protocol,
                variant: doc.variant,
                path: doc.path,
                correction: doc.correction,
            },
        };
        c.validate()?;
        Ok(c)
    }
}

/// Exported circuit. Gate operands are positions into `qubits`, which holds
/// the physical qubit ids of the path in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitDocument {
    pub schema_version: u32,
    pub protocol: ProtocolId,
    pub variant: Variant,
    pub path: Path,
    #[serde(default = "default_correction")]
    pub correction: TeleportCorrection,
    pub qubits: Vec<QubitId>,
    pub num_bits: usize,
    pub gates: Vec<GateDocument>,
}

fn default_correction() -> TeleportCorrection {
    TeleportCorrection::PauliFrame
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDocument {
    pub op: String,
    pub qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<CardinalState>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

impl From<&Gate> for GateDocument {
    fn from(g: &Gate) -> Self {
        let mut doc =
            GateDocument { op: g.name().to_string(), qubits: g.qubits(), bit: None, state: None, params: vec![] };
        match *g {
            Gate::Prepare(_, s) => doc.state = Some(s),
            Gate::U3 { theta, phi, lambda, .. } => doc.params = vec![theta, phi, lambda],
            Gate::Measure { bit, .. } | Gate::CondX { bit, .. } | Gate::CondZ { bit, .. } => doc.bit = Some(bit),
            _ => {}
        }
        doc
    }
}

impl TryFrom<&GateDocument> for Gate {
    type Error = ProtocolError;

    fn try_from(d: &GateDocument) -> Result<Self, Self::Error> {
        let bad = || ProtocolError::Malformed(format!("bad gate {:?}", d.op));
        let q = |i: usize| d.qubits.get(i).copied().ok_or_else(bad);
        let bit = || d.bit.ok_or_else(bad);
        Ok(match d.op.as_str() {
            "reset" => Gate::Reset(q(0)?),
            "prepare" => Gate::Prepare(q(0)?, d.state.ok_or_else(bad)?),
            "u3" => match d.params.as_slice() {
                [theta, phi, lambda] => Gate::U3 { qubit: q(0)?, theta: *theta, phi: *phi, lambda: *lambda },
                _ => return Err(bad()),
            },
            "h" => Gate::H(q(0)?),
            "x" => Gate::X(q(0)?),
            "y" => Gate::Y(q(0)?),
            "z" => Gate::Z(q(0)?),
            "s" => Gate::S(q(0)?),
            "sdg" => Gate::Sdg(q(0)?),
            "cx" => Gate::Cx { control: q(0)?, target: q(1)? },
            "swap" => Gate::Swap(q(0)?, q(1)?),
            "measure" => Gate::Measure { qubit: q(0)?, bit: bit()? },
            "c_x" => Gate::CondX { qubit: q(0)?, bit: bit()? },
            "c_z" => Gate::CondZ { qubit: q(0)?, bit: bit()? },
            _ => return Err(bad()),
        })
    }
}

/// Qubit position relative to the path: `"3"` or `"n-2"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Pos {
    FromStart(usize),
    FromEnd(usize),
}

impl Pos {
    fn resolve(&self, n: usize) -> Option<usize> {
        match *self {
            Pos::FromStart(k) => (k < n).then_some(k),
            Pos::FromEnd(k) => n.checked_sub(k).filter(|&p| p < n),
        }
    }
}

impl TryFrom<String> for Pos {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let t = s.replace(' ', "");
        if let Some(rest) = t.strip_prefix("n-") {
            rest.parse().map(Pos::FromEnd).map_err(|_| format!("bad position '{s}'"))
        } else {
            t.parse().map(Pos::FromStart).map_err(|_| format!("bad position '{s}'"))
        }
    }
}

impl From<Pos> for String {
    fn from(p: Pos) -> String {
        match p {
            Pos::FromStart(k) => k.to_string(),
            Pos::FromEnd(k) => format!("n-{k}"),
        }
    }
}

fn p(s: &str) -> Pos {
    Pos::try_from(s.to_string()).expect("static position")
}

/// One step of a protocol template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TemplateOp {
    ResetAll,
    /// Variant input: state preparation or super-dense message.
    Encode {
        at: Pos,
    },
    /// Inverse of the prepared state.
    Decode {
        at: Pos,
    },
    H {
        at: Pos,
    },
    X {
        at: Pos,
    },
    Z {
        at: Pos,
    },
    S {
        at: Pos,
    },
    Sdg {
        at: Pos,
    },
    Cx {
        control: Pos,
        target: Pos,
    },
    Swap {
        a: Pos,
        b: Pos,
    },
    /// SWAP chain moving the state at `from` to `to`.
    Transport {
        from: Pos,
        to: Pos,
    },
    /// Basis change for the witness setting of the variant.
    Basis {
        at: Vec<Pos>,
    },
    Measure {
        at: Pos,
        bit: usize,
    },
    CondX {
        at: Pos,
        bit: usize,
    },
    CondZ {
        at: Pos,
        bit: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub protocol: ProtocolId,
    pub num_bits: usize,
    pub ops: Vec<TemplateOp>,
}

/// Override document: `{"templates": [{protocol, num_bits, ops: [...]}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolDefinitionDocument {
    pub templates: Vec<Template>,
}

/// Built-in templates plus optional per-protocol overrides.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    overrides: BTreeMap<ProtocolId, Template>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_overrides(text: &str) -> Result<Self, ProtocolError> {
        let doc: ProtocolDefinitionDocument =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let mut reg = Self::new();
        for t in doc.templates {
            reg.overrides.insert(t.protocol, t);
        }
        Ok(reg)
    }

    pub fn template(&self, protocol: ProtocolId, config: &ProtocolConfig) -> Template {
        if let Some(t) = self.overrides.get(&protocol) {
            return t.clone();
        }
        builtin_template(protocol, config.teleport_correction)
    }

    pub fn build_circuit(
        &self,
        protocol: ProtocolId,
        path: &Path,
        variant: &Variant,
        config: &ProtocolConfig,
    ) -> Result<Circuit, ProtocolError> {
        let min = config.min_path_len(protocol);
        if path.len() < min {
            return Err(ProtocolError::PathTooShort { protocol, len: path.len(), min });
        }
        if !variant.belongs_to(protocol) {
            return Err(ProtocolError::UnknownVariant { protocol, variant: variant.to_string() });
        }
        let mut config = config.clone();
        if matches!(variant.kind, VariantKind::HaarState { .. }) {
            config.teleport_correction = TeleportCorrection::FeedForward;
        }
        let template = self.template(protocol, &config);
        let gates = expand(&template, path.len(), variant)?;
        let circuit = Circuit {
            qubits: path.qubits().to_vec(),
            gates,
            num_bits: template.num_bits,
            meta: CircuitMeta {
                protocol,
                variant: *variant,
                path: path.clone(),
                correction: config.teleport_correction,
            },
        };
        circuit.validate().map_err(|e| ProtocolError::BadTemplate { protocol, message: e.to_string() })?;
        Ok(circuit)
    }
}

/// Builds the circuit with the built-in templates.
pub fn build_circuit(
    protocol: ProtocolId,
    path: &Path,
    variant: &Variant,
    config: &ProtocolConfig,
) -> Result<Circuit, ProtocolError> {
    TemplateRegistry::new().build_circuit(protocol, path, variant, config)
}

fn builtin_template(protocol: ProtocolId, correction: TeleportCorrection) -> Template {
    use TemplateOp as T;
    let (num_bits, ops) = match protocol {
        ProtocolId::Transmit => (
            1,
            vec![
                T::ResetAll,
                T::Encode { at: p("0") },
                T::Transport { from: p("0"), to: p("n-1") },
                T::Decode { at: p("n-1") },
                T::Measure { at: p("n-1"), bit: 0 },
            ],
        ),
        // Round trip: out to the far end and back to the origin.
        ProtocolId::DoNothing => (
            1,
            vec![
                T::ResetAll,
                T::Encode { at: p("0") },
                T::Transport { from: p("0"), to: p("n-1") },
                T::Transport { from: p("n-1"), to: p("0") },
                T::Decode { at: p("0") },
                T::Measure { at: p("0"), bit: 0 },
            ],
        ),
        ProtocolId::Teleportation => {
            let mut ops = vec![
                T::ResetAll,
                T::Encode { at: p("0") },
                T::H { at: p("1") },
                T::Cx { control: p("1"), target: p("2") },
                T::Transport { from: p("2"), to: p("n-1") },
                T::Cx { control: p("0"), target: p("1") },
                T::H { at: p("0") },
            ];
            match correction {
                TeleportCorrection::PauliFrame => ops.extend([
                    T::Decode { at: p("n-1") },
                    T::Measure { at: p("0"), bit: 0 },
                    T::Measure { at: p("1"), bit: 1 },
                    T::Measure { at: p("n-1"), bit: 2 },
                ]),
                TeleportCorrection::FeedForward => ops.extend([
                    T::Measure { at: p("0"), bit: 0 },
                    T::Measure { at: p("1"), bit: 1 },
                    T::CondX { at: p("n-1"), bit: 1 },
                    T::CondZ { at: p("n-1"), bit: 0 },
                    T::Decode { at: p("n-1") },
                    T::Measure { at: p("n-1"), bit: 2 },
                ]),
            }
            (3, ops)
        }
        ProtocolId::BellStateTransfer => (
            2,
            vec![
                T::ResetAll,
                T::H { at: p("0") },
                T::Cx { control: p("0"), target: p("1") },
                T::Transport { from: p("1"), to: p("n-1") },
                T::Transport { from: p("0"), to: p("n-2") },
                T::Cx { control: p("n-2"), target: p("n-1") },
                T::H { at: p("n-2") },
                T::Measure { at: p("n-2"), bit: 0 },
                T::Measure { at: p("n-1"), bit: 1 },
            ],
        ),
        ProtocolId::SuperDenseCoding => (
            2,
            vec![
                T::ResetAll,
                T::H { at: p("0") },
                T::Cx { control: p("0"), target: p("1") },
                T::Transport { from: p("1"), to: p("n-1") },
                T::Encode { at: p("0") },
                T::Transport { from: p("0"), to: p("n-2") },
                T::Cx { control: p("n-2"), target: p("n-1") },
                T::H { at: p("n-2") },
                T::Measure { at: p("n-2"), bit: 0 },
                T::Measure { at: p("n-1"), bit: 1 },
            ],
        ),
        ProtocolId::EntanglementSwapping => (
            4,
            vec![
                T::ResetAll,
                T::H { at: p("0") },
                T::Cx { control: p("0"), target: p("1") },
                T::H { at: p("2") },
                T::Cx { control: p("2"), target: p("3") },
                T::Cx { control: p("1"), target: p("2") },
                T::H { at: p("1") },
                T::Transport { from: p("3"), to: p("n-2") },
                T::Basis { at: vec![p("0"), p("n-2")] },
                T::Measure { at: p("1"), bit: 0 },
                T::Measure { at: p("2"), bit: 1 },
                T::Measure { at: p("0"), bit: 2 },
                T::Measure { at: p("n-2"), bit: 3 },
            ],
        ),
    };
    Template { protocol, num_bits, ops }
}

fn expand(template: &Template, n: usize, variant: &Variant) -> Result<Vec<Gate>, ProtocolError> {
    let protocol = template.protocol;
    let at = |pos: &Pos| {
        pos.resolve(n).ok_or_else(|| ProtocolError::BadTemplate {
            protocol,
            message: format!("position {} out of range for n = {n}", String::from(pos.clone())),
        })
    };
    let mut gates = Vec::new();
    for op in &template.ops {
        match op {
            TemplateOp::ResetAll => gates.extend((0..n).map(Gate::Reset)),
            TemplateOp::Encode { at: pos } => {
                let q = at(pos)?;
                match variant.kind {
                    VariantKind::PreparedState(s) => gates.push(Gate::Prepare(q, s)),
                    VariantKind::HaarState { seed } => {
                        let (theta, phi) = Variant::haar_angles(seed);
                        gates.push(Gate::U3 { qubit: q, theta, phi, lambda: 0.0 });
                    }
                    VariantKind::Message(m) => {
                        if m & 1 == 1 {
                            gates.push(Gate::X(q));
                        }
                        if m & 2 == 2 {
                            gates.push(Gate::Z(q));
                        }
                    }
                    VariantKind::Setting(_) | VariantKind::BellPair => {}
                }
            }
            TemplateOp::Decode { at: pos } => {
                let q = at(pos)?;
                match variant.kind {
                    VariantKind::PreparedState(s) => gates.extend(s.unprepare(q)),
                    VariantKind::HaarState { seed } => {
                        let (theta, phi) = Variant::haar_angles(seed);
                        gates.push(Gate::U3 { qubit: q, theta: -theta, phi: 0.0, lambda: -phi });
                    }
                    _ => {}
                }
            }
            TemplateOp::H { at: pos } => gates.push(Gate::H(at(pos)?)),
            TemplateOp::X { at: pos } => gates.push(Gate::X(at(pos)?)),
            TemplateOp::Z { at: pos } => gates.push(Gate::Z(at(pos)?)),
            TemplateOp::S { at: pos } => gates.push(Gate::S(at(pos)?)),
            TemplateOp::Sdg { at: pos } => gates.push(Gate::Sdg(at(pos)?)),
            TemplateOp::Cx { control, target } => gates.push(Gate::Cx { control: at(control)?, target: at(target)? }),
            TemplateOp::Swap { a, b } => gates.push(Gate::Swap(at(a)?, at(b)?)),
            TemplateOp::Transport { from, to } => {
                let (from, to) = (at(from)?, at(to)?);
                if from <= to {
                    gates.extend((from..to).map(|i| Gate::Swap(i, i + 1)));
                } else {
                    gates.extend((to..from).rev().map(|i| Gate::Swap(i + 1, i)));
                }
            }
            TemplateOp::Basis { at: positions } => {
                for pos in positions {
                    let q = at(pos)?;
                    match variant.kind {
                        VariantKind::Setting(Axis::X) => gates.push(Gate::H(q)),
                        VariantKind::Setting(Axis::Y) => gates.extend([Gate::Sdg(q), Gate::H(q)]),
                        _ => {}
                    }
                }
            }
            TemplateOp::Measure { at: pos, bit } => gates.push(Gate::Measure { qubit: at(pos)?, bit: *bit }),
            TemplateOp::CondX { at: pos, bit } => gates.push(Gate::CondX { qubit: at(pos)?, bit: *bit }),
            TemplateOp::CondZ { at: pos, bit } => gates.push(Gate::CondZ { qubit: at(pos)?, bit: *bit }),
        }
    }
    Ok(gates)
}

/// SWAP counts per transport leg of the built-in template.
///
/// transmit, teleportation, super-dense coding and entanglement swapping
/// legs equal the charted swap distance (super-dense coding has two legs).
/// do_nothing runs two one-way legs. Bell-state transfer moves both halves
/// `n - 2` positions; its charted distance `n - 3` is the camp separation.
pub fn transport_legs(protocol: ProtocolId, n: usize) -> Vec<usize> {
    let tmpl = builtin_template(protocol, TeleportCorrection::PauliFrame);
    tmpl.ops
        .iter()
        .filter_map(|op| match op {
            TemplateOp::Transport { from, to } => {
                let (a, b) = (from.resolve(n)?, to.resolve(n)?);
                Some(a.abs_diff(b))
            }
            _ => None,
        })
        .collect()
}
