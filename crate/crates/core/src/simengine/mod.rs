//! Circuit execution: a noisy trajectory sampler, an exact density-matrix
//! oracle and the backend/job layer.
//!
//! Noise convention. After every single-qubit unitary a uniformly chosen
//! X, Y or Z is inserted with probability `p1`. After every two-qubit gate one
//! of the 15 non-identity two-qubit Paulis is inserted with probability `p2`.
//! Each recorded bit flips independently with probability `readout_eps`.
//! With `idle_damping` set, every qubit left untouched by an ASAP layer is
//! amplitude damped once for that layer.
//!
//! Counts are keyed by bitstrings whose character `i` is register bit `i`.

mod backend;
mod density;
mod statevector;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::protocols::{CardinalState, Circuit, Gate};

pub use backend::{
    open_backend, Backend, BackendJob, BatchItem, JobStatus, MockBackend, SimBackend, MOCK_OFFLINE_MARKER,
};
pub use density::{run_density_matrix, Distribution, ORACLE_QUBIT_LIMIT};
pub use statevector::{run_trajectories, run_trajectories_with, SparseState};

pub const DEFAULT_QUBIT_LIMIT: usize = 24;
pub const DEFAULT_SHOTS: u64 = 1024;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("register of {width} qubits exceeds the limit of {limit}")]
    RegisterTooLarge { width: usize, limit: usize },
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("shots must be at least 1")]
    NoShots,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown job '{0}'")]
    UnknownJob(String),
    #[error("unsupported backend uri '{0}'")]
    BadUri(String),
    #[error("job store: {0}")]
    Store(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p1: f64,
    pub p2: f64,
    pub readout_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_damping: Option<f64>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn depolarizing(p1: f64, p2: f64) -> Self {
        NoiseModel { p1, p2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("readout_eps", self.readout_eps),
            ("idle_damping", self.idle_damping.unwrap_or(0.0)),
        ];
        for (name, v) in named {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidNoise(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn damping(&self) -> f64 {
        self.idle_damping.unwrap_or(0.0)
    }

    pub fn is_noiseless(&self) -> bool {
        self.p1 == 0.0 && self.p2 == 0.0 && self.readout_eps == 0.0 && self.damping() == 0.0
    }

    /// Bloch-vector contraction of a single-qubit depolarizing step.
    pub fn contraction_1q(p1: f64) -> f64 {
        1.0 - 4.0 * p1 / 3.0
    }

    /// Per-qubit Bloch contraction of a two-qubit depolarizing step.
    pub fn contraction_2q(p2: f64) -> f64 {
        1.0 - 16.0 * p2 / 15.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMethod {
    /// Pauli-frame sampling when the circuit allows it, full trajectories otherwise.
    Auto,
    /// Always evolve a state per shot.
    Statevector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub qubit_limit: usize,
    /// Decompose SWAP into three CX so two-qubit noise applies three times.
    pub swap_as_cx: bool,
    pub method: TrajectoryMethod,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { qubit_limit: DEFAULT_QUBIT_LIMIT, swap_as_cx: false, method: TrajectoryMethod::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotResult {
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
    pub circuit_id: String,
    pub seed: u64,
    pub backend: String,
}

impl ShotResult {
    /// Number of shots whose bits satisfy `pred`.
    pub fn count_where(&self, mut pred: impl FnMut(&[u8]) -> bool) -> u64 {
        self.counts.iter().filter(|(k, _)| pred(&bits_of(k))).map(|(_, &c)| c).sum()
    }

    pub fn frequency_where(&self, pred: impl FnMut(&[u8]) -> bool) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        self.count_where(pred) as f64 / self.shots as f64
    }
}

/// Register bits of a counts key.
pub fn bits_of(key: &str) -> Vec<u8> {
    key.bytes().map(|b| u8::from(b == b'1')).collect()
}

pub(crate) fn bitstring(bits: u64, num_bits: usize) -> String {
    (0..num_bits).map(|i| if bits >> i & 1 == 1 { '1' } else { '0' }).collect()
}

pub(crate) type Mat2 = [[Complex64; 2]; 2];

const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub(crate) const I2: Mat2 = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
pub(crate) const PX: Mat2 = [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
pub(crate) const PY: Mat2 = [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]];
pub(crate) const PZ: Mat2 = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];

pub(crate) fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[c(0.0, 0.0); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn h_mat() -> Mat2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]]
}

fn s_mat(sign: f64) -> Mat2 {
    [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, sign)]]
}

pub(crate) fn u3_mat(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let (s, co) = (theta / 2.0).sin_cos();
    [
        [c(co, 0.0), -Complex64::from_polar(s, lambda)],
        [Complex64::from_polar(s, phi), Complex64::from_polar(co, phi + lambda)],
    ]
}

/// Matrix of a single-qubit unitary gate, `None` for other gates.
pub(crate) fn one_qubit_matrix(g: &Gate) -> Option<(usize, Mat2)> {
    let m = match *g {
        Gate::H(q) => (q, h_mat()),
        Gate::X(q) => (q, PX),
        Gate::Y(q) => (q, PY),
        Gate::Z(q) => (q, PZ),
        Gate::S(q) => (q, s_mat(1.0)),
        Gate::Sdg(q) => (q, s_mat(-1.0)),
        Gate::U3 { qubit, theta, phi, lambda } => (qubit, u3_mat(theta, phi, lambda)),
        Gate::Prepare(q, state) => (q, prepare_matrix(state)),
        _ => return None,
    };
    Some(m)
}

/// Unitary taking |0> to the cardinal state.
pub(crate) fn prepare_matrix(state: CardinalState) -> Mat2 {
    match state {
        CardinalState::PlusZ => I2,
        CardinalState::MinusZ => PX,
        CardinalState::PlusX => h_mat(),
        CardinalState::MinusX => matmul(&h_mat(), &PX),
        CardinalState::PlusY => matmul(&s_mat(1.0), &h_mat()),
        CardinalState::MinusY => matmul(&s_mat(-1.0), &h_mat()),
    }
}

/// Gate list after lowering and validation against the options.
pub(crate) fn lower(circuit: &Circuit, options: &SimOptions) -> Result<Vec<Gate>> {
    if circuit.width() > options.qubit_limit.min(64) {
        return Err(SimError::RegisterTooLarge { width: circuit.width(), limit: options.qubit_limit.min(64) });
    }
    circuit.validate().map_err(|e| SimError::InvalidCircuit(e.to_string()))?;
    if !options.swap_as_cx {
        return Ok(circuit.gates.clone());
    }
    let mut out = Vec::with_capacity(circuit.gates.len());
    for g in &circuit.gates {
        match *g {
            Gate::Swap(a, b) => out.extend([
                Gate::Cx { control: a, target: b },
                Gate::Cx { control: b, target: a },
                Gate::Cx { control: a, target: b },
            ]),
            other => out.push(other),
        }
    }
    Ok(out)
}

/// ASAP layering that respects qubit and classical-bit dependencies.
pub(crate) fn layers(gates: &[Gate], width: usize, num_bits: usize) -> Vec<Vec<Gate>> {
    let mut qubit_ready = vec![0usize; width];
    let mut bit_ready = vec![0usize; num_bits];
    let mut out: Vec<Vec<Gate>> = Vec::new();
    for g in gates {
        let qs = g.qubits();
        let mut layer = qs.iter().map(|&q| qubit_ready[q]).max().unwrap_or(0);
        if let Gate::CondX { bit, .. } | Gate::CondZ { bit, .. } = *g {
            layer = layer.max(bit_ready[bit]);
        }
        if out.len() <= layer {
            out.resize_with(layer + 1, Vec::new);
        }
        out[layer].push(*g);
        for q in qs {
            qubit_ready[q] = layer + 1;
        }
        if let Gate::Measure { bit, .. } = *g {
            bit_ready[bit] = layer + 1;
        }
    }
    out
}

/// Qubits not touched by any gate of the layer.
pub(crate) fn idle_qubits(layer: &[Gate], width: usize) -> Vec<usize> {
    let mut busy = vec![false; width];
    for g in layer {
        for q in g.qubits() {
            busy[q] = true;
        }
    }
    (0..width).filter(|&q| !busy[q]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::depolarizing(0.1, 0.2).validate().is_ok());
        assert!(NoiseModel { p2: 1.5, ..Default::default() }.validate().is_err());
        assert!(NoiseModel { idle_damping: Some(-0.1), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn u3_inverse() {
        let (t, p, l) = (0.7, 1.3, -0.4);
        let m = matmul(&u3_mat(-t, -l, -p), &u3_mat(t, p, l));
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn layering_respects_bits() {
        let gates = [Gate::H(0), Gate::Measure { qubit: 0, bit: 0 }, Gate::X(2), Gate::CondX { qubit: 2, bit: 0 }];
        let ls = layers(&gates, 3, 1);
        assert_eq!(ls.len(), 3);
        assert_eq!(ls[0], vec![Gate::H(0), Gate::X(2)]);
        assert_eq!(ls[2], vec![Gate::CondX { qubit: 2, bit: 0 }]);
        assert_eq!(idle_qubits(&ls[0], 3), vec![1]);
    }
}
