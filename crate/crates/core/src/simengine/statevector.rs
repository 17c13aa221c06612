//! Trajectory sampling on a sparse statevector.
//!
//! Path circuits keep only a handful of qubits away from |0>, so amplitudes
//! are stored sparsely and ordered by basis index (ordered storage keeps float
//! summation order, and therefore sampling, deterministic).
//!
//! Circuits whose measurements are all terminal and that have no idle
//! damping are sampled from the ideal output distribution. Pauli errors are
//! then tracked as a frame pushed through the remaining Clifford gates; only
//! its X part changes computational-basis outcomes. Everything else runs one
//! state evolution per shot.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bitstring, idle_qubits, layers, lower, one_qubit_matrix, Mat2, NoiseModel, Result, ShotResult, SimError,
    SimOptions, TrajectoryMethod, PX, PY, PZ,
};
use crate::protocols::{CardinalState, Circuit, Gate};

const PRUNE: f64 = 1e-30;

/// Sparse pure state over up to 64 qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseState {
    width: usize,
    amps: BTreeMap<u64, Complex64>,
}

impl SparseState {
    pub fn zero(width: usize) -> Self {
        SparseState { width, amps: BTreeMap::from([(0, Complex64::new(1.0, 0.0))]) }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn amplitudes(&self) -> &BTreeMap<u64, Complex64> {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply_matrix(&mut self, q: usize, m: &Mat2) {
        let mask = 1u64 << q;
        let mut out: BTreeMap<u64, Complex64> = BTreeMap::new();
        for (&k, &a) in &self.amps {
            let b = usize::from(k & mask != 0);
            let k0 = k & !mask;
            if m[0][b] != Complex64::new(0.0, 0.0) {
                *out.entry(k0).or_default() += m[0][b] * a;
            }
            if m[1][b] != Complex64::new(0.0, 0.0) {
                *out.entry(k0 | mask).or_default() += m[1][b] * a;
            }
        }
        out.retain(|_, a| a.norm_sqr() > PRUNE);
        self.amps = out;
    }

    fn remap(&mut self, f: impl Fn(u64) -> u64) {
        self.amps = self.amps.iter().map(|(&k, &a)| (f(k), a)).collect();
    }

    pub fn apply_cx(&mut self, control: usize, target: usize) {
        let (c, t) = (1u64 << control, 1u64 << target);
        self.remap(|k| if k & c != 0 { k ^ t } else { k });
    }

    pub fn apply_swap(&mut self, a: usize, b: usize) {
        let (ma, mb) = (1u64 << a, 1u64 << b);
        self.remap(|k| if ((k & ma != 0) as u8) != ((k & mb != 0) as u8) { k ^ ma ^ mb } else { k });
    }

    /// Applies a unitary gate; returns false for non-unitary gates.
    pub fn apply(&mut self, g: &Gate) -> bool {
        if let Some((q, m)) = one_qubit_matrix(g) {
            self.apply_matrix(q, &m);
            return true;
        }
        match *g {
            Gate::Cx { control, target } => self.apply_cx(control, target),
            Gate::Swap(a, b) => self.apply_swap(a, b),
            _ => return false,
        }
        true
    }

    pub fn prob_one(&self, q: usize) -> f64 {
        let mask = 1u64 << q;
        self.amps.iter().filter(|(&k, _)| k & mask != 0).map(|(_, a)| a.norm_sqr()).sum()
    }

    /// Projects qubit `q` onto `outcome` and renormalizes.
    pub fn collapse(&mut self, q: usize, outcome: bool) {
        let mask = 1u64 << q;
        self.amps.retain(|&k, _| (k & mask != 0) == outcome);
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            for a in self.amps.values_mut() {
                *a /= n;
            }
        }
    }

    fn damp(&mut self, q: usize, gamma: f64, rng: &mut ChaCha8Rng) {
        let jump = gamma * self.prob_one(q);
        let mask = 1u64 << q;
        if rng.gen::<f64>() < jump {
            self.amps = self.amps.iter().filter(|(&k, _)| k & mask != 0).map(|(&k, &a)| (k & !mask, a)).collect();
        } else {
            let s = (1.0 - gamma).sqrt();
            for (k, a) in self.amps.iter_mut() {
                if k & mask != 0 {
                    *a *= s;
                }
            }
        }
        self.renormalize();
    }

    /// Probability of each value of the qubits in `mask`.
    fn marginal(&self, mask: u64) -> BTreeMap<u64, f64> {
        let mut out = BTreeMap::new();
        for (&k, a) in &self.amps {
            *out.entry(k & mask).or_insert(0.0) += a.norm_sqr();
        }
        out
    }
}

fn pauli_matrix(k: u8) -> &'static Mat2 {
    match k {
        1 => &PX,
        2 => &PY,
        _ => &PZ,
    }
}

/// Samples with default options.
pub fn run_trajectories(circuit: &Circuit, noise: &NoiseModel, shots: u64, seed: u64) -> Result<ShotResult> {
    run_trajectories_with(circuit, noise, shots, seed, &SimOptions::default())
}

pub fn run_trajectories_with(
    circuit: &Circuit,
    noise: &NoiseModel,
    shots: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<ShotResult> {
    if shots == 0 {
        return Err(SimError::NoShots);
    }
    noise.validate()?;
    let gates = lower(circuit, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally: BTreeMap<u64, u64> = BTreeMap::new();

    let frame = match options.method {
        TrajectoryMethod::Auto => FrameSampler::new(&gates, circuit.width(), noise),
        TrajectoryMethod::Statevector => None,
    };
    match frame {
        Some(sampler) => {
            for _ in 0..shots {
                *tally.entry(sampler.shot(&mut rng)).or_insert(0) += 1;
            }
        }
        None => {
            let schedule = layers(&gates, circuit.width(), circuit.num_bits);
            for _ in 0..shots {
                let bits = full_shot(&schedule, circuit.width(), noise, &mut rng);
                *tally.entry(bits).or_insert(0) += 1;
            }
        }
    }

    Ok(ShotResult {
        counts: tally.into_iter().map(|(b, c)| (bitstring(b, circuit.num_bits), c)).collect(),
        shots,
        circuit_id: circuit.id(),
        seed,
        backend: String::new(),
    })
}

fn one_qubit_noise(state: &mut SparseState, q: usize, p1: f64, rng: &mut ChaCha8Rng) {
    if p1 > 0.0 && rng.gen::<f64>() < p1 {
        state.apply_matrix(q, pauli_matrix(rng.gen_range(1..=3)));
    }
}

fn two_qubit_noise(state: &mut SparseState, a: usize, b: usize, p2: f64, rng: &mut ChaCha8Rng) {
    if p2 > 0.0 && rng.gen::<f64>() < p2 {
        let k: u8 = rng.gen_range(1..16);
        if k & 3 != 0 {
            state.apply_matrix(a, pauli_matrix(k & 3));
        }
        if k >> 2 != 0 {
            state.apply_matrix(b, pauli_matrix(k >> 2));
        }
    }
}

/// One shot of the general evolution; returns the recorded register.
fn full_shot(schedule: &[Vec<Gate>], width: usize, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> u64 {
    let mut state = SparseState::zero(width);
    let mut bits = 0u64;
    let mut measured = 0u64;
    let gamma = noise.damping();
    for layer in schedule {
        for g in layer {
            match *g {
                Gate::Reset(q) => {
                    measured &= !(1 << q);
                    let one = rng.gen::<f64>() < state.prob_one(q);
                    state.collapse(q, one);
                    if one {
                        state.apply_matrix(q, &PX);
                    }
                }
                Gate::Measure { qubit, bit } => {
                    let one = rng.gen::<f64>() < state.prob_one(qubit);
                    state.collapse(qubit, one);
                    measured |= 1 << qubit;
                    let flip = noise.readout_eps > 0.0 && rng.gen::<f64>() < noise.readout_eps;
                    if one ^ flip {
                        bits |= 1 << bit;
                    }
                }
                Gate::CondX { qubit, bit } | Gate::CondZ { qubit, bit } => {
                    if bits >> bit & 1 == 1 {
                        let m = if matches!(g, Gate::CondX { .. }) { &PX } else { &PZ };
                        state.apply_matrix(qubit, m);
                        one_qubit_noise(&mut state, qubit, noise.p1, rng);
                    }
                }
                Gate::Cx { control: a, target: b } | Gate::Swap(a, b) => {
                    state.apply(g);
                    two_qubit_noise(&mut state, a, b, noise.p2, rng);
                }
                _ => {
                    let q = g.qubits()[0];
                    state.apply(g);
                    one_qubit_noise(&mut state, q, noise.p1, rng);
                }
            }
        }
        if gamma > 0.0 {
            // Measured qubits have been read out and are no longer tracked.
            for q in idle_qubits(layer, width).into_iter().filter(|q| measured >> q & 1 == 0) {
                state.damp(q, gamma, rng);
            }
        }
    }
    bits
}

/// Pauli frame (X and Z masks) pushed through Clifford gates.
#[derive(Debug, Clone, Copy, Default)]
struct Frame {
    x: u64,
    z: u64,
}

impl Frame {
    fn set(&mut self, q: usize, k: u8) {
        // k: 1 = X, 2 = Y, 3 = Z
        if k == 1 || k == 2 {
            self.x ^= 1 << q;
        }
        if k == 2 || k == 3 {
            self.z ^= 1 << q;
        }
    }

    fn hadamard(&mut self, q: usize) {
        let m = 1u64 << q;
        let (x, z) = (self.x & m, self.z & m);
        self.x = (self.x & !m) | z;
        self.z = (self.z & !m) | x;
    }

    fn phase(&mut self, q: usize) {
        self.z ^= self.x & (1 << q);
    }

    fn push(&mut self, g: &Gate) {
        match *g {
            Gate::H(q) => self.hadamard(q),
            Gate::S(q) | Gate::Sdg(q) => self.phase(q),
            Gate::Prepare(q, state) => match state {
                CardinalState::PlusX | CardinalState::MinusX => self.hadamard(q),
                CardinalState::PlusY | CardinalState::MinusY => {
                    self.hadamard(q);
                    self.phase(q);
                }
                CardinalState::PlusZ | CardinalState::MinusZ => {}
            },
            Gate::Cx { control, target } => {
                self.x ^= (self.x >> control & 1) << target;
                self.z ^= (self.z >> target & 1) << control;
            }
            Gate::Swap(a, b) => {
                for mask in [&mut self.x, &mut self.z] {
                    let (va, vb) = (*mask >> a & 1, *mask >> b & 1);
                    if va != vb {
                        *mask ^= (1 << a) | (1 << b);
                    }
                }
            }
            _ => {}
        }
    }
}

fn is_clifford(g: &Gate) -> bool {
    !matches!(g, Gate::U3 { .. })
}

struct FrameSampler {
    body: Vec<Gate>,
    measures: Vec<(usize, usize)>,
    cumulative: Vec<(f64, u64)>,
    noise: NoiseModel,
}

impl FrameSampler {
    fn new(gates: &[Gate], width: usize, noise: &NoiseModel) -> Option<FrameSampler> {
        if noise.damping() > 0.0 {
            return None;
        }
        let start = gates.iter().position(|g| !matches!(g, Gate::Reset(_))).unwrap_or(gates.len());
        let end = gates.iter().position(|g| matches!(g, Gate::Measure { .. })).unwrap_or(gates.len());
        if end < start || !gates[end..].iter().all(|g| matches!(g, Gate::Measure { .. })) {
            return None;
        }
        let body = &gates[start..end];
        if body.iter().any(|g| matches!(g, Gate::Reset(_) | Gate::CondX { .. } | Gate::CondZ { .. })) {
            return None;
        }
        let noisy_gates = noise.p1 > 0.0 || noise.p2 > 0.0;
        if noisy_gates && !body.iter().all(is_clifford) {
            return None;
        }
        let mut state = SparseState::zero(width);
        for g in body {
            state.apply(g);
        }
        let measures: Vec<(usize, usize)> = gates[end..]
            .iter()
            .filter_map(|g| match *g {
                Gate::Measure { qubit, bit } => Some((qubit, bit)),
                _ => None,
            })
            .collect();
        let mask = measures.iter().fold(0u64, |m, &(q, _)| m | 1 << q);
        let mut acc = 0.0;
        let cumulative = state
            .marginal(mask)
            .into_iter()
            .map(|(k, p)| {
                acc += p;
                (acc, k)
            })
            .collect();
        Some(FrameSampler { body: body.to_vec(), measures, cumulative, noise: *noise })
    }

    fn shot(&self, rng: &mut ChaCha8Rng) -> u64 {
        let total = self.cumulative.last().map_or(1.0, |c| c.0);
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&(c, _)| c <= u).min(self.cumulative.len() - 1);
        let mut outcome = self.cumulative[idx].1;

        let (p1, p2) = (self.noise.p1, self.noise.p2);
        if p1 > 0.0 || p2 > 0.0 {
            let mut frame = Frame::default();
            for g in &self.body {
                frame.push(g);
                if g.is_two_qubit() {
                    if p2 > 0.0 && rng.gen::<f64>() < p2 {
                        let k: u8 = rng.gen_range(1..16);
                        let qs = g.qubits();
                        frame.set(qs[0], k & 3);
                        frame.set(qs[1], k >> 2);
                    }
                } else if p1 > 0.0 && rng.gen::<f64>() < p1 {
                    frame.set(g.qubits()[0], rng.gen_range(1..=3));
                }
            }
            outcome ^= frame.x;
        }

        let mut bits = 0u64;
        for &(q, bit) in &self.measures {
            let mut v = outcome >> q & 1 == 1;
            if self.noise.readout_eps > 0.0 && rng.gen::<f64>() < self.noise.readout_eps {
                v = !v;
            }
            if v {
                bits |= 1 << bit;
            }
        }
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{build_circuit, CardinalState, ProtocolConfig, ProtocolId, Variant};
    use crate::topology::Path;

    fn transmit(n: u32, s: CardinalState) -> Circuit {
        build_circuit(ProtocolId::Transmit, &Path((0..n).collect()), &Variant::cardinal(s), &ProtocolConfig::default())
            .unwrap()
    }

    #[test]
    fn noiseless_transmit_all_zero() {
        let r = run_trajectories(&transmit(4, CardinalState::PlusZ), &NoiseModel::noiseless(), 1000, 1).unwrap();
        assert_eq!(r.counts, BTreeMap::from([("0".to_string(), 1000)]));
    }

    #[test]
    fn forced_readout_flip() {
        let noise = NoiseModel { readout_eps: 1.0, ..Default::default() };
        let r = run_trajectories(&transmit(4, CardinalState::PlusZ), &noise, 1000, 1).unwrap();
        assert_eq!(r.counts, BTreeMap::from([("1".to_string(), 1000)]));
    }

    #[test]
    fn seed_determinism_and_sum() {
        let c = transmit(5, CardinalState::MinusY);
        let noise = NoiseModel { p1: 0.01, p2: 0.05, readout_eps: 0.02, idle_damping: None };
        let a = run_trajectories(&c, &noise, 3000, 99).unwrap();
        let b = run_trajectories(&c, &noise, 3000, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.values().sum::<u64>(), 3000);
        let sv = SimOptions { method: TrajectoryMethod::Statevector, ..Default::default() };
        let c1 = run_trajectories_with(&c, &noise, 500, 5, &sv).unwrap();
        assert_eq!(c1, run_trajectories_with(&c, &noise, 500, 5, &sv).unwrap());
    }

    #[test]
    fn norm_preserved_gate_by_gate() {
        let cfg = ProtocolConfig::default();
        let path = Path((0..7).collect());
        for protocol in ProtocolId::ALL {
            for v in cfg.variants(protocol) {
                let c = build_circuit(protocol, &path, &v, &cfg).unwrap();
                let mut s = SparseState::zero(c.width());
                for g in &c.gates {
                    s.apply(g);
                    assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn register_limit() {
        let c = transmit(6, CardinalState::PlusZ);
        let opts = SimOptions { qubit_limit: 5, ..Default::default() };
        assert!(matches!(
            run_trajectories_with(&c, &NoiseModel::noiseless(), 10, 0, &opts),
            Err(SimError::RegisterTooLarge { .. })
        ));
        assert_eq!(run_trajectories(&c, &NoiseModel::noiseless(), 0, 0), Err(SimError::NoShots));
    }

    #[test]
    fn nonadjacent_gate_rejected() {
        let mut c = transmit(4, CardinalState::PlusZ);
        c.gates.insert(5, Gate::Cx { control: 0, target: 3 });
        assert!(matches!(run_trajectories(&c, &NoiseModel::noiseless(), 10, 0), Err(SimError::InvalidCircuit(_))));
    }
}
