//! Exact density-matrix evolution for small registers.
//!
//! ρ is stored as a vector over 2n bits: row index in the low n bits, column
//! index in the high n bits. A unitary `U` on qubit `q` acts as `U` on bit `q`
//! and `conj(U)` on bit `q + n`.
//!
//! Depolarizing noise is applied in replacement form rather than by Pauli
//! insertion: one qubit goes to `(1 - 4p/3) ρ + (4p/3) I/2 ⊗ Tr_q ρ`, a gate
//! pair to `(1 - 16p/15) ρ + (16p/15) I/4 ⊗ Tr_ab ρ`. Damping and reset are
//! Kraus maps. Measurements whose bit feeds a classical condition branch the
//! state; all others are read from the final diagonal.

use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{bitstring, layers, lower, one_qubit_matrix, Mat2, NoiseModel, Result, SimError, SimOptions, PX, PZ};
use crate::protocols::{Circuit, Gate};

pub const ORACLE_QUBIT_LIMIT: usize = 10;

/// Exact probabilities of the recorded register.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub num_bits: usize,
    pub probs: BTreeMap<String, f64>,
}

impl Distribution {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn probability_where(&self, mut pred: impl FnMut(&[u8]) -> bool) -> f64 {
        self.probs.iter().filter(|(k, _)| pred(&super::bits_of(k))).map(|(_, p)| p).sum()
    }

    pub fn get(&self, key: &str) -> f64 {
        self.probs.get(key).copied().unwrap_or(0.0)
    }
}

struct Rho {
    n: usize,
    v: Vec<Complex64>,
}

impl Rho {
    fn zero(n: usize) -> Rho {
        let mut v = vec![Complex64::new(0.0, 0.0); 1 << (2 * n)];
        v[0] = Complex64::new(1.0, 0.0);
        Rho { n, v }
    }

    fn apply_on_bit(v: &mut [Complex64], bit: usize, m: &Mat2) {
        let mask = 1usize << bit;
        for i0 in 0..v.len() {
            if i0 & mask != 0 {
                continue;
            }
            let i1 = i0 | mask;
            let (a, b) = (v[i0], v[i1]);
            v[i0] = m[0][0] * a + m[0][1] * b;
            v[i1] = m[1][0] * a + m[1][1] * b;
        }
    }

    fn unitary_1q(&mut self, q: usize, m: &Mat2) {
        let conj = [[m[0][0].conj(), m[0][1].conj()], [m[1][0].conj(), m[1][1].conj()]];
        Self::apply_on_bit(&mut self.v, q, m);
        Self::apply_on_bit(&mut self.v, q + self.n, &conj);
    }

    fn permute(&mut self, f: impl Fn(usize) -> usize) {
        let mut out = vec![Complex64::new(0.0, 0.0); self.v.len()];
        for (i, &a) in self.v.iter().enumerate() {
            out[f(i)] = a;
        }
        self.v = out;
    }

    fn cx(&mut self, c: usize, t: usize) {
        let n = self.n;
        self.permute(|i| {
            let mut j = i;
            if i >> c & 1 == 1 {
                j ^= 1 << t;
            }
            if i >> (c + n) & 1 == 1 {
                j ^= 1 << (t + n);
            }
            j
        });
    }

    fn swap(&mut self, a: usize, b: usize) {
        let n = self.n;
        let swap_bits = |i: usize, x: usize, y: usize| {
            if (i >> x & 1) != (i >> y & 1) {
                i ^ (1 << x) ^ (1 << y)
            } else {
                i
            }
        };
        self.permute(|i| swap_bits(swap_bits(i, a, b), a + n, b + n));
    }

    /// Replaces the listed qubits by the maximally mixed state with weight `w`.
    fn replace_mixed(&mut self, qubits: &[usize], w: f64) {
        if w == 0.0 {
            return;
        }
        let n = self.n;
        let diag_masks: Vec<usize> = qubits.iter().map(|&q| (1 << q) | (1 << (q + n))).collect();
        let full: usize = diag_masks.iter().fold(0, |m, d| m | d);
        let k = qubits.len();
        let norm = 1.0 / (1u32 << k) as f64;
        let old = self.v.clone();
        for a in self.v.iter_mut() {
            *a *= 1.0 - w;
        }
        for base in 0..old.len() {
            if base & full != 0 {
                continue;
            }
            let combos: Vec<usize> = (0..1usize << k)
                .map(|s| diag_masks.iter().enumerate().fold(base, |i, (j, d)| if s >> j & 1 == 1 { i | d } else { i }))
                .collect();
            let traced: Complex64 = combos.iter().map(|&i| old[i]).sum::<Complex64>() * norm;
            if traced == Complex64::new(0.0, 0.0) {
                continue;
            }
            for &i in &combos {
                self.v[i] += w * traced;
            }
        }
    }

    fn kraus_1q(&mut self, q: usize, ops: &[Mat2]) {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.v.len()];
        for k in ops {
            let mut copy = Rho { n: self.n, v: self.v.clone() };
            copy.unitary_1q(q, k);
            for (a, b) in acc.iter_mut().zip(copy.v) {
                *a += b;
            }
        }
        self.v = acc;
    }

    fn diag(&self, r: usize) -> f64 {
        self.v[r | (r << self.n)].re
    }

    fn trace(&self) -> f64 {
        (0..1usize << self.n).map(|r| self.diag(r)).sum()
    }

    /// Keeps only the block where qubit `q` reads `value` on both sides.
    fn project(&self, q: usize, value: bool) -> Rho {
        let n = self.n;
        let v = self
            .v
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let (r, c) = (i >> q & 1 == 1, i >> (q + n) & 1 == 1);
                if r == value && c == value {
                    a
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Rho { n, v }
    }

    fn add_scaled(&mut self, other: &Rho, w: f64) {
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += w * b;
        }
    }
}

fn damping_kraus(gamma: f64) -> [Mat2; 2] {
    let z = Complex64::new(0.0, 0.0);
    [
        [[Complex64::new(1.0, 0.0), z], [z, Complex64::new((1.0 - gamma).sqrt(), 0.0)]],
        [[z, Complex64::new(gamma.sqrt(), 0.0)], [z, z]],
    ]
}

fn reset_kraus() -> [Mat2; 2] {
    let (z, o) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
    [[[o, z], [z, z]], [[z, o], [z, z]]]
}

/// Exact outcome distribution of `circuit` under `noise`.
pub fn run_density_matrix(circuit: &Circuit, noise: &NoiseModel) -> Result<Distribution> {
    run_density_matrix_with(circuit, noise, &SimOptions::default())
}

pub fn run_density_matrix_with(circuit: &Circuit, noise: &NoiseModel, options: &SimOptions) -> Result<Distribution> {
    noise.validate()?;
    let n = circuit.width();
    if n > ORACLE_QUBIT_LIMIT {
        return Err(SimError::RegisterTooLarge { width: n, limit: ORACLE_QUBIT_LIMIT });
    }
    let gates = lower(circuit, options)?;

    let conditioned: Vec<usize> = gates
        .iter()
        .filter_map(|g| match *g {
            Gate::CondX { bit, .. } | Gate::CondZ { bit, .. } => Some(bit),
            _ => None,
        })
        .collect();
    // Measurements read at the end: bit not conditioned on, qubit untouched afterwards.
    let deferred: Vec<bool> = gates
        .iter()
        .enumerate()
        .map(|(i, g)| match *g {
            Gate::Measure { qubit, bit } => {
                !conditioned.contains(&bit) && gates[i + 1..].iter().all(|h| !h.qubits().contains(&qubit))
            }
            _ => false,
        })
        .collect();
    let deferred_gates: Vec<Gate> = gates.iter().zip(&deferred).filter(|(_, &d)| d).map(|(g, _)| *g).collect();

    let eps = noise.readout_eps;
    let gamma = noise.damping();
    let mut branches: Vec<(u64, Rho)> = vec![(0, Rho::zero(n))];
    let mut measured = vec![false; n];

    for layer in layers(&gates, n, circuit.num_bits) {
        for g in &layer {
            match *g {
                Gate::Measure { qubit, bit } => {
                    measured[qubit] = true;
                    if deferred_gates.contains(g) {
                        continue;
                    }
                    let mut next = Vec::with_capacity(branches.len() * 2);
                    for (bits, rho) in branches {
                        let p0 = rho.project(qubit, false);
                        let p1 = rho.project(qubit, true);
                        for recorded in [false, true] {
                            let (hit, miss) = if recorded { (&p1, &p0) } else { (&p0, &p1) };
                            let mut r = Rho { n, v: vec![Complex64::new(0.0, 0.0); hit.v.len()] };
                            r.add_scaled(hit, 1.0 - eps);
                            r.add_scaled(miss, eps);
                            if r.trace() > 1e-15 {
                                next.push((if recorded { bits | 1 << bit } else { bits }, r));
                            }
                        }
                    }
                    branches = next;
                }
                Gate::Reset(q) => {
                    measured[q] = false;
                    for (_, rho) in branches.iter_mut() {
                        rho.kraus_1q(q, &reset_kraus());
                    }
                }
                Gate::CondX { qubit, bit } | Gate::CondZ { qubit, bit } => {
                    let m = if matches!(g, Gate::CondX { .. }) { PX } else { PZ };
                    for (bits, rho) in branches.iter_mut() {
                        if *bits >> bit & 1 == 1 {
                            rho.unitary_1q(qubit, &m);
                            rho.replace_mixed(&[qubit], 4.0 * noise.p1 / 3.0);
                        }
                    }
                }
                Gate::Cx { control, target } => {
                    for (_, rho) in branches.iter_mut() {
                        rho.cx(control, target);
                        rho.replace_mixed(&[control, target], 16.0 * noise.p2 / 15.0);
                    }
                }
                Gate::Swap(a, b) => {
                    for (_, rho) in branches.iter_mut() {
                        rho.swap(a, b);
                        rho.replace_mixed(&[a, b], 16.0 * noise.p2 / 15.0);
                    }
                }
                _ => {
                    let (q, m) = one_qubit_matrix(g).expect("single-qubit unitary");
                    for (_, rho) in branches.iter_mut() {
                        rho.unitary_1q(q, &m);
                        rho.replace_mixed(&[q], 4.0 * noise.p1 / 3.0);
                    }
                }
            }
        }
        if gamma > 0.0 {
            for q in super::idle_qubits(&layer, n) {
                if !measured[q] {
                    for (_, rho) in branches.iter_mut() {
                        rho.kraus_1q(q, &damping_kraus(gamma));
                    }
                }
            }
        }
    }

    let mut probs: BTreeMap<u64, f64> = BTreeMap::new();
    for (bits, rho) in &branches {
        for r in 0..1usize << n {
            let p = rho.diag(r);
            if p.abs() < 1e-300 {
                continue;
            }
            let mut key = *bits;
            for g in &deferred_gates {
                if let Gate::Measure { qubit, bit } = *g {
                    if r >> qubit & 1 == 1 {
                        key |= 1 << bit;
                    }
                }
            }
            *probs.entry(key).or_insert(0.0) += p;
        }
    }
    if eps > 0.0 {
        for g in &deferred_gates {
            if let Gate::Measure { bit, .. } = *g {
                let mut mixed = BTreeMap::new();
                for (&k, &p) in &probs {
                    *mixed.entry(k).or_insert(0.0) += (1.0 - eps) * p;
                    *mixed.entry(k ^ 1 << bit).or_insert(0.0) += eps * p;
                }
                probs = mixed;
            }
        }
    }
    Ok(Distribution {
        num_bits: circuit.num_bits,
        probs: probs.into_iter().map(|(k, p)| (bitstring(k, circuit.num_bits), p)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{build_circuit, CardinalState, ProtocolConfig, ProtocolId, TeleportCorrection, Variant};
    use crate::topology::Path;

    fn line(n: u32) -> Path {
        Path((0..n).collect())
    }

    #[test]
    fn bell_prep_and_measure() {
        let c = build_circuit(
            ProtocolId::BellStateTransfer,
            &line(3),
            &ProtocolConfig::default().variants(ProtocolId::BellStateTransfer)[0],
            &ProtocolConfig::default(),
        )
        .unwrap();
        let d = run_density_matrix(&c, &NoiseModel::noiseless()).unwrap();
        assert!((d.get("00") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_depolarized_transmit_is_half() {
        // p1 = 3/4 sends the Bloch vector to zero at every gate.
        let c = build_circuit(
            ProtocolId::Transmit,
            &line(3),
            &Variant::cardinal(CardinalState::PlusX),
            &ProtocolConfig::default(),
        )
        .unwrap();
        let d = run_density_matrix(&c, &NoiseModel::depolarizing(0.75, 0.0)).unwrap();
        assert!((d.get("0") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_everything_succeeds() {
        for correction in [TeleportCorrection::PauliFrame, TeleportCorrection::FeedForward] {
            let cfg = ProtocolConfig { teleport_correction: correction, ..Default::default() };
            for protocol in ProtocolId::ALL {
                for n in cfg.min_path_len(protocol)..=8 {
                    for v in cfg.variants(protocol) {
                        let c = build_circuit(protocol, &line(n as u32), &v, &cfg).unwrap();
                        let d = run_density_matrix(&c, &NoiseModel::noiseless()).unwrap();
                        assert!((d.total() - 1.0).abs() < 1e-10);
                        let ok = d.probability_where(|b| c.is_success(b));
                        assert!((ok - 1.0).abs() < 1e-10, "{protocol} n={n} {v}: {ok}");
                    }
                }
            }
        }
    }

    #[test]
    fn register_limit() {
        let c = build_circuit(
            ProtocolId::Transmit,
            &line(11),
            &Variant::cardinal(CardinalState::PlusZ),
            &ProtocolConfig::default(),
        )
        .unwrap();
        assert!(matches!(run_density_matrix(&c, &NoiseModel::noiseless()), Err(SimError::RegisterTooLarge { .. })));
    }

    #[test]
    fn readout_and_damping_normalized() {
        let cfg = ProtocolConfig { teleport_correction: TeleportCorrection::FeedForward, ..Default::default() };
        let c = build_circuit(ProtocolId::Teleportation, &line(5), &Variant::cardinal(CardinalState::MinusX), &cfg)
            .unwrap();
        let noise = NoiseModel { p1: 0.02, p2: 0.05, readout_eps: 0.03, idle_damping: Some(0.01) };
        let d = run_density_matrix(&c, &noise).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-10);
    }
}
