//! Shot counts to fidelity estimates, per-sub-chip statistics and the
//! threshold decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocols::{Axis, ProtocolConfig, ProtocolId, Variant, VariantKind};
use crate::simengine::ShotResult;
use crate::topology::{Path, Stage, SubChipKey};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssessError {
    #[error("{protocol} on {path}: missing result for variant {variant}")]
    MissingVariant { protocol: ProtocolId, path: Path, variant: String },
    #[error("{protocol} on {path}: variant {variant} has zero shots")]
    ZeroShots { protocol: ProtocolId, path: Path, variant: String },
    #[error("cannot aggregate an empty estimate list")]
    Empty,
    #[error("estimate for {0} does not belong to the aggregated protocol")]
    MixedProtocols(Path),
    #[error("duplicate estimate for path {0}")]
    DuplicatePath(Path),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub value: f64,
    pub stderr: f64,
    pub shots_used: u64,
    pub path: Path,
    pub protocol: ProtocolId,
    /// Seed the path's circuits were sampled with.
    pub seed: u64,
}

/// Per-path fidelity from the results of every variant of the protocol.
pub fn estimate_fidelity(
    protocol: ProtocolId,
    path: &Path,
    config: &ProtocolConfig,
    results: &BTreeMap<Variant, ShotResult>,
    seed: u64,
) -> Result<FidelityEstimate, AssessError> {
    let variants = config.variants(protocol);
    let mut rates = Vec::with_capacity(variants.len());
    let mut shots_used = 0;
    for v in &variants {
        let r = results.get(v).ok_or_else(|| AssessError::MissingVariant {
            protocol,
            path: path.clone(),
            variant: v.to_string(),
        })?;
        if r.shots == 0 {
            return Err(AssessError::ZeroShots { protocol, path: path.clone(), variant: v.to_string() });
        }
        let correction = match v.kind {
            VariantKind::HaarState { .. } => crate::protocols::TeleportCorrection::FeedForward,
            _ => config.teleport_correction,
        };
        let ok = r.count_where(|bits| protocol.is_success(v, correction, bits));
        shots_used += r.shots;
        rates.push((v, ok as f64 / r.shots as f64, r.shots as f64));
    }

    let (value, stderr) = match protocol {
        ProtocolId::EntanglementSwapping => {
            let s = |axis: Axis| {
                rates.iter().find(|(v, _, _)| v.kind == VariantKind::Setting(axis)).map(|&(_, s, _)| s).unwrap_or(0.0)
            };
            // <XX> = 2 s_x - 1, <YY> = 1 - 2 s_y, <ZZ> = 2 s_z - 1.
            let witness = (s(Axis::X) + s(Axis::Y) + s(Axis::Z) - 1.0) / 2.0;
            let var: f64 = rates.iter().map(|&(_, s, n)| 4.0 * s * (1.0 - s) / n).sum();
            (witness.clamp(0.0, 1.0), var.sqrt() / 4.0)
        }
        _ => {
            let k = rates.len() as f64;
            let mean = rates.iter().map(|&(_, s, _)| s).sum::<f64>() / k;
            let var: f64 = rates.iter().map(|&(_, s, n)| s * (1.0 - s) / n).sum();
            (mean.clamp(0.0, 1.0), var.sqrt() / k)
        }
    };
    Ok(FidelityEstimate { value, stderr, shots_used, path: path.clone(), protocol, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectStats {
    pub subchip: SubChipKey,
    pub protocol: ProtocolId,
    pub stage: Stage,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub argmin: Path,
    /// Sorted by path.
    pub estimates: Vec<FidelityEstimate>,
}

/// Min/mean/max over paths. Estimates are put in path order first, so the
/// result does not depend on input order.
pub fn aggregate(
    subchip: &SubChipKey,
    protocol: ProtocolId,
    stage: Stage,
    estimates: &[FidelityEstimate],
) -> Result<RectStats, AssessError> {
    if estimates.is_empty() {
        return Err(AssessError::Empty);
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    for w in sorted.windows(2) {
        if w[0].path == w[1].path {
            return Err(AssessError::DuplicatePath(w[0].path.clone()));
        }
    }
    if let Some(e) = sorted.iter().find(|e| e.protocol != protocol) {
        return Err(AssessError::MixedProtocols(e.path.clone()));
    }
    let mean = sorted.iter().map(|e| e.value).sum::<f64>() / sorted.len() as f64;
    let max = sorted.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    // First minimum in path order.
    let arg = sorted.iter().enumerate().fold(0, |best, (i, e)| if e.value < sorted[best].value { i } else { best });
    Ok(RectStats {
        subchip: subchip.clone(),
        protocol,
        stage,
        mean: mean.clamp(sorted[arg].value, max),
        min: sorted[arg].value,
        max,
        argmin: sorted[arg].path.clone(),
        estimates: sorted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pass,
    Fail,
}

/// Pass iff the minimum path fidelity reaches the threshold (closed comparison).
pub fn pass_decision(stats: &RectStats, threshold: f64) -> Decision {
    decide(stats.min, threshold)
}

pub fn decide(min_fidelity: f64, threshold: f64) -> Decision {
    if min_fidelity >= threshold {
        Decision::Pass
    } else {
        Decision::Fail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::CardinalState;

    fn shot(counts: &[(&str, u64)]) -> ShotResult {
        ShotResult {
            counts: counts.iter().map(|&(k, c)| (k.to_string(), c)).collect(),
            shots: counts.iter().map(|c| c.1).sum(),
            circuit_id: String::new(),
            seed: 0,
            backend: String::new(),
        }
    }

    fn est(path: &[u32], value: f64) -> FidelityEstimate {
        FidelityEstimate {
            value,
            stderr: 0.0,
            shots_used: 1,
            path: Path(path.to_vec()),
            protocol: ProtocolId::Transmit,
            seed: 0,
        }
    }

    #[test]
    fn perfect_counts() {
        let cfg = ProtocolConfig::default();
        let results = cfg.variants(ProtocolId::Transmit).into_iter().map(|v| (v, shot(&[("0", 100)]))).collect();
        let e = estimate_fidelity(ProtocolId::Transmit, &Path(vec![1, 2]), &cfg, &results, 0).unwrap();
        assert_eq!((e.value, e.stderr, e.shots_used), (1.0, 0.0, 600));
    }

    #[test]
    fn half_success_is_half() {
        let cfg = ProtocolConfig::default();
        let results =
            cfg.variants(ProtocolId::DoNothing).into_iter().map(|v| (v, shot(&[("0", 50), ("1", 50)]))).collect();
        let e = estimate_fidelity(ProtocolId::DoNothing, &Path(vec![1, 2]), &cfg, &results, 0).unwrap();
        assert_eq!(e.value, 0.5);
    }

    #[test]
    fn large_sample_stderr() {
        // Six variants at 0.664 with ~3.7e6 shots each.
        let cfg = ProtocolConfig::default();
        let n = 3_700_000u64;
        let ok = (0.664 * n as f64).round() as u64;
        let results =
            cfg.variants(ProtocolId::Transmit).into_iter().map(|v| (v, shot(&[("0", ok), ("1", n - ok)]))).collect();
        let e = estimate_fidelity(ProtocolId::Transmit, &Path(vec![1, 2]), &cfg, &results, 0).unwrap();
        assert!((e.value - 0.664).abs() < 1e-6);
        assert!((e.stderr - 1e-4).abs() < 0.1e-4, "{}", e.stderr);
    }

    #[test]
    fn witness_clamped() {
        let cfg = ProtocolConfig::default();
        // Every setting always fails: raw witness -1/2.
        let results = cfg
            .variants(ProtocolId::EntanglementSwapping)
            .into_iter()
            .map(|v| {
                let key = if v.kind == VariantKind::Setting(Axis::Y) { "0000" } else { "0001" };
                (v, shot(&[(key, 10)]))
            })
            .collect();
        let e =
            estimate_fidelity(ProtocolId::EntanglementSwapping, &Path(vec![0, 1, 2, 3, 4]), &cfg, &results, 0).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn missing_and_zero_shots() {
        let cfg = ProtocolConfig::default();
        let mut results: BTreeMap<Variant, ShotResult> = BTreeMap::new();
        let p = Path(vec![1, 2]);
        assert!(matches!(
            estimate_fidelity(ProtocolId::Transmit, &p, &cfg, &results, 0),
            Err(AssessError::MissingVariant { .. })
        ));
        for v in cfg.variants(ProtocolId::Transmit) {
            results.insert(v, shot(&[("0", 5)]));
        }
        results.insert(Variant::cardinal(CardinalState::PlusX), shot(&[]));
        assert!(matches!(
            estimate_fidelity(ProtocolId::Transmit, &p, &cfg, &results, 0),
            Err(AssessError::ZeroShots { .. })
        ));
    }

    #[test]
    fn aggregate_basics() {
        let key = SubChipKey::single(1);
        let s = aggregate(&key, ProtocolId::Transmit, Stage::AllLengths, &[est(&[1, 2], 0.8)]).unwrap();
        assert_eq!((s.min, s.mean, s.max), (0.8, 0.8, 0.8));
        let s =
            aggregate(&key, ProtocolId::Transmit, Stage::AllLengths, &[est(&[2, 3], 0.9), est(&[1, 2], 0.7)]).unwrap();
        assert_eq!((s.min, s.max), (0.7, 0.9));
        assert!((s.mean - 0.8).abs() < 1e-15);
        assert_eq!(s.argmin, Path(vec![1, 2]));
        assert_eq!(aggregate(&key, ProtocolId::Transmit, Stage::AllLengths, &[]), Err(AssessError::Empty));
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(0.5, 0.5), Decision::Pass);
        assert_eq!(decide(0.664, 2.0 / 3.0), Decision::Fail);
        assert_eq!(decide(0.656, 2.0 / 3.0), Decision::Fail);
    }
}
