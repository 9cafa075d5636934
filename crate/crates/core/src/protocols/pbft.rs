//! PBFT: pre-prepare broadcast followed by the prepare and commit quorums.

use serde::{Deserialize, Serialize};

use super::{PhaseTrace, Protocol, ProtocolConfig, QuorumTable};
use crate::error::{Error, Result};
use crate::phase::{
    crash_kernel, crash_step, total_probability, ConditionalKernel, FnKernel, Memoized,
};
use crate::prob::{at_least, binom_vec, pmf_binomial, FailureParams, Pmf};

/// How many processes are exposed to crashes in the first phase of the
/// crash-only chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashOnlyConvention {
    /// All `n` processes, the primary included.
    #[default]
    AllProcesses,
    /// The primary always completes phase one; only `n - 1` backups may
    /// crash there.
    PrimaryExempt,
}

fn require_pbft(config: &ProtocolConfig) -> Result<()> {
    config.validate()?;
    if config.protocol != Protocol::Pbft {
        return Err(Error::config(format!(
            "expected a pbft configuration, got {}",
            config.protocol
        )));
    }
    Ok(())
}

/// Crash-only chain over reliable links: every phase thins the survivors of
/// the previous one.
pub fn pbft_crash_only(
    config: &ProtocolConfig,
    p_c: f64,
    convention: CrashOnlyConvention,
) -> Result<PhaseTrace> {
    require_pbft(config)?;
    let failures = FailureParams::new(0.0, p_c)?;
    let n = config.n;
    let n1 = match convention {
        CrashOnlyConvention::AllProcesses => pmf_binomial(n as u64, 1.0 - p_c)?,
        CrashOnlyConvention::PrimaryExempt => pmf_binomial(n as u64 - 1, 1.0 - p_c)?.shifted(1, n),
    };
    let n2 = crash_step(&n1, p_c)?;
    let n3 = crash_step(&n2, p_c)?;

    let mut trace = PhaseTrace::new(*config, failures);
    trace.path("happy", n3.tail(2 * config.f + 1));
    trace.path("liveness", n3.tail(config.f + 1));
    trace.push("N1", n1);
    trace.push("N2", n2);
    trace.push("N3", n3);
    trace.finish()
}

pub fn pbft_model(config: &ProtocolConfig, failures: &FailureParams) -> Result<PhaseTrace> {
    require_pbft(config)?;
    super::evaluate(config, failures)
}

pub(super) fn model(
    config: &ProtocolConfig,
    failures: &FailureParams,
    quorums: &QuorumTable,
) -> Result<PhaseTrace> {
    let QuorumTable::Pbft {
        primary_prepares,
        backup_prepares,
        commits,
        decided,
        live,
    } = *quorums
    else {
        unreachable!("checked by evaluate_with");
    };
    let n = config.n;
    let deliver = 1.0 - failures.p_l;
    let p_c = failures.p_c;

    // backups that received the pre-prepare, then those that also stayed up
    let c1 = pmf_binomial(n as u64 - 1, deliver)?;
    let n1 = crash_step(&c1, p_c)?;

    let primary_quorum = |n1: usize| at_least(n1, deliver, primary_prepares);
    let backup_prob = |n1: usize| {
        if n1 == 0 {
            0.0
        } else {
            at_least(n1 - 1, deliver, backup_prepares)
        }
    };

    let c2n_kernel = Memoized::new(FnKernel::new(n - 1, |n1| {
        Ok(Pmf::from_raw(binom_vec(n1, backup_prob(n1))))
    }));
    // the primary's quorum is independent of every backup's, so C2 is the
    // backup count plus a Bernoulli
    let c2_kernel = FnKernel::new(n, |n1| {
        let backups = c2n_kernel.eval(n1)?;
        Ok(backups.convolve(&Pmf::bernoulli(primary_quorum(n1))))
    });

    let c2n = total_probability(&c2n_kernel, &n1)?;
    let c2 = total_probability(&c2_kernel, &n1)?;
    let cp: f64 = n1
        .mass()
        .iter()
        .enumerate()
        .map(|(k, w)| w * primary_quorum(k))
        .sum();
    let n2 = total_probability(&crash_kernel(n, p_c), &c2)?;

    // commits travel among the replicas that survived the prepare phase
    let c3_kernel = FnKernel::new(n, |n2| {
        let p3 = if n2 == 0 {
            0.0
        } else {
            at_least(n2 - 1, deliver, commits)
        };
        Ok(Pmf::from_raw(binom_vec(n2, p3)))
    });
    let c3 = total_probability(&c3_kernel, &n2)?;
    let n3 = total_probability(&crash_kernel(n, p_c), &c3)?;

    let mut trace = PhaseTrace::new(*config, *failures);
    trace.primary_quorum_prob = Some(cp.clamp(0.0, 1.0));
    trace.path("happy", n3.tail(decided.max(0) as usize));
    trace.path("liveness", n3.tail(live.max(0) as usize));
    trace.push("C1", c1);
    trace.push("N1", n1);
    trace.push("C2n", c2n);
    trace.push("C2", c2);
    trace.push("N2", n2);
    trace.push("C3", c3);
    trace.push("N3", n3);
    trace.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::success_probability;

    fn cfg(n: usize, f: usize) -> ProtocolConfig {
        ProtocolConfig::new(Protocol::Pbft, n, f, 0).unwrap()
    }

    /// Per-process, per-phase survival enumerated over all 2^(n*3) patterns.
    fn enumerate_crash_only(n: usize, p_c: f64, primary_exempt: bool) -> [Vec<f64>; 3] {
        let mut out = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
        let bits = 3 * n;
        for pattern in 0u64..(1 << bits) {
            // bit (phase * n + process) set = process up in that phase
            let up = |phase: usize, proc: usize| pattern >> (phase * n + proc) & 1 == 1;
            if primary_exempt && !up(0, 0) {
                continue;
            }
            let mut weight = 1.0;
            for phase in 0..3 {
                for proc in 0..n {
                    if primary_exempt && phase == 0 && proc == 0 {
                        continue;
                    }
                    weight *= if up(phase, proc) { 1.0 - p_c } else { p_c };
                }
            }
            for (phase, dist) in out.iter_mut().enumerate() {
                let alive = (0..n)
                    .filter(|&proc| (0..=phase).all(|ph| up(ph, proc)))
                    .count();
                dist[alive] += weight;
            }
        }
        out
    }

    #[test]
    fn crash_only_examples() {
        let t = pbft_crash_only(&cfg(4, 1), 0.0, CrashOnlyConvention::AllProcesses).unwrap();
        assert_eq!(t.stage("N3").unwrap().prob(4), 1.0);
        assert_eq!(t.path_prob("happy"), Some(1.0));
        let t = pbft_crash_only(&cfg(4, 1), 1.0, CrashOnlyConvention::AllProcesses).unwrap();
        assert_eq!(t.path_prob("happy"), Some(0.0));
    }

    #[test]
    fn crash_only_matches_enumeration() {
        for &p_c in &[0.1, 0.3] {
            for (conv, exempt) in [
                (CrashOnlyConvention::AllProcesses, false),
                (CrashOnlyConvention::PrimaryExempt, true),
            ] {
                let trace = pbft_crash_only(&cfg(4, 1), p_c, conv).unwrap();
                let oracle = enumerate_crash_only(4, p_c, exempt);
                for (name, dist) in ["N1", "N2", "N3"].iter().zip(&oracle) {
                    let pmf = trace.stage(name).unwrap();
                    for (k, e) in dist.iter().enumerate() {
                        assert!((pmf.prob(k) - e).abs() < 1e-12, "{name} k={k}");
                    }
                }
                let happy: f64 = oracle[2][3..].iter().sum();
                assert!((trace.path_prob("happy").unwrap() - happy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_model_trivial_cases() {
        let t = pbft_model(&cfg(4, 1), &FailureParams::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(t.stage("N3").unwrap().prob(4), 1.0);
        assert_eq!(t.path_prob("happy"), Some(1.0));
        assert_eq!(t.primary_quorum_prob, Some(1.0));

        let t = pbft_model(&cfg(4, 1), &FailureParams::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(t.stage("C1").unwrap(), &Pmf::point(3, 0));
        assert_eq!(t.path_prob("happy"), Some(0.0));
        assert_eq!(success_probability(&t, 3).unwrap(), 0.0);
    }

    #[test]
    fn stages_have_documented_supports() {
        let t = pbft_model(&cfg(7, 2), &FailureParams::new(0.1, 0.05).unwrap()).unwrap();
        let supports: Vec<_> = t
            .stages
            .iter()
            .map(|s| (s.name.as_str(), s.pmf.support_max()))
            .collect();
        assert_eq!(
            supports,
            [
                ("C1", 6),
                ("N1", 6),
                ("C2n", 6),
                ("C2", 7),
                ("N2", 7),
                ("C3", 7),
                ("N3", 7)
            ]
        );
        for s in &t.stages {
            assert!((s.pmf.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn c2_convolves_primary_and_backups() {
        // tiny case checked by hand: n=4, f=1, all three backups hold the
        // pre-prepare; each backup needs 1 of 2 prepares, the primary 2 of 3
        let fp = FailureParams::new(0.5, 0.0).unwrap();
        let t = pbft_model(&cfg(4, 1), &fp).unwrap();
        let c1 = t.stage("C1").unwrap();
        let mut expected = [0.0; 5];
        for (n1, w) in c1.mass().iter().enumerate() {
            let backup = if n1 == 0 {
                0.0
            } else {
                1.0 - 0.5f64.powi(n1 as i32 - 1)
            };
            let primary: f64 = (2..=n1)
                .map(|k| crate::prob::binom_pmf(n1 as u64, 0.5, k as u64).unwrap())
                .sum();
            for k in 0..=n1 {
                let b = crate::prob::binom_pmf(n1 as u64, backup, k as u64).unwrap();
                expected[k] += w * b * (1.0 - primary);
                expected[k + 1] += w * b * primary;
            }
        }
        let c2 = t.stage("C2").unwrap();
        for (k, e) in expected.iter().enumerate() {
            assert!((c2.prob(k) - e).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn reliable_links_agree_with_crash_chain_above_quorum() {
        // with p_l = 0 the quorum gates only move sub-quorum mass to zero, so
        // the chains agree on every count that can still decide
        for &(n, f) in &[(4, 1), (7, 2), (10, 3)] {
            for &p_c in &[0.05, 0.2, 0.4] {
                let full = pbft_model(&cfg(n, f), &FailureParams::new(0.0, p_c).unwrap()).unwrap();
                let chain =
                    pbft_crash_only(&cfg(n, f), p_c, CrashOnlyConvention::PrimaryExempt).unwrap();
                let n1_full = full.stage("N1").unwrap().shifted(1, n);
                for k in 0..=n {
                    assert!((n1_full.prob(k) - chain.stage("N1").unwrap().prob(k)).abs() < 1e-9);
                }
                for name in ["N2", "N3"] {
                    for k in 2 * f + 1..=n {
                        let a = full.stage(name).unwrap().prob(k);
                        let b = chain.stage(name).unwrap().prob(k);
                        assert!((a - b).abs() < 1e-9, "{name} n={n} p_c={p_c} k={k}");
                    }
                }
                let a = full.path_prob("happy").unwrap();
                let b = chain.path_prob("happy").unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_other_protocols() {
        let z = ProtocolConfig::minimal(Protocol::Zyzzyva, 1, 0);
        assert!(pbft_model(&z, &FailureParams::reliable()).is_err());
        assert!(pbft_crash_only(&z, 0.1, CrashOnlyConvention::AllProcesses).is_err());
    }
}
