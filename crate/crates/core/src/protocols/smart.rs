//! BFT-SMaRt: PBFT's pattern without the pre-prepare counting as a prepare,
//! and with commits open to holders that missed the prepare quorum.

use super::{PhaseTrace, Protocol, ProtocolConfig, QuorumTable};
use crate::error::{Error, Result};
use crate::phase::{
    crash_kernel, crash_step, joint_via_kernel, total_probability, total_probability_joint,
    Composed, FnJointKernel, FnKernel, Memoized,
};
use crate::prob::{at_least, binom_vec, pmf_binomial, FailureParams, Pmf};

pub fn smart_model(config: &ProtocolConfig, failures: &FailureParams) -> Result<PhaseTrace> {
    config.validate()?;
    if config.protocol != Protocol::BftSmart {
        return Err(Error::config(format!(
            "expected a bft-smart configuration, got {}",
            config.protocol
        )));
    }
    super::evaluate(config, failures)
}

/// Commit count among `n1 + 1` pre-prepare holders, `n2` of which sent a
/// commit.
pub(crate) fn commit_kernel(
    n1: usize,
    n2: usize,
    deliver: f64,
    commits_own: i64,
    commits_skip: i64,
) -> Result<Pmf> {
    if n2 > n1 + 1 {
        return Err(Error::Numeric(format!(
            "{n2} commit senders exceed {} pre-prepare holders",
            n1 + 1
        )));
    }
    let pa = if n2 == 0 {
        0.0
    } else {
        at_least(n2 - 1, deliver, commits_own)
    };
    let pb = at_least(n2, deliver, commits_skip);
    let senders = Pmf::from_raw(binom_vec(n2, pa));
    let skipped = Pmf::from_raw(binom_vec(n1 + 1 - n2, pb));
    Ok(senders.convolve(&skipped))
}

pub(super) fn model(
    config: &ProtocolConfig,
    failures: &FailureParams,
    quorums: &QuorumTable,
) -> Result<PhaseTrace> {
    let QuorumTable::Smart {
        prepares,
        commits_own,
        commits_skip,
        decided,
    } = *quorums
    else {
        unreachable!("checked by evaluate_with");
    };
    let n = config.n;
    let deliver = 1.0 - failures.p_l;
    let p_c = failures.p_c;

    let c1 = pmf_binomial(n as u64 - 1, deliver)?;
    let n1 = crash_step(&c1, p_c)?;

    // every holder, primary included, hears prepares from the other n1
    let c2_kernel = Memoized::new(FnKernel::new(n, |n1| {
        Ok(Pmf::from_raw(binom_vec(
            n1 + 1,
            at_least(n1, deliver, prepares),
        )))
    }));
    let c2 = total_probability(&c2_kernel, &n1)?;
    let n2 = total_probability(&crash_kernel(n, p_c), &c2)?;

    let n2_given_n1 = Composed::new(&c2_kernel, crash_kernel(n, p_c));
    let joint = joint_via_kernel(&n1, &n2_given_n1)?;
    let c3_kernel = FnJointKernel::new(n, |n1, n2| {
        commit_kernel(n1, n2, deliver, commits_own, commits_skip)
    });
    let c3 = total_probability_joint(&c3_kernel, &joint)?;
    let n3 = total_probability(&crash_kernel(n, p_c), &c3)?;

    let mut trace = PhaseTrace::new(*config, *failures);
    trace.path("happy", n3.tail(decided.max(0) as usize));
    trace.push("C1", c1);
    trace.push("N1", n1);
    trace.push("C2", c2);
    trace.push("N2", n2);
    trace.push("C3", c3);
    trace.push("N3", n3);
    trace.finish()
}
