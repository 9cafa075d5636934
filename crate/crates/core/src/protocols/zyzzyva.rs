//! Zyzzyva: speculative replies collected by the client, with a commit
//! round when the fast quorum is missed.

use super::{PhaseTrace, Protocol, ProtocolConfig, QuorumTable};
use crate::error::{Error, Result};
use crate::phase::{crash_step, total_probability, FnKernel};
use crate::prob::{at_least, binom_vec, pmf_binomial, range_unchecked, FailureParams, Pmf};

pub fn zyzzyva_model(config: &ProtocolConfig, failures: &FailureParams) -> Result<PhaseTrace> {
    config.validate()?;
    if config.protocol != Protocol::Zyzzyva {
        return Err(Error::config(format!(
            "expected a zyzzyva configuration, got {}",
            config.protocol
        )));
    }
    super::evaluate(config, failures)
}

/// Mixes a per-count success probability over `prior` into a client
/// Bernoulli.
fn client_stage(prior: &Pmf, success: impl Fn(usize) -> f64) -> Pmf {
    let p: f64 = prior
        .mass()
        .iter()
        .enumerate()
        .map(|(k, w)| w * success(k))
        .sum();
    Pmf::bernoulli(p.clamp(0.0, 1.0))
}

pub(super) fn model(
    config: &ProtocolConfig,
    failures: &FailureParams,
    quorums: &QuorumTable,
) -> Result<PhaseTrace> {
    let QuorumTable::Zyzzyva { fast, slow, commit } = *quorums else {
        unreachable!("checked by evaluate_with");
    };
    let n = config.n;
    let deliver = 1.0 - failures.p_l;
    let p_c = failures.p_c;

    // the primary holds its own ordering message and counts as a responder
    let c1 = pmf_binomial(n as u64 - 1, deliver)?;
    let n1 = crash_step(&c1, p_c)?.shifted(1, n);

    let c2_fast = client_stage(&n1, |k| at_least(k, deliver, fast));
    let c2_slow = client_stage(&n1, |k| range_unchecked(k, deliver, slow, fast - 1));
    let n2 = crash_step(&c2_slow, p_c)?;

    let c3_kernel = FnKernel::new(n, |client| {
        let reach = 1.0 - failures.p_l.powi(client as i32);
        Ok(Pmf::from_raw(binom_vec(n, reach)))
    });
    let c3 = total_probability(&c3_kernel, &n2)?;
    let n3 = crash_step(&c3, p_c)?;
    let c4 = client_stage(&n3, |k| at_least(k, deliver, commit));
    let n4 = crash_step(&c4, p_c)?;

    let mut trace = PhaseTrace::new(*config, *failures);
    let fast_p = c2_fast.prob(1);
    let slow_p = c4.prob(1);
    trace.path("fast", fast_p);
    trace.path("slow", slow_p);
    trace.path("combined", fast_p + slow_p);
    trace.push("C1", c1);
    trace.push("N1", n1);
    trace.push("C2_fast", c2_fast);
    trace.push("C2_slow", c2_slow);
    trace.push("N2", n2);
    trace.push("C3", c3);
    trace.push("N3", n3);
    trace.push("C4", c4);
    trace.push("N4", n4);
    trace.finish()
}
