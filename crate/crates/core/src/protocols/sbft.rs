//! SBFT: signature shares aggregated by `c + 1` collectors, with a fast
//! path closing after four phases and a slow path after six.

use super::{PhaseTrace, Protocol, ProtocolConfig, QuorumTable};
use crate::error::{Error, Result};
use crate::phase::{
    crash_kernel, crash_step, joint_via_kernel, total_probability, total_probability_joint,
    Composed, ConditionalKernel, FnJointKernel, FnKernel, Memoized,
};
use crate::prob::{
    at_least, binom_pmf, binom_vec, pmf_binomial, range_unchecked, FailureParams, Pmf,
};

pub fn sbft_model(config: &ProtocolConfig, failures: &FailureParams) -> Result<PhaseTrace> {
    config.validate()?;
    if config.protocol != Protocol::Sbft {
        return Err(Error::config(format!(
            "expected an sbft configuration, got {}",
            config.protocol
        )));
    }
    super::evaluate(config, failures)
}

/// `holders + Binomial(receivers - holders, 1 - p_l^holders)`: the holders
/// keep their own copy, everyone else needs one of `holders` links.
fn broadcast(holders: usize, receivers: usize, p_l: f64) -> Result<Pmf> {
    if holders > receivers {
        return Err(Error::Numeric(format!(
            "{holders} certificate holders exceed {receivers} receivers"
        )));
    }
    let reach = 1.0 - p_l.powi(holders as i32);
    Ok(Pmf::from_raw(binom_vec(receivers - holders, reach)).shifted(holders, receivers))
}

/// Collectors that end phase two with a slow certificate while no collector
/// has a fast one; the zero entry absorbs every other outcome.
fn exclusive_slow(collectors: usize, p_fast: f64, p_slow: f64) -> Pmf {
    let rest = (1.0 - p_fast - p_slow).max(0.0);
    let mut mass = vec![0.0; collectors + 1];
    for (k, m) in mass.iter_mut().enumerate().skip(1) {
        let choose = if p_slow + rest == 0.0 {
            0.0
        } else {
            // C(c+1, k) p_s^k rest^(c+1-k), via the binomial over p_s + rest
            let total = p_slow + rest;
            binom_pmf(collectors as u64, p_slow / total, k as u64).unwrap_or(0.0)
                * total.powi(collectors as i32)
        };
        *m = choose;
    }
    let taken: f64 = mass[1..].iter().sum();
    mass[0] = (1.0 - taken).max(0.0);
    Pmf::from_raw(mass)
}

struct Chain {
    stages: Vec<(&'static str, Pmf)>,
    success: f64,
}

pub(super) fn model(
    config: &ProtocolConfig,
    failures: &FailureParams,
    quorums: &QuorumTable,
) -> Result<PhaseTrace> {
    let QuorumTable::Sbft {
        fast,
        slow,
        execute,
        commit,
    } = *quorums
    else {
        unreachable!("checked by evaluate_with");
    };
    let n = config.n;
    let collectors = config.c + 1;
    let p_l = failures.p_l;
    let deliver = 1.0 - p_l;
    let p_c = failures.p_c;

    let c1 = pmf_binomial(n as u64 - 1, deliver)?;
    let n1 = crash_step(&c1, p_c)?.shifted(1, n);

    let p_fast = |n1: usize| at_least(n1, deliver, fast);
    let p_slow = |n1: usize| range_unchecked(n1, deliver, slow, fast - 1);

    let collect = |threshold: i64| {
        FnKernel::new(collectors, move |senders| {
            Ok(Pmf::from_raw(binom_vec(
                collectors,
                at_least(senders, deliver, threshold),
            )))
        })
    };
    let certify = FnKernel::new(n, |holders| broadcast(holders, n, p_l));
    let collector_crash = crash_kernel(collectors, p_c);
    let replica_crash = crash_kernel(n, p_c);

    // phases two to four, shared by both paths up to the share threshold
    let run_front = |c2: Pmf, threshold: i64| -> Result<Vec<(&'static str, Pmf)>> {
        let n2 = crash_step(&c2, p_c)?;
        let c3 = total_probability(&certify, &n2)?;
        let n3 = crash_step(&c3, p_c)?;
        let c4 = total_probability(&collect(threshold), &n3)?;
        let n4 = crash_step(&c4, p_c)?;
        Ok(vec![
            ("C2", c2),
            ("N2", n2),
            ("C3", c3),
            ("N3", n3),
            ("C4", c4),
            ("N4", n4),
        ])
    };

    let c2_fast_kernel = FnKernel::new(collectors, |k| {
        Ok(Pmf::from_raw(binom_vec(collectors, p_fast(k))))
    });
    let c2_fast = total_probability(&c2_fast_kernel, &n1)?;
    let fast_front = run_front(c2_fast, execute)?;
    let fast_success = fast_front[4].1.tail(1);
    let fast_chain = Chain {
        stages: fast_front,
        success: fast_success,
    };

    let slow_chain = |c2_kernel: &dyn ConditionalKernel| -> Result<Chain> {
        let c2_kernel = Memoized::new(c2_kernel);
        let c2 = total_probability(&c2_kernel, &n1)?;
        let mut stages = run_front(c2, commit)?;
        // N4 given N1 through every step of phases two to four
        let n4_given_n1 = Composed::new(
            Composed::new(
                Composed::new(Composed::new(&c2_kernel, &collector_crash), &certify),
                Composed::new(&replica_crash, collect(commit)),
            ),
            &collector_crash,
        );
        let joint = joint_via_kernel(&n1, &n4_given_n1)?;
        let c5_kernel =
            FnJointKernel::new(n, |n1, n4| broadcast(n4, n1, p_l).map(|p| p.widened(n)));
        let c5 = total_probability_joint(&c5_kernel, &joint)?;
        let n5 = crash_step(&c5, p_c)?;
        let c6 = total_probability(&collect(execute), &n5)?;
        let n6 = crash_step(&c6, p_c)?;
        let success = c6.tail(1);
        stages.extend([("C5", c5), ("N5", n5), ("C6", c6), ("N6", n6)]);
        Ok(Chain { stages, success })
    };

    let slow_kernel = FnKernel::new(collectors, |k| {
        Ok(Pmf::from_raw(binom_vec(collectors, p_slow(k))))
    });
    let slow = slow_chain(&slow_kernel)?;
    let exclusive_kernel = FnKernel::new(collectors, |k| {
        Ok(exclusive_slow(collectors, p_fast(k), p_slow(k)))
    });
    let exclusive = slow_chain(&exclusive_kernel)?;

    let mut trace = PhaseTrace::new(*config, *failures);
    trace.path("fast", fast_chain.success);
    trace.path("slow", slow.success);
    trace.path("slow_exclusive", exclusive.success);
    trace.path("combined", fast_chain.success + exclusive.success);
    trace.push("C1", c1);
    trace.push("N1", n1);
    for (name, pmf) in fast_chain.stages {
        trace.push(&format!("{name}_fast"), pmf);
    }
    for (name, pmf) in slow.stages {
        trace.push(&format!("{name}_slow"), pmf);
    }
    trace.finish()
}
