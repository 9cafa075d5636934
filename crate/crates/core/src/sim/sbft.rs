use super::pbft::order_phase;
use super::rng::kind;
use super::{PathTaken, Trial};
use crate::protocols::{ProtocolConfig, QuorumTable};

/// Shares reaching collector `host`; a collector's own share also crosses
/// the network.
fn shares(t: &Trial, phase: u8, kind: u8, senders: &[usize], host: usize) -> i64 {
    senders
        .iter()
        .filter(|&&s| t.delivered(phase, kind, s, host))
        .count() as i64
}

/// Certificate broadcast from the collectors in `from`; their hosts hold it
/// already. Returns the receivers holding it and those also up.
fn certify(
    t: &mut Trial,
    phase: u8,
    kind: u8,
    from: &[usize],
    receivers: &[usize],
) -> (usize, Vec<usize>) {
    let mut held = 0;
    let mut up_holders = Vec::new();
    if from.is_empty() {
        return (0, up_holders);
    }
    for &j in receivers {
        let got = from.contains(&j) || from.iter().any(|&s| t.delivered(phase, kind, s, j));
        let up = t.up(phase, j);
        if got {
            held += 1;
            if up {
                up_holders.push(j);
            }
        }
    }
    (held, up_holders)
}

/// Collectors gathering at least `need` shares from `senders`, and those
/// also up.
fn gather(
    t: &mut Trial,
    phase: u8,
    kind: u8,
    collectors: &[usize],
    senders: &[usize],
    need: i64,
) -> (usize, Vec<usize>) {
    let mut ok = 0;
    let mut up_hosts = Vec::new();
    for &h in collectors {
        let got = shares(t, phase, kind, senders, h) >= need;
        let up = t.up(phase, h);
        if got {
            ok += 1;
            if up {
                up_hosts.push(h);
            }
        }
    }
    (ok, up_hosts)
}

pub(super) fn run(cfg: &ProtocolConfig, t: &mut Trial) -> (PathTaken, Option<usize>) {
    let QuorumTable::Sbft {
        fast,
        slow,
        execute,
        commit,
    } = cfg.quorums()
    else {
        unreachable!()
    };
    let n = cfg.n;
    let all: Vec<usize> = (0..n).collect();
    let (c1, holders) = order_phase(n, t);
    t.stage(c1);
    t.stage(holders.len());
    let collectors = &holders[..holders.len().min(cfg.c + 1)];

    // one share per holder and collector, classified by the collector
    let (mut fast_ok, mut slow_ok) = (Vec::new(), Vec::new());
    let (mut fast_up, mut slow_up) = (Vec::new(), Vec::new());
    for &h in collectors {
        let got = shares(t, 2, kind::SHARE, &holders, h);
        let up = t.up(2, h);
        if got >= fast {
            fast_ok.push(h);
            if up {
                fast_up.push(h);
            }
        } else if got >= slow {
            slow_ok.push(h);
            if up {
                slow_up.push(h);
            }
        }
    }
    for &h in fast_up.iter().chain(&slow_up) {
        t.complete(h, 2);
    }

    let (c3f, n3f) = certify(t, 3, kind::CERT_FAST, &fast_up, &all);
    let (c4f, n4f) = gather(t, 4, kind::EXEC_FAST, collectors, &n3f, execute);
    for count in [fast_ok.len(), fast_up.len(), c3f, n3f.len(), c4f, n4f.len()] {
        t.stage(count);
    }

    let (c3s, n3s) = certify(t, 3, kind::CERT_SLOW, &slow_up, &all);
    let (c4s, n4s) = gather(t, 4, kind::COMMIT_SLOW, collectors, &n3s, commit);
    let (c5, n5) = certify(t, 5, kind::CERT_COMMIT, &n4s, &holders);
    let (c6, n6) = gather(t, 6, kind::EXEC_SLOW, collectors, &n5, execute);
    for count in [
        slow_ok.len(),
        slow_up.len(),
        c3s,
        n3s.len(),
        c4s,
        n4s.len(),
        c5,
        n5.len(),
        c6,
        n6.len(),
    ] {
        t.stage(count);
    }
    for &j in n3f.iter().chain(&n3s) {
        t.complete(j, 3);
    }
    for &h in n4f.iter().chain(&n4s) {
        t.complete(h, 4);
    }
    for &j in &n5 {
        t.complete(j, 5);
    }
    for &h in &n6 {
        t.complete(h, 6);
    }

    let fast_done = c4f >= 1;
    let slow_done = c6 >= 1;
    let exclusive = slow_done && fast_ok.is_empty();
    t.path(fast_done);
    t.path(slow_done);
    t.path(exclusive);
    t.path(fast_done || exclusive);
    let path = if fast_done {
        PathTaken::Fast
    } else if slow_done {
        PathTaken::Slow
    } else {
        PathTaken::None
    };
    (path, None)
}
