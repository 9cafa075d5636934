use super::rng::kind;
use super::{PathTaken, Trial};
use crate::protocols::{ProtocolConfig, QuorumTable};

/// Backups that received the pre-prepare and stayed up; the primary is
/// exempt from crashing in phase one.
pub(super) fn order_phase(n: usize, t: &mut Trial) -> (usize, Vec<usize>) {
    t.complete(0, 1);
    let mut received = 0;
    let mut holders = vec![0];
    for j in 1..n {
        let got = t.delivered(1, kind::ORDER, 0, j);
        let up = t.up(1, j);
        if got {
            received += 1;
            if up {
                holders.push(j);
                t.complete(j, 1);
            }
        }
    }
    (received, holders)
}

pub(super) fn run(cfg: &ProtocolConfig, t: &mut Trial) -> (PathTaken, Option<usize>) {
    let QuorumTable::Pbft {
        primary_prepares,
        backup_prepares,
        commits,
        decided,
        live,
    } = cfg.quorums()
    else {
        unreachable!()
    };
    let (c1, holders) = order_phase(cfg.n, t);
    t.stage(c1);
    t.stage(holders.len() - 1);

    // prepares come from backups only; the pre-prepare stands in for the
    // primary's
    let backups = &holders[1..];
    let (mut c2, mut c2n) = (0, 0);
    let mut prepared = Vec::with_capacity(holders.len());
    for &r in &holders {
        let need = if r == 0 {
            primary_prepares
        } else {
            backup_prepares
        };
        let ok = t.count_from(2, kind::PREPARE, backups, r, need) >= need;
        let up = t.up(2, r);
        if ok {
            c2 += 1;
            c2n += usize::from(r != 0);
            if up {
                prepared.push(r);
                t.complete(r, 2);
            }
        }
    }
    t.stage(c2n);
    t.stage(c2);
    t.stage(prepared.len());

    let mut c3 = 0;
    let mut n3 = 0;
    for &r in &prepared {
        let ok = t.count_from(3, kind::COMMIT, &prepared, r, commits) >= commits;
        let up = t.up(3, r);
        if ok {
            c3 += 1;
            if up {
                n3 += 1;
                t.complete(r, 3);
            }
        }
    }
    t.stage(c3);
    t.stage(n3);
    let happy = n3 as i64 >= decided;
    t.path(happy);
    t.path(n3 as i64 >= live);
    (
        if happy {
            PathTaken::Happy
        } else {
            PathTaken::None
        },
        Some(n3),
    )
}
