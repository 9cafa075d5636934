use super::pbft::order_phase;
use super::rng::kind;
use super::{PathTaken, Trial};
use crate::protocols::{ProtocolConfig, QuorumTable};

pub(super) fn run(cfg: &ProtocolConfig, t: &mut Trial) -> (PathTaken, Option<usize>) {
    let QuorumTable::Smart {
        prepares,
        commits_own,
        commits_skip,
        decided,
    } = cfg.quorums()
    else {
        unreachable!()
    };
    let (c1, holders) = order_phase(cfg.n, t);
    t.stage(c1);
    t.stage(holders.len() - 1);

    let mut c2 = 0;
    let mut prepared = Vec::with_capacity(holders.len());
    let mut is_prepared = vec![false; cfg.n];
    for &r in &holders {
        let ok = t.count_from(2, kind::PREPARE, &holders, r, prepares) >= prepares;
        let up = t.up(2, r);
        if ok {
            c2 += 1;
            if up {
                prepared.push(r);
                is_prepared[r] = true;
                t.complete(r, 2);
            }
        }
    }
    t.stage(c2);
    t.stage(prepared.len());

    // every holder listens for commits; one that sent none needs one more
    let (mut c3, mut n3) = (0, 0);
    for &r in &holders {
        let need = if is_prepared[r] {
            commits_own
        } else {
            commits_skip
        };
        let ok = t.count_from(3, kind::COMMIT, &prepared, r, need) >= need;
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
    (
        if happy {
            PathTaken::Happy
        } else {
            PathTaken::None
        },
        Some(n3),
    )
}
