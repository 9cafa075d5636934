use super::pbft::order_phase;
use super::rng::kind;
use super::{PathTaken, Trial};
use crate::protocols::{ProtocolConfig, QuorumTable};

pub(super) fn run(cfg: &ProtocolConfig, t: &mut Trial) -> (PathTaken, Option<usize>) {
    let QuorumTable::Zyzzyva { fast, slow, commit } = cfg.quorums() else {
        unreachable!()
    };
    let n = cfg.n;
    let client = n;
    let (c1, holders) = order_phase(n, t);
    t.stage(c1);
    t.stage(holders.len());

    let replies = t.count_all(2, kind::REPLY, &holders, client);
    let client_up = t.up(2, client);
    let fast_ok = replies >= fast;
    let slow_ok = replies >= slow && replies < fast;
    let certified = slow_ok && client_up;
    if (fast_ok || slow_ok) && client_up {
        t.complete(client, 2);
    }
    t.stage(fast_ok as usize);
    t.stage(slow_ok as usize);
    t.stage(certified as usize);

    let (mut c3, mut committed) = (0, Vec::new());
    if certified {
        for j in 0..n {
            let got = t.delivered(3, kind::CLIENT_CERT, client, j);
            let up = t.up(3, j);
            if got {
                c3 += 1;
                if up {
                    committed.push(j);
                    t.complete(j, 3);
                }
            }
        }
    }
    t.stage(c3);
    t.stage(committed.len());

    let (mut c4, mut n4) = (false, false);
    if certified {
        c4 = t.count_from(4, kind::ACK, &committed, client, commit) >= commit;
        let up = t.up(4, client);
        n4 = c4 && up;
        if n4 {
            t.complete(client, 4);
        }
    }
    t.stage(c4 as usize);
    t.stage(n4 as usize);

    t.path(fast_ok);
    t.path(c4);
    t.path(fast_ok || c4);
    let path = match (fast_ok, c4) {
        (true, _) => PathTaken::Fast,
        (false, true) => PathTaken::Slow,
        _ => PathTaken::None,
    };
    (path, None)
}
