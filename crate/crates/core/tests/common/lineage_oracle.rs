//! Brute-force lineage construction.
//!
//! Windows and creator groups are recomputed from the raw events. Within the
//! chosen group every subset is enumerated and the one that (a) forms a
//! strictly ordered chain and (b) blocks each omitted member with an earlier
//! kept member still active at its first call is taken as the lineage. The
//! oracle asserts that exactly one subset qualifies.

use std::collections::{BTreeMap, BTreeSet};

use lineage_core::ingest::{ContractRecord, TraceEvent};
use lineage_core::Address;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleLineage {
    pub proxy: Address,
    pub creator: Address,
    /// `(address, first_call, last_call)` in chain order.
    pub versions: Vec<(Address, u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reason {
    NotSameCreator,
    Overlapping,
    Singleton,
    Unresolved,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct OracleOutput {
    pub lineages: Vec<OracleLineage>,
    /// `(proxy, callee) -> reason`
    pub excluded: BTreeMap<(Address, Address), Reason>,
}

pub fn oracle_lineages(events: &[TraceEvent], contracts: &[ContractRecord]) -> OracleOutput {
    let creators: BTreeMap<Address, Address> = contracts.iter().map(|c| (c.address, c.creator)).collect();

    let mut windows: BTreeMap<Address, BTreeMap<Address, (u64, u64)>> = BTreeMap::new();
    let mut seen_tx = BTreeSet::new();
    for e in events {
        if !seen_tx.insert((e.tx_id.clone(), e.callee_address)) {
            continue;
        }
        let w = windows
            .entry(e.proxy_address)
            .or_default()
            .entry(e.callee_address)
            .or_insert((e.timestamp, e.timestamp));
        w.0 = w.0.min(e.timestamp);
        w.1 = w.1.max(e.timestamp);
    }

    let mut out = OracleOutput::default();
    for (proxy, callees) in windows {
        let mut groups: BTreeMap<Address, Vec<(Address, u64, u64)>> = BTreeMap::new();
        for (&callee, &(f, l)) in &callees {
            match creators.get(&callee) {
                Some(&c) => groups.entry(c).or_default().push((callee, f, l)),
                None => {
                    out.excluded.insert((proxy, callee), Reason::Unresolved);
                }
            }
        }
        if groups.is_empty() {
            continue;
        }

        let best_size = groups.values().map(Vec::len).max().unwrap();
        let mut tied: Vec<(u64, Address)> = groups
            .iter()
            .filter(|(_, m)| m.len() == best_size)
            .map(|(c, m)| (m.iter().map(|v| v.1).min().unwrap(), *c))
            .collect();
        tied.sort();
        let creator = tied[0].1;
        for (c, members) in &groups {
            if *c != creator {
                for m in members {
                    out.excluded.insert((proxy, m.0), Reason::NotSameCreator);
                }
            }
        }

        let mut group = groups.remove(&creator).unwrap();
        group.sort_by_key(|&(a, f, _)| (f, a));
        let n = group.len();
        assert!(n <= 16, "oracle enumerates subsets; keep groups small");

        let mut winners = Vec::new();
        for mask in 0u32..(1 << n) {
            let kept: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let chain_ok = kept.windows(2).all(|w| group[w[0]].2 < group[w[1]].1);
            if !chain_ok {
                continue;
            }
            let blocked = (0..n).filter(|i| mask & (1 << i) == 0).all(|e| {
                kept.iter().any(|&k| k < e && group[k].2 >= group[e].1)
            });
            if blocked {
                winners.push(kept);
            }
        }
        assert_eq!(winners.len(), 1, "exactly one maximal chain must qualify");
        let kept = winners.pop().unwrap();

        for (i, member) in group.iter().enumerate() {
            if !kept.contains(&i) {
                out.excluded.insert((proxy, member.0), Reason::Overlapping);
            }
        }
        if kept.len() >= 2 {
            out.lineages.push(OracleLineage {
                proxy,
                creator,
                versions: kept.iter().map(|&i| group[i]).collect(),
            });
        } else {
            for &i in &kept {
                out.excluded.insert((proxy, group[i].0), Reason::Singleton);
            }
        }
    }
    out
}
