//! Proxy-anchored lineage construction.
//!
//! A lineage is the chronologically ordered chain of implementation contracts
//! that a single proxy delegated to. For every proxy the engine
//!
//! 1. collects the distinct callees and their activity windows,
//! 2. partitions the resolved callees by creator and keeps one creator group
//!    (largest group, then earliest first call, then lowest creator address),
//! 3. orders the group by first call (ties by address) and greedily keeps a
//!    version only if it starts strictly after the previously kept one ended,
//! 4. emits a lineage when at least two versions survive.
//!
//! Every callee that does not end up in a lineage is recorded in
//! [`LineageDiagnostics`] with the reason it was excluded.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::ingest::Corpus;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// First and last observed delegatecall from a proxy to one callee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActivityWindow {
    pub first_call: u64,
    pub last_call: u64,
}

impl ActivityWindow {
    pub fn at(t: u64) -> Self {
        ActivityWindow {
            first_call: t,
            last_call: t,
        }
    }

    fn extend(&mut self, t: u64) {
        self.first_call = self.first_call.min(t);
        self.last_call = self.last_call.max(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub address: Address,
    pub window: ActivityWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub proxy: Address,
    pub creator: Address,
    pub versions: Vec<Version>,
}

impl Lineage {
    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn contains(&self, address: Address) -> bool {
        self.versions.iter().any(|v| v.address == address)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractPair {
    pub proxy: Address,
    pub predecessor: Address,
    pub successor: Address,
    pub predecessor_window: ActivityWindow,
    pub successor_window: ActivityWindow,
    pub gap_days: f64,
}

impl ContractPair {
    /// Days from the predecessor going live to the successor going live.
    pub fn activation_span_days(&self) -> f64 {
        (self.successor_window.first_call as f64 - self.predecessor_window.first_call as f64) / SECONDS_PER_DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    NotSameCreator,
    OverlappingWindow,
    Singleton,
    UnresolvedMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Exclusion {
    pub proxy: Address,
    pub callee: Address,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageDiagnostics {
    pub exclusions: Vec<Exclusion>,
}

impl LineageDiagnostics {
    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.exclusions.iter().filter(|e| e.reason == reason).count()
    }
}

/// Activity window of every observed `(proxy, callee)` pair.
pub fn activity_windows(corpus: &Corpus) -> BTreeMap<(Address, Address), ActivityWindow> {
    let mut windows: BTreeMap<(Address, Address), ActivityWindow> = BTreeMap::new();
    for event in &corpus.events {
        windows
            .entry((event.proxy_address, event.callee_address))
            .and_modify(|w| w.extend(event.timestamp))
            .or_insert_with(|| ActivityWindow::at(event.timestamp));
    }
    windows
}

struct ProxyOutcome {
    lineage: Option<Lineage>,
    exclusions: Vec<Exclusion>,
}

fn classify_proxy(proxy: Address, callees: &[(Address, ActivityWindow)], corpus: &Corpus) -> ProxyOutcome {
    let mut exclusions = Vec::new();
    let mut exclude = |callee, reason| exclusions.push(Exclusion { proxy, callee, reason });

    let mut groups: BTreeMap<Address, Vec<Version>> = BTreeMap::new();
    for &(address, window) in callees {
        match corpus.contracts.get(&address) {
            Some(record) => groups.entry(record.creator).or_default().push(Version { address, window }),
            None => exclude(address, ExclusionReason::UnresolvedMetadata),
        }
    }

    // Largest group wins; ties go to the earliest first call, then the lowest creator.
    let chosen = groups
        .iter()
        .map(|(creator, members)| {
            let earliest = members.iter().map(|v| v.window.first_call).min().unwrap_or(u64::MAX);
            (std::cmp::Reverse(members.len()), earliest, *creator)
        })
        .min()
        .map(|(_, _, creator)| creator);

    let Some(creator) = chosen else {
        return ProxyOutcome { lineage: None, exclusions };
    };

    let mut group = Vec::new();
    for (c, members) in groups {
        if c == creator {
            group = members;
        } else {
            for v in members {
                exclude(v.address, ExclusionReason::NotSameCreator);
            }
        }
    }

    group.sort_by_key(|v| (v.window.first_call, v.address));
    let mut chain: Vec<Version> = Vec::with_capacity(group.len());
    for v in group {
        match chain.last() {
            Some(last) if v.window.first_call <= last.window.last_call => {
                exclude(v.address, ExclusionReason::OverlappingWindow);
            }
            _ => chain.push(v),
        }
    }

    if chain.len() >= 2 {
        ProxyOutcome {
            lineage: Some(Lineage {
                proxy,
                creator,
                versions: chain,
            }),
            exclusions,
        }
    } else {
        for v in chain {
            exclude(v.address, ExclusionReason::Singleton);
        }
        ProxyOutcome { lineage: None, exclusions }
    }
}

/// Applies the four lineage rules to every proxy of the corpus.
///
/// Lineages are returned in proxy-address order; exclusions are sorted.
pub fn build_lineages(corpus: &Corpus) -> (Vec<Lineage>, LineageDiagnostics) {
    let mut by_proxy: BTreeMap<Address, Vec<(Address, ActivityWindow)>> = BTreeMap::new();
    for ((proxy, callee), window) in activity_windows(corpus) {
        by_proxy.entry(proxy).or_default().push((callee, window));
    }

    let outcomes: Vec<ProxyOutcome> = by_proxy
        .par_iter()
        .map(|(proxy, callees)| classify_proxy(*proxy, callees, corpus))
        .collect();

    let mut lineages = Vec::new();
    let mut exclusions = Vec::new();
    for outcome in outcomes {
        lineages.extend(outcome.lineage);
        exclusions.extend(outcome.exclusions);
    }
    exclusions.sort();
    (lineages, LineageDiagnostics { exclusions })
}

/// Adjacent predecessor/successor pairs of every lineage.
pub fn contract_pairs(lineages: &[Lineage]) -> Vec<ContractPair> {
    lineages
        .iter()
        .flat_map(|lineage| {
            lineage.versions.windows(2).map(move |w| ContractPair {
                proxy: lineage.proxy,
                predecessor: w[0].address,
                successor: w[1].address,
                predecessor_window: w[0].window,
                successor_window: w[1].window,
                gap_days: (w[1].window.first_call as f64 - w[0].window.last_call as f64) / SECONDS_PER_DAY,
            })
        })
        .collect()
}
