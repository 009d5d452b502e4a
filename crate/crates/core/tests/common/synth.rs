//! Seeded synthetic corpora.

use std::collections::BTreeMap;

use lineage_core::ingest::{ContractRecord, SourceFile, TraceEvent};
use lineage_core::lifecycle::Finding;
use lineage_core::{Address, Selector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_address;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const UPGRADE_TO: [u8; 4] = [0x36, 0x59, 0xcf, 0xe6];

/// Traces and closed-source metadata for lineage-rule testing: at most 50
/// proxies, 200 contracts and 8 callees per proxy, with coarse timestamps
/// so that equal window boundaries are common. Event order is shuffled and
/// some events are duplicated.
pub fn lineage_corpus(seed: u64) -> (Vec<TraceEvent>, Vec<ContractRecord>) {
    let mut rng = rng(seed);
    let n_contracts = rng.random_range(1..=200);
    let n_proxies = rng.random_range(1..=50);
    let n_creators = rng.random_range(1..=4);
    let creators: Vec<Address> = (0..n_creators).map(|_| random_address(&mut rng)).collect();
    let pool: Vec<Address> = (0..n_contracts).map(|_| random_address(&mut rng)).collect();

    let mut contracts = Vec::new();
    for &a in &pool {
        if rng.random_bool(0.9) {
            contracts.push(ContractRecord::closed(a, *creators.choose(&mut rng).unwrap(), 0));
        }
    }

    let mut events = Vec::new();
    for p in 0..n_proxies {
        let proxy = random_address(&mut rng);
        let k = rng.random_range(1..=8.min(pool.len()));
        let callees: Vec<Address> = pool.choose_multiple(&mut rng, k).copied().collect();
        for callee in callees {
            let first = rng.random_range(0..60u64) * 10;
            let last = first + rng.random_range(0..20u64) * 10;
            let mut times = vec![first, last];
            for _ in 0..rng.random_range(0..3) {
                times.push(rng.random_range(first..=last));
            }
            for (i, t) in times.into_iter().enumerate() {
                let selector = if rng.random_bool(0.2) { UPGRADE_TO } else { [0, 0, 0, 1] };
                let event = TraceEvent {
                    proxy_address: proxy,
                    callee_address: callee,
                    timestamp: t,
                    block_number: t,
                    selector: Selector::from_bytes(selector),
                    tx_id: format!("tx-{p}-{callee}-{i}"),
                };
                if rng.random_bool(0.05) {
                    events.push(event.clone());
                }
                events.push(event);
            }
        }
    }
    events.shuffle(&mut rng);
    (events, contracts)
}

const WORDS: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "owner", "amount", "balance", "total", "rate", "fee", "price", "limit",
    "nonce", "epoch", "index", "count", "value", "weight", "reward", "stake", "debt", "supply", "share", "cap",
];

fn statement<R: Rng>(rng: &mut R) -> String {
    let a = WORDS.choose(rng).unwrap();
    let b = WORDS.choose(rng).unwrap();
    let op = ["+", "-", "*", "/"].choose(rng).unwrap();
    format!("        {a} = {b} {op} {};", rng.random_range(1..10_000))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFunction {
    pub name: String,
    pub params: String,
    pub body: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthContract {
    pub name: String,
    pub functions: Vec<SynthFunction>,
}

impl SynthContract {
    pub fn random<R: Rng>(rng: &mut R, name: &str) -> Self {
        let functions = (0..rng.random_range(3..7))
            .map(|i| SynthFunction {
                name: format!("{}{i}", WORDS.choose(rng).unwrap()),
                params: ["", "uint256 x", "address to, uint256 amount", "bytes memory data"]
                    .choose(rng)
                    .unwrap()
                    .to_string(),
                body: (0..rng.random_range(3..9)).map(|_| statement(rng)).collect(),
            })
            .collect();
        SynthContract {
            name: name.to_string(),
            functions,
        }
    }

    /// Rewrites each body statement with probability `p`.
    pub fn mutate<R: Rng>(&self, rng: &mut R, p: f64) -> Self {
        let mut next = self.clone();
        for f in &mut next.functions {
            for s in &mut f.body {
                if rng.random_bool(p) {
                    *s = statement(rng);
                }
            }
        }
        next
    }

    pub fn render(&self) -> String {
        let mut out = String::from("// SPDX-License-Identifier: MIT\npragma solidity ^0.8.0;\n\n");
        out.push_str(&format!("contract {} {{\n", self.name));
        for w in WORDS {
            out.push_str(&format!("    uint256 public {w};\n"));
        }
        for f in &self.functions {
            out.push_str(&format!("\n    function {}({}) public {{\n", f.name, f.params));
            for s in &f.body {
                out.push_str(s);
                out.push('\n');
            }
            out.push_str("    }\n");
        }
        out.push_str("}\n");
        out
    }
}

pub fn open_record(address: Address, creator: Address, files: Vec<(&str, &str, String)>) -> ContractRecord {
    ContractRecord {
        address,
        creator,
        deploy_timestamp: 0,
        verified: true,
        open_source: true,
        files: files
            .into_iter()
            .map(|(directory, filename, content)| SourceFile {
                directory: directory.to_string(),
                filename: filename.to_string(),
                content,
            })
            .collect(),
    }
}

/// A corpus of source-bearing lineages for pipeline and evaluation tests.
#[derive(Debug, Clone, Default)]
pub struct SourceCorpus {
    pub events: Vec<TraceEvent>,
    pub contracts: Vec<ContractRecord>,
    /// The source a closed-source contract would have published, used to
    /// fabricate fingerprints for the all-contracts scenario.
    pub hidden: BTreeMap<Address, ContractRecord>,
}

pub struct SourceParams {
    pub lineages: usize,
    pub max_versions: usize,
    pub creators: usize,
    /// Per-statement rewrite probability between versions.
    pub drift: f64,
    pub closed_share: f64,
    /// Unrelated near-copies of lineage members from the same creator.
    pub decoys: usize,
    /// Whether each version gets a freshly generated contract instead of a mutation.
    pub rewrite_share: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            lineages: 12,
            max_versions: 5,
            creators: 3,
            drift: 0.15,
            closed_share: 0.2,
            decoys: 6,
            rewrite_share: 0.1,
        }
    }
}

pub fn source_corpus(seed: u64, params: &SourceParams) -> SourceCorpus {
    let mut rng = rng(seed);
    let creators: Vec<Address> = (0..params.creators.max(1)).map(|_| random_address(&mut rng)).collect();
    let mut out = SourceCorpus::default();
    let mut t = 1_000u64;
    let mut members: Vec<(Address, SynthContract)> = Vec::new();

    for l in 0..params.lineages {
        let proxy = random_address(&mut rng);
        let creator = *creators.choose(&mut rng).unwrap();
        let n = rng.random_range(2..=params.max_versions.max(2));
        let mut current = SynthContract::random(&mut rng, &format!("Lineage{l}"));
        for v in 0..n {
            if v > 0 {
                current = if rng.random_bool(params.rewrite_share) {
                    SynthContract::random(&mut rng, &format!("Lineage{l}"))
                } else {
                    current.mutate(&mut rng, params.drift)
                };
            }
            let address = random_address(&mut rng);
            let text = current.render();
            let filename = if rng.random_bool(0.3) {
                format!("Lineage{l}V{v}.sol")
            } else {
                format!("Lineage{l}.sol")
            };
            let helper = format!("library Util{l} {{\n    function id(uint x) internal pure returns (uint) {{ return x; }}\n}}\n");
            let record = open_record(
                address,
                creator,
                vec![("contracts", &filename, text), ("contracts/lib", "Util.sol", helper)],
            );
            if rng.random_bool(params.closed_share) {
                out.contracts.push(ContractRecord::closed(address, creator, t));
                out.hidden.insert(address, record);
            } else {
                out.contracts.push(record);
            }
            let first = t;
            let last = t + rng.random_range(1..5) * 86_400;
            for (i, ts) in [first, (first + last) / 2, last].into_iter().enumerate() {
                out.events.push(TraceEvent {
                    proxy_address: proxy,
                    callee_address: address,
                    timestamp: ts,
                    block_number: ts,
                    selector: Selector::from_bytes(if i == 0 { UPGRADE_TO } else { [0xa9, 0x05, 0x9c, 0xbb] }),
                    tx_id: format!("0x{l:04x}{v:04x}{i:02x}"),
                });
            }
            t = last + rng.random_range(1..30) * 86_400;
            members.push((address, current.clone()));
        }
    }

    for d in 0..params.decoys {
        let Some((_, base)) = members.choose(&mut rng).cloned() else { break };
        let address = random_address(&mut rng);
        let creator = *creators.choose(&mut rng).unwrap();
        let text = base.mutate(&mut rng, params.drift).render();
        out.contracts.push(open_record(address, creator, vec![("", &format!("Decoy{d}.sol"), text)]));
    }

    out.events.sort_by(|a, b| a.tx_id.cmp(&b.tx_id));
    out
}

/// Random findings over the files of the given open-source contracts.
pub fn random_findings(seed: u64, contracts: &[ContractRecord], per_contract: usize) -> Vec<Finding> {
    let tools: [(&str, &[&str]); 3] = [
        ("slither", &["reentrancy-eth", "tx-origin", "unchecked-lowlevel"]),
        ("mythril", &["SWC-107", "SWC-115", "SWC-104"]),
        ("conkas", &["Reentrancy", "Unchecked Low Level Call"]),
    ];
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for c in contracts.iter().filter(|c| c.open_source) {
        for _ in 0..rng.random_range(0..=per_contract) {
            let file = c.files.choose(&mut rng).unwrap();
            let (tool, types) = tools.choose(&mut rng).unwrap();
            let lines = file.content.lines().count().max(1);
            let start = rng.random_range(1..=lines);
            out.push(Finding {
                tool: tool.to_string(),
                vuln_type: types.choose(&mut rng).unwrap().to_string(),
                contract: c.address,
                file: file.path(),
                start_line: start,
                end_line: start,
                message: String::new(),
            });
        }
    }
    out
}
