//! Trace and contract ingestion.
//!
//! Two NDJSON fixtures feed the pipeline: one delegatecall observation per
//! line in the trace file, and one contract record (with embedded sources)
//! per line in the contract file. Loading produces a canonical [`Corpus`]:
//! events sorted by `(block_number, tx_id)` with duplicates removed, and
//! contracts keyed by address with their files sorted by path.

pub mod explorer;
pub mod selector;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::{Address, Selector};
use crate::error::{Error, Result};

pub use selector::{compute_selector, keccak256, UpgradeSignatures};

/// One observed delegatecall from a proxy to an implementation contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub proxy_address: Address,
    pub callee_address: Address,
    pub timestamp: u64,
    pub block_number: u64,
    pub selector: Selector,
    pub tx_id: String,
}

/// A Solidity source file of a contract version.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    pub directory: String,
    pub filename: String,
    pub content: String,
}

impl SourceFile {
    pub fn path(&self) -> FilePath {
        FilePath {
            directory: self.directory.clone(),
            filename: self.filename.clone(),
        }
    }
}

/// `(directory, filename)` identity of a source file inside one contract.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilePath {
    pub directory: String,
    pub filename: String,
}

impl FilePath {
    pub fn new(directory: impl Into<String>, filename: impl Into<String>) -> Self {
        FilePath {
            directory: directory.into(),
            filename: filename.into(),
        }
    }

    /// Relative path with forward slashes, e.g. `contracts/Token.sol`.
    pub fn joined(&self) -> String {
        if self.directory.is_empty() {
            self.filename.clone()
        } else {
            format!("{}/{}", self.directory, self.filename)
        }
    }
}

impl std::fmt::Display for FilePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.joined())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractRecord {
    pub address: Address,
    pub creator: Address,
    pub deploy_timestamp: u64,
    pub verified: bool,
    pub open_source: bool,
    #[serde(default)]
    pub files: Vec<SourceFile>,
}

impl ContractRecord {
    /// A record for a contract whose source is not available.
    pub fn closed(address: Address, creator: Address, deploy_timestamp: u64) -> Self {
        ContractRecord {
            address,
            creator,
            deploy_timestamp,
            verified: false,
            open_source: false,
            files: Vec::new(),
        }
    }

    /// Normalizes file paths, sorts files and checks the record invariants.
    pub fn canonicalize(mut self) -> std::result::Result<Self, String> {
        for file in &mut self.files {
            file.directory = normalize_directory(&file.directory)?;
            validate_filename(&file.filename)?;
        }
        self.files.sort();
        for w in self.files.windows(2) {
            if w[0].directory == w[1].directory && w[0].filename == w[1].filename {
                return Err(format!("duplicate source file {}", w[0].path()));
            }
        }
        if self.open_source && self.files.is_empty() {
            return Err(format!("{} is marked open_source but has no files", self.address));
        }
        if !self.open_source && !self.files.is_empty() {
            return Err(format!("{} is not open_source but carries files", self.address));
        }
        Ok(self)
    }

    pub fn file(&self, path: &FilePath) -> Option<&SourceFile> {
        self.files
            .iter()
            .find(|f| f.directory == path.directory && f.filename == path.filename)
    }
}

/// Normalizes a relative directory to forward slashes without `.` segments.
///
/// Absolute paths and `..` segments are rejected so that emitted source trees
/// can never escape their output directory.
pub fn normalize_directory(raw: &str) -> std::result::Result<String, String> {
    let unified = raw.replace('\\', "/");
    if unified.starts_with('/') {
        return Err(format!("directory `{raw}` must be relative"));
    }
    let mut parts = Vec::new();
    for segment in unified.split('/') {
        match segment {
            "" | "." => {}
            ".." => return Err(format!("directory `{raw}` contains a `..` segment")),
            s if s.contains(':') => return Err(format!("directory `{raw}` looks like a drive path")),
            s => parts.push(s),
        }
    }
    Ok(parts.join("/"))
}

fn validate_filename(name: &str) -> std::result::Result<(), String> {
    if name.contains('/') || name.contains('\\') {
        return Err(format!("filename `{name}` must not contain path separators"));
    }
    if !name.ends_with(".sol") || name.len() <= 4 {
        return Err(format!("filename `{name}` must end in .sol"));
    }
    Ok(())
}

/// The set of contracts and delegatecall observations available to the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub events: Vec<TraceEvent>,
    pub contracts: BTreeMap<Address, ContractRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IngestDiagnostic {
    DuplicateEvent { line: usize, tx_id: String, callee: Address },
    UnresolvedCallee { callee: Address },
    TimestampOrder { tx_id: String, block_number: u64, timestamp: u64 },
}

/// A canonical corpus plus everything noticed while building it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub corpus: Corpus,
    pub diagnostics: Vec<IngestDiagnostic>,
}

fn read_ndjson<T, R>(reader: R, origin: &str) -> Result<Vec<(usize, T)>>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        rows.push((lineno, row));
    }
    Ok(rows)
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads and canonicalizes the trace and contract fixtures.
pub fn load_corpus(trace_path: &Path, contracts_path: &Path) -> Result<LoadReport> {
    let traces = open(trace_path)?;
    let contracts = open(contracts_path)?;
    Corpus::from_readers(
        traces,
        &trace_path.display().to_string(),
        contracts,
        &contracts_path.display().to_string(),
    )
}

impl Corpus {
    pub fn from_readers<A: BufRead, B: BufRead>(
        traces: A,
        trace_origin: &str,
        contracts: B,
        contracts_origin: &str,
    ) -> Result<LoadReport> {
        let events: Vec<(usize, TraceEvent)> = read_ndjson(traces, trace_origin)?;
        let records: Vec<(usize, ContractRecord)> = read_ndjson(contracts, contracts_origin)?;

        let mut map = BTreeMap::new();
        for (line, record) in records {
            let record = record
                .canonicalize()
                .map_err(|m| Error::parse(contracts_origin, line, m))?;
            let address = record.address;
            if map.insert(address, record).is_some() {
                return Err(Error::parse(
                    contracts_origin,
                    line,
                    format!("duplicate contract address {address}"),
                ));
            }
        }
        Ok(Self::assemble(events, map))
    }

    /// Builds a canonical corpus from already-parsed parts.
    pub fn from_parts(
        events: impl IntoIterator<Item = TraceEvent>,
        contracts: impl IntoIterator<Item = ContractRecord>,
    ) -> Result<LoadReport> {
        let mut map = BTreeMap::new();
        for record in contracts {
            let record = record.canonicalize().map_err(Error::Validation)?;
            let address = record.address;
            if map.insert(address, record).is_some() {
                return Err(Error::Validation(format!("duplicate contract address {address}")));
            }
        }
        let events = events.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect();
        Ok(Self::assemble(events, map))
    }

    fn assemble(
        mut events: Vec<(usize, TraceEvent)>,
        contracts: BTreeMap<Address, ContractRecord>,
    ) -> LoadReport {
        let mut diagnostics = Vec::new();
        events.sort_by(|(la, a), (lb, b)| {
            (a.block_number, &a.tx_id, a.proxy_address, a.callee_address, a.timestamp, a.selector, la).cmp(&(
                b.block_number,
                &b.tx_id,
                b.proxy_address,
                b.callee_address,
                b.timestamp,
                b.selector,
                lb,
            ))
        });

        let mut seen = HashSet::new();
        let mut kept: Vec<TraceEvent> = Vec::with_capacity(events.len());
        for (line, event) in events {
            if !seen.insert((event.tx_id.clone(), event.callee_address)) {
                diagnostics.push(IngestDiagnostic::DuplicateEvent {
                    line,
                    tx_id: event.tx_id,
                    callee: event.callee_address,
                });
                continue;
            }
            kept.push(event);
        }

        for w in kept.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            let consistent = if next.block_number == prev.block_number {
                next.timestamp == prev.timestamp
            } else {
                next.timestamp > prev.timestamp
            };
            if !consistent {
                diagnostics.push(IngestDiagnostic::TimestampOrder {
                    tx_id: next.tx_id.clone(),
                    block_number: next.block_number,
                    timestamp: next.timestamp,
                });
            }
        }

        let unresolved: BTreeSet<Address> = kept
            .iter()
            .map(|e| e.callee_address)
            .filter(|a| !contracts.contains_key(a))
            .collect();
        diagnostics.extend(
            unresolved
                .into_iter()
                .map(|callee| IngestDiagnostic::UnresolvedCallee { callee }),
        );
        diagnostics.sort();

        LoadReport {
            corpus: Corpus {
                events: kept,
                contracts,
            },
            diagnostics,
        }
    }

    /// Distinct callees observed behind `proxy`, in address order.
    pub fn callees_of(&self, proxy: Address) -> BTreeSet<Address> {
        self.events
            .iter()
            .filter(|e| e.proxy_address == proxy)
            .map(|e| e.callee_address)
            .collect()
    }

    pub fn proxies(&self) -> BTreeSet<Address> {
        self.events.iter().map(|e| e.proxy_address).collect()
    }

    /// Proxies through which at least one monitored upgrade selector was executed.
    pub fn upgraded_proxies(&self, signatures: &UpgradeSignatures) -> BTreeSet<Address> {
        self.events
            .iter()
            .filter(|e| signatures.contains(e.selector))
            .map(|e| e.proxy_address)
            .collect()
    }

    /// Drops events of proxies never observed executing an upgrade call.
    pub fn retain_upgraded_proxies(&mut self, signatures: &UpgradeSignatures) {
        let keep = self.upgraded_proxies(signatures);
        self.events.retain(|e| keep.contains(&e.proxy_address));
    }

    pub fn write_traces<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_contracts<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.contracts.values() {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Canonical NDJSON bytes of both fixtures, `(traces, contracts)`.
    pub fn to_ndjson(&self) -> (Vec<u8>, Vec<u8>) {
        let mut traces = Vec::new();
        let mut contracts = Vec::new();
        self.write_traces(&mut traces).expect("writing to a Vec cannot fail");
        self.write_contracts(&mut contracts).expect("writing to a Vec cannot fail");
        (traces, contracts)
    }

    /// Parses canonical NDJSON bytes as produced by [`Corpus::to_ndjson`].
    pub fn from_ndjson(traces: impl Read, contracts: impl Read) -> Result<LoadReport> {
        Self::from_readers(
            BufReader::new(traces),
            "<traces>",
            BufReader::new(contracts),
            "<contracts>",
        )
    }
}
