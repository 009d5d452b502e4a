//! Tracking detector warnings across predecessor/successor pairs.
//!
//! A warning's identity across versions is `(tool, vuln_type, file)` where the
//! file is the matched file pair when one exists and the bare path otherwise.
//! Line numbers are ignored. Within one pair, findings sharing a key are
//! diffed as multisets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::error::{Error, Result};
use crate::ingest::{open, Corpus, FilePath};
use crate::lineage::ContractPair;
use crate::pairing::FilePair;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub tool: String,
    pub vuln_type: String,
    pub contract: Address,
    pub file: FilePath,
    pub start_line: usize,
    pub end_line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FindingRow {
    tool: String,
    vuln_type: String,
    contract: Address,
    directory: String,
    filename: String,
    start_line: usize,
    end_line: usize,
    #[serde(default)]
    message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingDiagnostic {
    UnknownContract { line: usize, contract: Address },
    UnknownFile { line: usize, contract: Address, file: FilePath },
    LinesOutOfRange { line: usize, contract: Address, file: FilePath, end_line: usize, file_lines: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedFindings {
    pub findings: Vec<Finding>,
    pub diagnostics: Vec<FindingDiagnostic>,
}

pub fn load_findings(path: &Path, corpus: Option<&Corpus>) -> Result<LoadedFindings> {
    read_findings(open(path)?, &path.display().to_string(), corpus)
}

/// Parses a findings report. Rows naming contracts or files the corpus does
/// not know are kept and flagged.
pub fn read_findings<R: BufRead>(reader: R, origin: &str, corpus: Option<&Corpus>) -> Result<LoadedFindings> {
    let mut out = LoadedFindings::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FindingRow =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if row.start_line == 0 || row.end_line < row.start_line {
            return Err(Error::parse(
                origin,
                lineno,
                format!("invalid line range {}..{}", row.start_line, row.end_line),
            ));
        }
        let directory = crate::ingest::normalize_directory(&row.directory)
            .map_err(|m| Error::parse(origin, lineno, m))?;
        let finding = Finding {
            tool: row.tool,
            vuln_type: row.vuln_type,
            contract: row.contract,
            file: FilePath::new(directory, row.filename),
            start_line: row.start_line,
            end_line: row.end_line,
            message: row.message,
        };
        if let Some(corpus) = corpus {
            match corpus.contracts.get(&finding.contract) {
                None => out.diagnostics.push(FindingDiagnostic::UnknownContract {
                    line: lineno,
                    contract: finding.contract,
                }),
                Some(record) => match record.file(&finding.file) {
                    None if record.open_source => out.diagnostics.push(FindingDiagnostic::UnknownFile {
                        line: lineno,
                        contract: finding.contract,
                        file: finding.file.clone(),
                    }),
                    None => {}
                    Some(src) => {
                        let file_lines = src.content.lines().count();
                        if finding.end_line > file_lines {
                            out.diagnostics.push(FindingDiagnostic::LinesOutOfRange {
                                line: lineno,
                                contract: finding.contract,
                                file: finding.file.clone(),
                                end_line: finding.end_line,
                                file_lines,
                            });
                        }
                    }
                },
            }
        }
        out.findings.push(finding);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileIdentity {
    Paired { predecessor: FilePath, successor: FilePath },
    Unpaired { file: FilePath },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FindingKey {
    pub tool: String,
    pub vuln_type: String,
    pub file: FileIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleStatus {
    Persisted,
    Introduced,
    Disappeared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRecord {
    pub proxy: Address,
    pub predecessor: Address,
    pub successor: Address,
    pub key: FindingKey,
    pub status: LifecycleStatus,
    /// Position of this occurrence within its key, so that equal keys
    /// still name distinct warnings.
    pub ordinal: usize,
    pub days_to_disappear: Option<f64>,
}

impl LifecycleRecord {
    /// Side paths this record touches: predecessor for PERSISTED and
    /// DISAPPEARED, successor for PERSISTED and INTRODUCED.
    pub fn predecessor_file(&self) -> Option<&FilePath> {
        if self.status == LifecycleStatus::Introduced {
            return None;
        }
        Some(match &self.key.file {
            FileIdentity::Paired { predecessor, .. } => predecessor,
            FileIdentity::Unpaired { file } => file,
        })
    }

    pub fn successor_file(&self) -> Option<&FilePath> {
        if self.status == LifecycleStatus::Disappeared {
            return None;
        }
        Some(match &self.key.file {
            FileIdentity::Paired { successor, .. } => successor,
            FileIdentity::Unpaired { file } => file,
        })
    }
}

/// Multiset diff of one pair's findings.
///
/// Findings for other contracts are ignored. Records come out sorted by key,
/// then status, then ordinal.
pub fn diff_pair(
    pair: &ContractPair,
    file_pairs: &[FilePair],
    pred_findings: &[Finding],
    succ_findings: &[Finding],
) -> Vec<LifecycleRecord> {
    let mut by_pred: BTreeMap<&FilePath, FileIdentity> = BTreeMap::new();
    let mut by_succ: BTreeMap<&FilePath, FileIdentity> = BTreeMap::new();
    for fp in file_pairs
        .iter()
        .filter(|fp| fp.predecessor == pair.predecessor && fp.successor == pair.successor)
    {
        let id = FileIdentity::Paired {
            predecessor: fp.predecessor_file.clone(),
            successor: fp.successor_file.clone(),
        };
        by_pred.insert(&fp.predecessor_file, id.clone());
        by_succ.insert(&fp.successor_file, id);
    }

    let key_of = |f: &Finding, side: &BTreeMap<&FilePath, FileIdentity>| FindingKey {
        tool: f.tool.clone(),
        vuln_type: f.vuln_type.clone(),
        file: side
            .get(&f.file)
            .cloned()
            .unwrap_or_else(|| FileIdentity::Unpaired { file: f.file.clone() }),
    };

    let mut counts: BTreeMap<FindingKey, (usize, usize)> = BTreeMap::new();
    for f in pred_findings.iter().filter(|f| f.contract == pair.predecessor) {
        counts.entry(key_of(f, &by_pred)).or_default().0 += 1;
    }
    for f in succ_findings.iter().filter(|f| f.contract == pair.successor) {
        counts.entry(key_of(f, &by_succ)).or_default().1 += 1;
    }

    let days = pair.activation_span_days();
    let mut records = Vec::new();
    for (key, (p, s)) in counts {
        let persisted = p.min(s);
        let mut push = |status, ordinal| {
            records.push(LifecycleRecord {
                proxy: pair.proxy,
                predecessor: pair.predecessor,
                successor: pair.successor,
                key: key.clone(),
                status,
                ordinal,
                days_to_disappear: (status == LifecycleStatus::Disappeared).then_some(days),
            })
        };
        for i in 0..persisted {
            push(LifecycleStatus::Persisted, i);
        }
        for i in persisted..s {
            push(LifecycleStatus::Introduced, i);
        }
        for i in persisted..p {
            push(LifecycleStatus::Disappeared, i);
        }
    }
    records
}

/// Tool-specific vuln_type names mapped onto shared categories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryMap(pub BTreeMap<String, BTreeMap<String, String>>);

impl CategoryMap {
    pub fn category(&self, tool: &str, vuln_type: &str) -> Option<&str> {
        self.0.get(tool)?.get(vuln_type).map(String::as_str)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("category map: {e}")))
    }

    /// Coverage for reentrancy, tx-origin and unchecked low-level calls in
    /// Slither, Mythril and Conkas naming.
    pub fn default_map() -> Self {
        let table: &[(&str, &[(&str, &str)])] = &[
            (
                "slither",
                &[
                    ("reentrancy-eth", "reentrancy"),
                    ("reentrancy-no-eth", "reentrancy"),
                    ("reentrancy-benign", "reentrancy"),
                    ("reentrancy-events", "reentrancy"),
                    ("reentrancy-unlimited-gas", "reentrancy"),
                    ("tx-origin", "tx-origin"),
                    ("unchecked-lowlevel", "unchecked-call"),
                    ("unchecked-send", "unchecked-call"),
                ],
            ),
            (
                "mythril",
                &[
                    ("SWC-107", "reentrancy"),
                    ("State access after external call", "reentrancy"),
                    ("External Call To User-Supplied Address", "reentrancy"),
                    ("SWC-115", "tx-origin"),
                    ("Dependence on tx.origin", "tx-origin"),
                    ("SWC-104", "unchecked-call"),
                    ("Unchecked return value from external call.", "unchecked-call"),
                ],
            ),
            (
                "conkas",
                &[
                    ("Reentrancy", "reentrancy"),
                    ("Unchecked Low Level Call", "unchecked-call"),
                ],
            ),
        ];
        CategoryMap(
            table
                .iter()
                .map(|(tool, entries)| {
                    (
                        tool.to_string(),
                        entries.iter().map(|(v, c)| (v.to_string(), c.to_string())).collect(),
                    )
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CombineMode {
    #[default]
    Union,
    Intersection,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "union" => Ok(CombineMode::Union),
            "intersection" => Ok(CombineMode::Intersection),
            other => Err(Error::Validation(format!(
                "unknown combine mode `{other}` (expected union or intersection)"
            ))),
        }
    }
}

/// A share reported against three denominators: lifecycle records, distinct
/// per-pair keys, and distinct per-pair files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub of_records: Option<f64>,
    pub of_keys: Option<f64>,
    pub of_files: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifecycleSummary {
    pub mode: CombineMode,
    pub tools: Vec<String>,
    pub records: usize,
    pub persisted: usize,
    pub introduced: usize,
    pub disappeared: usize,
    /// Distinct warning occurrences across all versions.
    pub distinct_findings: usize,
    pub vulnerable_files: usize,
    pub vulnerable_contracts: usize,
    pub lineages_touched: usize,
    pub keys: usize,
    pub files: usize,
    /// Percentages in [0, 100].
    pub introduced_pct: Shares,
    pub disappeared_pct: Shares,
    pub mean_days_to_disappear: Option<f64>,
    /// File pairs with at least one DISAPPEARED and no INTRODUCED record.
    pub patched_files: usize,
    pub patched_files_pct: Option<f64>,
}

type PairId = (Address, Address, Address);

fn pair_id(r: &LifecycleRecord) -> PairId {
    (r.proxy, r.predecessor, r.successor)
}

fn with<K>(m: &BTreeMap<K, [usize; 3]>, slot: usize) -> usize {
    m.values().filter(|c| c[slot] > 0).count()
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Keeps records whose (pair, file, category) group was reported by every
/// tool in `tools`.
fn intersect<'a>(
    records: Vec<&'a LifecycleRecord>,
    tools: &BTreeSet<String>,
    map: &CategoryMap,
) -> Result<Vec<&'a LifecycleRecord>> {
    let unmapped: BTreeSet<String> = records
        .iter()
        .filter(|r| map.category(&r.key.tool, &r.key.vuln_type).is_none())
        .map(|r| format!("{}:{}", r.key.tool, r.key.vuln_type))
        .collect();
    if !unmapped.is_empty() {
        return Err(Error::Config(format!(
            "no category for {}",
            unmapped.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let group = |r: &LifecycleRecord| {
        (pair_id(r), r.key.file.clone(), map.category(&r.key.tool, &r.key.vuln_type).unwrap_or_default().to_string())
    };
    let mut reporters: BTreeMap<_, BTreeSet<&str>> = BTreeMap::new();
    for r in &records {
        reporters.entry(group(r)).or_default().insert(r.key.tool.as_str());
    }
    Ok(records
        .into_iter()
        .filter(|r| tools.iter().all(|t| reporters[&group(r)].contains(t.as_str())))
        .collect())
}

/// Summarizes lifecycle records. `tools = None` configures every tool that
/// appears in the records.
pub fn lifecycle_stats(
    records: &[LifecycleRecord],
    mode: CombineMode,
    tools: Option<&BTreeSet<String>>,
    map: &CategoryMap,
) -> Result<LifecycleSummary> {
    let tools: BTreeSet<String> = match tools {
        Some(t) => t.clone(),
        None => records.iter().map(|r| r.key.tool.clone()).collect(),
    };
    let mut kept: Vec<&LifecycleRecord> = records.iter().filter(|r| tools.contains(&r.key.tool)).collect();
    if mode == CombineMode::Intersection {
        kept = intersect(kept, &tools, map)?;
    }

    let mut summary = LifecycleSummary {
        mode,
        tools: tools.iter().cloned().collect(),
        records: kept.len(),
        ..Default::default()
    };

    let mut occurrences = BTreeSet::new();
    let mut files_hit = BTreeSet::new();
    let mut contracts_hit = BTreeSet::new();
    let mut lineages = BTreeSet::new();
    let mut keys: BTreeMap<(PairId, &FindingKey), [usize; 3]> = BTreeMap::new();
    let mut files: BTreeMap<(PairId, &FileIdentity), [usize; 3]> = BTreeMap::new();
    let mut days = Vec::new();

    for r in &kept {
        let slot = match r.status {
            LifecycleStatus::Persisted => {
                summary.persisted += 1;
                0
            }
            LifecycleStatus::Introduced => {
                summary.introduced += 1;
                1
            }
            LifecycleStatus::Disappeared => {
                summary.disappeared += 1;
                days.extend(r.days_to_disappear);
                2
            }
        };
        keys.entry((pair_id(r), &r.key)).or_default()[slot] += 1;
        files.entry((pair_id(r), &r.key.file)).or_default()[slot] += 1;
        lineages.insert(r.proxy);
        let sides = [(r.predecessor, r.predecessor_file()), (r.successor, r.successor_file())];
        for (contract, path) in sides {
            if let Some(path) = path {
                occurrences.insert((contract, &r.key.tool, &r.key.vuln_type, path, r.ordinal));
                files_hit.insert((contract, path));
                contracts_hit.insert(contract);
            }
        }
    }

    summary.distinct_findings = occurrences.len();
    summary.vulnerable_files = files_hit.len();
    summary.vulnerable_contracts = contracts_hit.len();
    summary.lineages_touched = lineages.len();
    summary.keys = keys.len();
    summary.files = files.len();

    summary.introduced_pct = Shares {
        of_records: pct(summary.introduced, summary.records),
        of_keys: pct(with(&keys, 1), keys.len()),
        of_files: pct(with(&files, 1), files.len()),
    };
    summary.disappeared_pct = Shares {
        of_records: pct(summary.disappeared, summary.records),
        of_keys: pct(with(&keys, 2), keys.len()),
        of_files: pct(with(&files, 2), files.len()),
    };
    summary.mean_days_to_disappear = (!days.is_empty()).then(|| days.iter().sum::<f64>() / days.len() as f64);
    summary.patched_files = files.values().filter(|c| c[2] > 0 && c[1] == 0).count();
    summary.patched_files_pct = pct(summary.patched_files, files.len());
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineage::ActivityWindow;

    fn addr(b: u8) -> Address {
        Address::from_bytes([b; 20])
    }

    fn pair() -> ContractPair {
        ContractPair {
            proxy: addr(0xaa),
            predecessor: addr(1),
            successor: addr(2),
            predecessor_window: ActivityWindow { first_call: 0, last_call: 86_400 },
            successor_window: ActivityWindow { first_call: 3 * 86_400, last_call: 4 * 86_400 },
            gap_days: 2.0,
        }
    }

    fn finding(tool: &str, vuln: &str, contract: u8, file: &str) -> Finding {
        Finding {
            tool: tool.into(),
            vuln_type: vuln.into(),
            contract: addr(contract),
            file: FilePath::new("", file),
            start_line: 1,
            end_line: 1,
            message: String::new(),
        }
    }

    fn statuses(records: &[LifecycleRecord]) -> Vec<LifecycleStatus> {
        records.iter().map(|r| r.status).collect()
    }

    #[test]
    fn one_sided_findings() {
        let gone = diff_pair(&pair(), &[], &[finding("slither", "reentrancy-eth", 1, "F.sol")], &[]);
        assert_eq!(statuses(&gone), vec![LifecycleStatus::Disappeared]);
        assert_eq!(gone[0].days_to_disappear, Some(3.0));
        let new = diff_pair(&pair(), &[], &[], &[finding("mythril", "SWC-115", 2, "G.sol")]);
        assert_eq!(statuses(&new), vec![LifecycleStatus::Introduced]);
        assert_eq!(new[0].days_to_disappear, None);
    }

    #[test]
    fn multiplicities_are_diffed() {
        let f = finding("slither", "reentrancy-eth", 1, "F.sol");
        let g = finding("slither", "reentrancy-eth", 2, "F.sol");
        let records = diff_pair(&pair(), &[], &[f.clone(), f], &[g]);
        assert_eq!(statuses(&records), vec![LifecycleStatus::Persisted, LifecycleStatus::Disappeared]);
    }

    #[test]
    fn renamed_file_pairs_share_identity() {
        let fp = FilePair {
            predecessor: addr(1),
            successor: addr(2),
            predecessor_file: FilePath::new("", "TokenV1.sol"),
            successor_file: FilePath::new("", "TokenV2.sol"),
            name_distance: 1,
            line_similarity: 0.5,
            content_similarity: 0.5,
        };
        let records = diff_pair(
            &pair(),
            &[fp],
            &[finding("slither", "tx-origin", 1, "TokenV1.sol")],
            &[finding("slither", "tx-origin", 2, "TokenV2.sol")],
        );
        assert_eq!(statuses(&records), vec![LifecycleStatus::Persisted]);
    }

    #[test]
    fn findings_load_leniently() {
        let text = concat!(
            r#"{"tool":"slither","vuln_type":"tx-origin","contract":"0x0101010101010101010101010101010101010101","directory":"","filename":"A.sol","start_line":3,"end_line":4,"message":"m"}"#,
            "\n"
        );
        let corpus = Corpus::default();
        let loaded = read_findings(text.as_bytes(), "f", Some(&corpus)).unwrap();
        assert_eq!(loaded.findings.len(), 1);
        assert_eq!(loaded.diagnostics.len(), 1);
        assert!(read_findings("".as_bytes(), "f", None).unwrap().findings.is_empty());
        let err = read_findings("\n{\"tool\":1}\n".as_bytes(), "f", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn intersection_requires_mapped_types() {
        let records = diff_pair(&pair(), &[], &[finding("slither", "weird", 1, "A.sol")], &[]);
        let err = lifecycle_stats(&records, CombineMode::Intersection, None, &CategoryMap::default_map()).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("slither:weird")));
    }

    #[test]
    fn intersection_keeps_shared_categories() {
        let pred = vec![
            finding("slither", "reentrancy-eth", 1, "A.sol"),
            finding("mythril", "SWC-107", 1, "A.sol"),
            finding("slither", "tx-origin", 1, "A.sol"),
        ];
        let records = diff_pair(&pair(), &[], &pred, &[]);
        let map = CategoryMap::default_map();
        let union = lifecycle_stats(&records, CombineMode::Union, None, &map).unwrap();
        let inter = lifecycle_stats(&records, CombineMode::Intersection, None, &map).unwrap();
        assert_eq!(union.disappeared, 3);
        assert_eq!(inter.disappeared, 2);
        assert_eq!(inter.patched_files, 1);
    }
}
