//! The end-to-end pipeline and its on-disk dataset bundle.
//!
//! A bundle is a directory of pretty-printed JSON documents with sorted keys
//! plus the source tree of every open-source lineage member:
//!
//! ```text
//! manifest.json  lineages.json  contract_pairs.json  file_pairs.json
//! function_pairs.json  diagnostics.json  sources/<address>/<directory>/<filename>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::address::Address;
use crate::error::{Error, Result};
use crate::ingest::{ContractRecord, Corpus, FilePath, IngestDiagnostic, LoadReport, SourceFile};
use crate::lineage::{build_lineages, contract_pairs, ContractPair, Exclusion, Lineage};
use crate::pairing::{extract_functions, pair_files, pair_functions, FilePair, FunctionPair, FunctionUnit, PairingFlag};

pub const BUNDLE_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LINEAGES_FILE: &str = "lineages.json";
pub const CONTRACT_PAIRS_FILE: &str = "contract_pairs.json";
pub const FILE_PAIRS_FILE: &str = "file_pairs.json";
pub const FUNCTION_PAIRS_FILE: &str = "function_pairs.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SOURCES_DIR: &str = "sources";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(name: impl Into<String>, content: &[u8]) -> Self {
        InputDigest {
            name: name.into(),
            bytes: content.len() as u64,
            sha256: sha256_hex(content),
        }
    }

    pub fn of_file(name: impl Into<String>, path: &Path) -> Result<Self> {
        let content = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::of_bytes(name, &content))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Unix seconds. Derived from the inputs so that reruns are byte-identical.
    pub generated_at: u64,
    pub inputs: Vec<InputDigest>,
}

impl Manifest {
    pub fn new(generated_at: u64, mut inputs: Vec<InputDigest>) -> Self {
        inputs.sort_by(|a, b| a.name.cmp(&b.name));
        Manifest {
            version: BUNDLE_VERSION,
            generated_at,
            inputs,
        }
    }

    /// Checks that `name` is recorded with exactly this content.
    pub fn verify_input(&self, name: &str, content: &[u8]) -> Result<()> {
        let recorded = self
            .inputs
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Integrity(format!("manifest has no input named `{name}`")))?;
        if *recorded != InputDigest::of_bytes(name, content) {
            return Err(Error::Integrity(format!("input `{name}` does not match its manifest digest")));
        }
        Ok(())
    }
}

/// Default generation timestamp: `SOURCE_DATE_EPOCH` when set, else the
/// latest observed call.
pub fn default_generated_at(corpus: &Corpus) -> Result<u64> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH `{raw}` is not an integer"))),
        Err(_) => Ok(corpus.events.iter().map(|e| e.timestamp).max().unwrap_or(0)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BundleFile {
    pub directory: String,
    pub filename: String,
    pub lines: usize,
    pub sha256: String,
}

impl BundleFile {
    pub fn path(&self) -> FilePath {
        FilePath::new(self.directory.clone(), self.filename.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleVersion {
    pub address: Address,
    pub creator: Address,
    pub first_call: u64,
    pub last_call: u64,
    pub verified: bool,
    pub open_source: bool,
    pub files: Vec<BundleFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleLineage {
    pub proxy: Address,
    pub creator: Address,
    pub versions: Vec<BundleVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtractionIssue {
    pub contract: Address,
    pub file: FilePath,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairingIssue {
    pub predecessor: Address,
    pub successor: Address,
    pub flag: PairingFlag,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDiagnostics {
    pub ingest: Vec<IngestDiagnostic>,
    pub lineage: Vec<Exclusion>,
    pub extraction: Vec<ExtractionIssue>,
    pub pairing: Vec<PairingIssue>,
}

/// Everything the pipeline derives from a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub lineages: Vec<Lineage>,
    pub contract_pairs: Vec<ContractPair>,
    pub file_pairs: Vec<FilePair>,
    pub function_pairs: Vec<FunctionPair>,
    pub exclusions: Vec<Exclusion>,
    pub extraction: Vec<ExtractionIssue>,
    pub pairing: Vec<PairingIssue>,
}

/// Builds lineages, then pairs files and functions for every distinct
/// predecessor/successor combination.
type ExtractedFile = (FilePath, Vec<FunctionUnit>, Vec<ExtractionIssue>);

pub fn run_pipeline(corpus: &Corpus) -> PipelineOutput {
    let (lineages, diagnostics) = build_lineages(corpus);
    let pairs = contract_pairs(&lineages);

    let distinct: BTreeSet<(Address, Address)> = pairs.iter().map(|p| (p.predecessor, p.successor)).collect();
    let members: BTreeSet<Address> = lineages.iter().flat_map(|l| l.versions.iter().map(|v| v.address)).collect();

    let extracted: BTreeMap<Address, Vec<ExtractedFile>> = members
        .par_iter()
        .filter_map(|a| corpus.contracts.get(a))
        .map(|record| {
            let files = record
                .files
                .iter()
                .map(|f| {
                    let ex = extract_functions(f);
                    let issues = ex
                        .diagnostics
                        .into_iter()
                        .map(|d| ExtractionIssue {
                            contract: record.address,
                            file: d.file,
                            line: d.line,
                            message: d.message,
                        })
                        .collect();
                    (f.path(), ex.functions, issues)
                })
                .collect();
            (record.address, files)
        })
        .collect();

    let functions_of = |address: &Address, path: &FilePath| -> &[FunctionUnit] {
        extracted
            .get(address)
            .and_then(|files| files.iter().find(|(p, _, _)| p == path))
            .map_or(&[], |(_, units, _)| units.as_slice())
    };

    let per_pair: Vec<(Vec<FilePair>, Vec<FunctionPair>, Option<PairingIssue>)> = distinct
        .par_iter()
        .map(|&(pred, succ)| {
            let (Some(p), Some(s)) = (corpus.contracts.get(&pred), corpus.contracts.get(&succ)) else {
                return (Vec::new(), Vec::new(), None);
            };
            let pairing = pair_files(p, s);
            let issue = pairing.flag.map(|flag| PairingIssue {
                predecessor: pred,
                successor: succ,
                flag,
            });
            let functions = pairing
                .pairs
                .iter()
                .flat_map(|fp| {
                    pair_functions(
                        fp,
                        functions_of(&pred, &fp.predecessor_file),
                        functions_of(&succ, &fp.successor_file),
                    )
                    .pairs
                })
                .collect();
            (pairing.pairs, functions, issue)
        })
        .collect();

    let mut output = PipelineOutput {
        lineages,
        contract_pairs: pairs,
        exclusions: diagnostics.exclusions,
        ..Default::default()
    };
    for (files, functions, issue) in per_pair {
        output.file_pairs.extend(files);
        output.function_pairs.extend(functions);
        output.pairing.extend(issue);
    }
    output.extraction = extracted
        .into_values()
        .flat_map(|files| files.into_iter().flat_map(|(_, _, issues)| issues))
        .collect();
    output.extraction.sort();
    output
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub lineages: Vec<BundleLineage>,
    pub contract_pairs: Vec<ContractPair>,
    pub file_pairs: Vec<FilePair>,
    pub function_pairs: Vec<FunctionPair>,
    pub diagnostics: BundleDiagnostics,
    /// Source files of open-source lineage members.
    pub sources: BTreeMap<Address, Vec<SourceFile>>,
}

fn bundle_version(record: Option<&ContractRecord>, address: Address, window: crate::lineage::ActivityWindow) -> BundleVersion {
    let files = record
        .map(|r| {
            r.files
                .iter()
                .map(|f| BundleFile {
                    directory: f.directory.clone(),
                    filename: f.filename.clone(),
                    lines: f.content.lines().count(),
                    sha256: sha256_hex(f.content.as_bytes()),
                })
                .collect()
        })
        .unwrap_or_default();
    BundleVersion {
        address,
        creator: record.map(|r| r.creator).unwrap_or_default(),
        first_call: window.first_call,
        last_call: window.last_call,
        verified: record.is_some_and(|r| r.verified),
        open_source: record.is_some_and(|r| r.open_source),
        files,
    }
}

impl DatasetBundle {
    pub fn assemble(report: &LoadReport, output: &PipelineOutput, manifest: Manifest) -> Result<Self> {
        let contracts = &report.corpus.contracts;
        let lineages: Vec<BundleLineage> = output
            .lineages
            .iter()
            .map(|l| BundleLineage {
                proxy: l.proxy,
                creator: l.creator,
                versions: l
                    .versions
                    .iter()
                    .map(|v| bundle_version(contracts.get(&v.address), v.address, v.window))
                    .collect(),
            })
            .collect();
        let sources = lineages
            .iter()
            .flat_map(|l| &l.versions)
            .filter_map(|v| contracts.get(&v.address))
            .filter(|r| r.open_source)
            .map(|r| (r.address, r.files.clone()))
            .collect();
        let bundle = DatasetBundle {
            manifest,
            lineages,
            contract_pairs: output.contract_pairs.clone(),
            file_pairs: output.file_pairs.clone(),
            function_pairs: output.function_pairs.clone(),
            diagnostics: BundleDiagnostics {
                ingest: report.diagnostics.clone(),
                lineage: output.exclusions.clone(),
                extraction: output.extraction.clone(),
                pairing: output.pairing.clone(),
            },
            sources,
        };
        bundle.check_integrity()?;
        Ok(bundle)
    }

    /// First distinct occurrence of every version, keyed by address.
    pub fn versions(&self) -> BTreeMap<Address, &BundleVersion> {
        let mut out = BTreeMap::new();
        for v in self.lineages.iter().flat_map(|l| &l.versions) {
            out.entry(v.address).or_insert(v);
        }
        out
    }

    /// Referential integrity across all documents of the bundle.
    pub fn check_integrity(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Integrity(m));
        let versions = self.versions();
        let file_sets: BTreeMap<Address, BTreeSet<FilePath>> = versions
            .iter()
            .map(|(a, v)| (*a, v.files.iter().map(BundleFile::path).collect()))
            .collect();
        for v in self.lineages.iter().flat_map(|l| &l.versions) {
            if versions[&v.address] != v {
                return fail(format!("version {} is described inconsistently", v.address));
            }
        }
        let mut adjacent = BTreeSet::new();
        for l in &self.lineages {
            for w in l.versions.windows(2) {
                adjacent.insert((l.proxy, w[0].address, w[1].address));
            }
        }
        let pair_set: BTreeSet<(Address, Address)> = self.contract_pairs.iter().map(|p| (p.predecessor, p.successor)).collect();
        for p in &self.contract_pairs {
            if !adjacent.contains(&(p.proxy, p.predecessor, p.successor)) {
                return fail(format!("contract pair {} -> {} is not adjacent in any lineage", p.predecessor, p.successor));
            }
        }
        let has_file = |a: &Address, f: &FilePath| file_sets.get(a).is_some_and(|s| s.contains(f));
        let mut file_pair_set = BTreeSet::new();
        for fp in &self.file_pairs {
            if !pair_set.contains(&(fp.predecessor, fp.successor)) {
                return fail(format!("file pair for unknown contract pair {} -> {}", fp.predecessor, fp.successor));
            }
            if !has_file(&fp.predecessor, &fp.predecessor_file) || !has_file(&fp.successor, &fp.successor_file) {
                return fail(format!("file pair {} -> {} names a missing file", fp.predecessor_file, fp.successor_file));
            }
            file_pair_set.insert((fp.predecessor, fp.successor, &fp.predecessor_file, &fp.successor_file));
        }
        for f in &self.function_pairs {
            if !file_pair_set.contains(&(f.predecessor, f.successor, &f.predecessor_file, &f.successor_file)) {
                return fail(format!(
                    "function pair {} -> {} has no file pair",
                    f.predecessor_function.signature, f.successor_function.signature
                ));
            }
        }
        for (address, files) in &self.sources {
            let Some(v) = versions.get(address) else {
                return fail(format!("sources for {address}, which is in no lineage"));
            };
            let expected: BTreeMap<FilePath, &str> =
                v.files.iter().map(|f| (f.path(), f.sha256.as_str())).collect();
            if files.len() != expected.len() {
                return fail(format!("sources for {address} do not match its file list"));
            }
            for f in files {
                if expected.get(&f.path()) != Some(&sha256_hex(f.content.as_bytes()).as_str()) {
                    return fail(format!("source {} of {address} does not match its digest", f.path()));
                }
            }
        }
        for (address, v) in &versions {
            if v.open_source && !self.sources.contains_key(address) {
                return fail(format!("open-source version {address} has no sources"));
            }
        }
        Ok(())
    }
}

/// Serializes with sorted object keys, two-space indent and a trailing LF.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(value).map_err(|e| Error::Integrity(e.to_string()))?;
    let mut out = serde_json::to_vec_pretty(&value).map_err(|e| Error::Integrity(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// `root/sources/<address>/<directory>/<filename>`, refusing anything that
/// could leave `root`.
pub fn source_path(root: &Path, address: Address, file: &FilePath) -> Result<PathBuf> {
    let relative = Path::new(&file.directory).join(&file.filename);
    if file.filename.is_empty() || relative.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::Validation(format!("unsafe source path `{}`", file.joined())));
    }
    Ok(root.join(SOURCES_DIR).join(address.to_string()).join(relative))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn emit_dataset(bundle: &DatasetBundle, out_dir: &Path) -> Result<()> {
    bundle.check_integrity()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let documents: [(&str, Vec<u8>); 6] = [
        (MANIFEST_FILE, to_canonical_json(&bundle.manifest)?),
        (LINEAGES_FILE, to_canonical_json(&bundle.lineages)?),
        (CONTRACT_PAIRS_FILE, to_canonical_json(&bundle.contract_pairs)?),
        (FILE_PAIRS_FILE, to_canonical_json(&bundle.file_pairs)?),
        (FUNCTION_PAIRS_FILE, to_canonical_json(&bundle.function_pairs)?),
        (DIAGNOSTICS_FILE, to_canonical_json(&bundle.diagnostics)?),
    ];
    for (name, bytes) in documents {
        write_file(&out_dir.join(name), &bytes)?;
    }
    for (address, files) in &bundle.sources {
        for f in files {
            write_file(&source_path(out_dir, *address, &f.path())?, f.content.as_bytes())?;
        }
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let lineages: Vec<BundleLineage> = read_json(&dir.join(LINEAGES_FILE))?;
    let mut sources: BTreeMap<Address, Vec<SourceFile>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for v in lineages.iter().flat_map(|l| &l.versions) {
        if !v.open_source || !seen.insert(v.address) {
            continue;
        }
        let mut files = Vec::with_capacity(v.files.len());
        for f in &v.files {
            let path = source_path(dir, v.address, &f.path())?;
            let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            files.push(SourceFile {
                directory: f.directory.clone(),
                filename: f.filename.clone(),
                content,
            });
        }
        sources.insert(v.address, files);
    }
    let bundle = DatasetBundle {
        manifest: read_json(&dir.join(MANIFEST_FILE))?,
        lineages,
        contract_pairs: read_json(&dir.join(CONTRACT_PAIRS_FILE))?,
        file_pairs: read_json(&dir.join(FILE_PAIRS_FILE))?,
        function_pairs: read_json(&dir.join(FUNCTION_PAIRS_FILE))?,
        diagnostics: read_json(&dir.join(DIAGNOSTICS_FILE))?,
        sources,
    };
    bundle.check_integrity()?;
    Ok(bundle)
}
