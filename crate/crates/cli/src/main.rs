use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lineage_core::dataset::{self, DatasetBundle, InputDigest, Manifest};
use lineage_core::evaluation::{evaluate, Averaging, ContractScope, LineagePredictor};
use lineage_core::fingerprint::{self, Category, Fingerprint, LshIndex, MinHasher};
use lineage_core::ingest::explorer::{ContractCache, ExplorerClient, ExplorerConfig};
use lineage_core::ingest::{load_corpus, Corpus, IngestDiagnostic, LoadReport, UpgradeSignatures};
use lineage_core::lifecycle::{self, CategoryMap, CombineMode, LifecycleRecord};
use lineage_core::lineage::{build_lineages, contract_pairs};
use lineage_core::stats::compute_stats;
use lineage_core::{Error, Result};

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "lineage-miner", version, about = "Mine, pair and evaluate proxy-anchored smart-contract lineages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Delegatecall trace fixture (NDJSON)
    #[arg(long)]
    traces: PathBuf,
    /// Contract metadata fixture (NDJSON)
    #[arg(long)]
    contracts: PathBuf,
    /// Directory of cached explorer responses, used for callees missing from --contracts
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Fetch callees that are neither in --contracts nor cached (needs ETHERSCAN_API_KEY)
    #[arg(long, requires = "cache_dir")]
    allow_network: bool,
    /// Keep only proxies observed executing an upgrade selector
    #[arg(long)]
    upgraded_only: bool,
    /// Monitored upgrade signature (repeatable; defaults to upgradeTo and upgradeToAndCall)
    #[arg(long = "upgrade-signature", value_name = "SIGNATURE")]
    upgrade_signatures: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize the fixtures and report ingestion diagnostics
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Output directory for traces.ndjson, contracts.ndjson and ingest_diagnostics.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the lineage rules and write lineages, contract pairs and exclusions
    BuildLineages {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair files and functions of every predecessor/successor pair
    Pair {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// MinHash fingerprints of every open-source contract (NDJSON)
    Fingerprint {
        #[arg(long)]
        contracts: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Signature length
        #[arg(long, default_value_t = fingerprint::DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score similarity-based lineage retrieval against the rule-based lineages
    EvaluateLsh {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Extra precomputed fingerprints (NDJSON), e.g. for closed-source contracts
        #[arg(long)]
        fingerprints: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Similarity threshold (repeatable; low, medium, high; default all three)
        #[arg(long = "threshold", value_parser = parse_threshold)]
        thresholds: Vec<Category>,
        /// Contract scope (repeatable; open-source, all; default both)
        #[arg(long = "scope", value_parser = parse_scope)]
        scopes: Vec<ContractScope>,
        #[arg(long, default_value_t = fingerprint::DEFAULT_BANDS)]
        bands: usize,
        #[arg(long, default_value_t = fingerprint::DEFAULT_ROWS)]
        rows: usize,
        /// Average per query instead of pooling counts
        #[arg(long)]
        macro_average: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify detector findings as introduced, persisted or disappeared
    VulnLifecycle {
        /// Dataset bundle directory produced by `emit`
        bundle: PathBuf,
        /// Findings report (NDJSON)
        #[arg(long)]
        findings: PathBuf,
        /// JSON object tool -> {vuln_type -> category}; defaults to the built-in map
        #[arg(long)]
        category_map: Option<PathBuf>,
        /// union or intersection
        #[arg(long, default_value = "union", value_parser = parse_mode)]
        mode: CombineMode,
        /// Configured tool (repeatable; default every tool in the report)
        #[arg(long = "tool")]
        tools: Vec<String>,
        /// Also write every lifecycle record here (NDJSON)
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary statistics of a dataset bundle
    Stats {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline and write the dataset bundle
    Emit {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
            }
            fs::write(path, bytes).map_err(|e| io_error(path, e))
        }
        None => io::stdout().write_all(bytes).map_err(|e| io_error("<stdout>", e)),
    }
}

fn io_error(path: impl Into<PathBuf>, source: io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    write_out(out, &dataset::to_canonical_json(value)?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Loads the corpus, filling in missing callees from the cache or explorer.
fn load(args: &CorpusArgs) -> Result<LoadReport> {
    let mut report = load_corpus(&args.traces, &args.contracts)?;
    if let Some(dir) = &args.cache_dir {
        let cache = ContractCache::new(dir)?;
        let missing: Vec<_> = report
            .diagnostics
            .iter()
            .filter_map(|d| match d {
                IngestDiagnostic::UnresolvedCallee { callee } => Some(*callee),
                _ => None,
            })
            .collect();
        let mut found = Vec::new();
        if args.allow_network {
            let client = ExplorerClient::http(ExplorerConfig::from_env()?);
            for (_, outcome) in client.fetch_contracts(missing, &cache) {
                found.push(outcome?);
            }
        } else {
            for address in missing {
                found.extend(cache.load(address)?);
            }
        }
        if !found.is_empty() {
            let Corpus { events, contracts } = report.corpus;
            report = Corpus::from_parts(events, contracts.into_values().chain(found))?;
        }
    }
    if args.upgraded_only {
        let signatures = if args.upgrade_signatures.is_empty() {
            UpgradeSignatures::default()
        } else {
            UpgradeSignatures::new(&args.upgrade_signatures)?
        };
        report.corpus.retain_upgraded_proxies(&signatures);
    }
    Ok(report)
}

fn input_digests(args: &CorpusArgs) -> Result<Vec<InputDigest>> {
    Ok(vec![
        InputDigest::of_file("contracts", &args.contracts)?,
        InputDigest::of_file("traces", &args.traces)?,
    ])
}

fn parse_threshold(raw: &str) -> std::result::Result<Category, String> {
    match raw.parse::<Category>() {
        Ok(Category::None) => Err("threshold must be low, medium or high".into()),
        Ok(c) => Ok(c),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_scope(raw: &str) -> std::result::Result<ContractScope, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(raw: &str) -> std::result::Result<CombineMode, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

/// Sorted, deduplicated values, or `default` when none were given.
fn or_default<T: Ord + Copy>(mut values: Vec<T>, default: &[T]) -> Vec<T> {
    if values.is_empty() {
        return default.to_vec();
    }
    values.sort();
    values.dedup();
    values
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { corpus, out } => {
            let report = load(&corpus)?;
            let (traces, contracts) = report.corpus.to_ndjson();
            write_out(Some(&out.join("traces.ndjson")), &traces)?;
            write_out(Some(&out.join("contracts.ndjson")), &contracts)?;
            write_json(Some(&out.join("ingest_diagnostics.json")), &report.diagnostics)
        }
        Command::BuildLineages { corpus, out } => {
            let report = load(&corpus)?;
            let (lineages, diagnostics) = build_lineages(&report.corpus);
            let pairs = contract_pairs(&lineages);
            write_json(Some(&out.join(dataset::LINEAGES_FILE)), &lineages)?;
            write_json(Some(&out.join(dataset::CONTRACT_PAIRS_FILE)), &pairs)?;
            write_json(Some(&out.join("lineage_diagnostics.json")), &diagnostics.exclusions)
        }
        Command::Pair { corpus, out } => {
            let report = load(&corpus)?;
            let output = dataset::run_pipeline(&report.corpus);
            write_json(Some(&out.join(dataset::FILE_PAIRS_FILE)), &output.file_pairs)?;
            write_json(Some(&out.join(dataset::FUNCTION_PAIRS_FILE)), &output.function_pairs)?;
            write_json(
                Some(&out.join("pairing_diagnostics.json")),
                &serde_json::json!({ "extraction": output.extraction, "pairing": output.pairing }),
            )
        }
        Command::Fingerprint { contracts, seed, k, out } => {
            if k == 0 {
                return Err(Error::Validation("--k must be positive".into()));
            }
            let file = fs::File::open(&contracts).map_err(|e| io_error(&contracts, e))?;
            let report = Corpus::from_readers(&b""[..], "<none>", BufReader::new(file), &contracts.display().to_string())?;
            let fps = fingerprint::fingerprint_all(report.corpus.contracts.values(), &MinHasher::new(k, seed));
            write_out(out.as_deref(), &csv_bytes(|b| fingerprint::write_fingerprints(&fps, b)))
        }
        Command::EvaluateLsh {
            corpus,
            fingerprints,
            seed,
            thresholds,
            scopes,
            bands,
            rows,
            macro_average,
            format,
            out,
        } => {
            let thresholds = or_default(thresholds, &Category::THRESHOLDS);
            let scopes = or_default(scopes, &ContractScope::BOTH);
            let report = load(&corpus)?;
            let (lineages, _) = build_lineages(&report.corpus);
            let hasher = MinHasher::new(bands * rows, seed);
            let mut fps: Vec<Fingerprint> = fingerprint::fingerprint_all(report.corpus.contracts.values(), &hasher);
            if let Some(path) = &fingerprints {
                let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
                let have: BTreeSet<_> = fps.iter().map(|f| f.address).collect();
                let extra = fingerprint::read_fingerprints(BufReader::new(file), &path.display().to_string())?;
                fps.extend(extra.into_iter().filter(|f| !have.contains(&f.address)));
            }
            let index = LshIndex::with_bands(fps, bands, rows)?;
            let predictor = LineagePredictor::new(&index, &report.corpus.contracts);
            let averaging = if macro_average { Averaging::Macro } else { Averaging::Micro };
            let result = evaluate(&lineages, &predictor, &thresholds, &scopes, averaging);
            match format {
                Format::Json => write_json(out.as_deref(), &result.to_json()),
                Format::Csv => write_out(out.as_deref(), &csv_bytes(|b| result.write_csv(b))),
            }
        }
        Command::VulnLifecycle {
            bundle,
            findings,
            category_map,
            mode,
            tools,
            records,
            format,
            out,
        } => {
            let bundle = dataset::load_bundle(&bundle)?;
            let map = match &category_map {
                Some(path) => CategoryMap::from_json(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)?,
                None => CategoryMap::default_map(),
            };
            let loaded = lifecycle::load_findings(&findings, None)?;
            let all = lifecycle_records(&bundle, &loaded.findings);
            let tools: BTreeSet<String> = tools.into_iter().collect();
            let summary = lifecycle::lifecycle_stats(&all, mode, (!tools.is_empty()).then_some(&tools), &map)?;
            if let Some(path) = &records {
                let mut buf = Vec::new();
                for r in &all {
                    serde_json::to_writer(&mut buf, r).map_err(|e| Error::Integrity(e.to_string()))?;
                    buf.push(b'\n');
                }
                write_out(Some(path), &buf)?;
            }
            match format {
                Format::Json => write_json(out.as_deref(), &summary),
                Format::Csv => write_out(out.as_deref(), &csv_bytes(|b| write_flat_csv(&summary, b))),
            }
        }
        Command::Stats { bundle, format, out } => {
            let bundle = dataset::load_bundle(&bundle)?;
            let stats = compute_stats(&bundle);
            match format {
                Format::Json => write_json(out.as_deref(), &stats),
                Format::Csv => write_out(out.as_deref(), &csv_bytes(|b| stats.write_csv(b))),
            }
        }
        Command::Emit { corpus, out } => {
            let report = load(&corpus)?;
            let output = dataset::run_pipeline(&report.corpus);
            let manifest = Manifest::new(dataset::default_generated_at(&report.corpus)?, input_digests(&corpus)?);
            let bundle = DatasetBundle::assemble(&report, &output, manifest)?;
            dataset::emit_dataset(&bundle, &out)
        }
    }
}

fn lifecycle_records(bundle: &DatasetBundle, findings: &[lifecycle::Finding]) -> Vec<LifecycleRecord> {
    let mut out = Vec::new();
    for pair in &bundle.contract_pairs {
        let pred: Vec<_> = findings.iter().filter(|f| f.contract == pair.predecessor).cloned().collect();
        let succ: Vec<_> = findings.iter().filter(|f| f.contract == pair.successor).cloned().collect();
        out.extend(lifecycle::diff_pair(pair, &bundle.file_pairs, &pred, &succ));
    }
    out
}

/// `field,value` rows of a JSON object, flattening one level of nesting.
fn write_flat_csv<T: serde::Serialize, W: Write>(value: &T, mut out: W) -> io::Result<()> {
    let value = serde_json::to_value(value).expect("summary serializes");
    writeln!(out, "metric,value")?;
    let cell = |v: &serde_json::Value| match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string().replace(',', ";"),
    };
    for (key, v) in value.as_object().expect("summary is an object") {
        match v {
            serde_json::Value::Object(inner) => {
                for (sub, v) in inner {
                    writeln!(out, "{key}.{sub},{}", cell(v))?;
                }
            }
            v => writeln!(out, "{key},{}", cell(v))?,
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
