//! Optional block-explorer client for contract metadata and verified sources.
//!
//! Requests go through a token-bucket [`RateLimiter`] and are retried with
//! exponential backoff on rate-limit or transient transport failures.
//! Results are cached on disk, one JSON file per address, written atomically
//! so that a warm cache never touches the network.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{normalize_directory, ContractRecord, SourceFile};
use crate::address::Address;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "ETHERSCAN_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.etherscan.io/v2/api";

#[derive(Debug, Clone)]
pub struct ExplorerConfig {
    pub base_url: String,
    pub api_key: String,
    pub chain_id: u64,
    pub requests_per_second: f64,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl ExplorerConfig {
    pub fn new(api_key: impl Into<String>) -> Self {
        ExplorerConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: api_key.into(),
            chain_id: 1,
            requests_per_second: 4.0,
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
            max_in_flight: 4,
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env() -> Result<Self> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(key.trim())),
            _ => Err(Error::Config(format!("{API_KEY_ENV} is not set"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Non-success HTTP status.
    Status(u16),
    /// Connection, TLS or body read failure.
    Network(String),
}

impl TransportError {
    fn retriable(&self) -> bool {
        match self {
            TransportError::Status(code) => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status(code) => write!(f, "HTTP status {code}"),
            TransportError::Network(m) => write!(f, "network error: {m}"),
        }
    }
}

/// Minimal GET interface so the client can be driven without a network.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, query: &[(&str, String)]) -> std::result::Result<String, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(30))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, query: &[(&str, String)]) -> std::result::Result<String, TransportError> {
        let mut request = self.agent.get(url);
        for (k, v) in query {
            request = request.query(*k, v);
        }
        let mut response = request
            .call()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status(status));
        }
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))
    }
}

/// Token bucket allowing bursts of up to `rate` requests, refilled continuously.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        assert!(requests_per_second > 0.0, "rate must be positive");
        let capacity = requests_per_second.max(1.0);
        RateLimiter {
            rate: requests_per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a request may be issued.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("rate limiter poisoned");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            thread::sleep(wait);
        }
    }
}

/// On-disk cache of fetched records, `<dir>/<address>.json`.
#[derive(Debug, Clone)]
pub struct ContractCache {
    dir: PathBuf,
}

impl ContractCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ContractCache { dir })
    }

    fn path(&self, address: Address) -> PathBuf {
        self.dir.join(format!("{address}.json"))
    }

    pub fn load(&self, address: Address) -> Result<Option<ContractRecord>> {
        let path = self.path(address);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let record: ContractRecord = serde_json::from_str(&text)
                    .map_err(|e| Error::parse(path.display().to_string(), 1, e.to_string()))?;
                Ok(Some(record))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn store(&self, record: &ContractRecord) -> Result<()> {
        let path = self.path(record.address);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let bytes = serde_json::to_vec(record).expect("records always serialize");
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

pub struct ExplorerClient<T: Transport = HttpTransport> {
    config: ExplorerConfig,
    transport: T,
    limiter: RateLimiter,
}

impl ExplorerClient<HttpTransport> {
    pub fn http(config: ExplorerConfig) -> Self {
        ExplorerClient::new(config, HttpTransport::default())
    }
}

impl<T: Transport> ExplorerClient<T> {
    pub fn new(config: ExplorerConfig, transport: T) -> Self {
        let limiter = RateLimiter::new(config.requests_per_second);
        ExplorerClient {
            config,
            transport,
            limiter,
        }
    }

    pub fn config(&self) -> &ExplorerConfig {
        &self.config
    }

    fn request(&self, address: Address, action: &str, address_param: &str) -> Result<Value> {
        let query = [
            ("chainid", self.config.chain_id.to_string()),
            ("module", "contract".to_string()),
            ("action", action.to_string()),
            (address_param, address.to_string()),
            ("apikey", self.config.api_key.clone()),
        ];
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            let outcome = match self.transport.get(&self.config.base_url, &query) {
                Ok(body) => classify_body(&body),
                Err(e) => Err((e.retriable(), e.to_string())),
            };
            match outcome {
                Ok(result) => return Ok(result),
                Err((retriable, message)) => {
                    if !retriable || attempt >= self.config.max_retries {
                        return Err(Error::Fetch {
                            address,
                            message: format!("{action}: {message} (after {} attempts)", attempt + 1),
                        });
                    }
                    thread::sleep(self.config.backoff_base * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn fetch_remote(&self, address: Address) -> Result<ContractRecord> {
        let creation = self.request(address, "getcontractcreation", "contractaddresses")?;
        let entry = creation
            .as_array()
            .and_then(|a| a.first())
            .ok_or_else(|| Error::Fetch {
                address,
                message: "empty contract creation result".into(),
            })?;
        let creator: Address = entry
            .get("contractCreator")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Fetch {
                address,
                message: "creation result lacks contractCreator".into(),
            })?
            .parse()
            .map_err(|e| Error::Fetch {
                address,
                message: format!("bad creator: {e}"),
            })?;
        let deploy_timestamp = entry.get("timestamp").and_then(value_as_u64).unwrap_or(0);

        let source = self.request(address, "getsourcecode", "address")?;
        let entry = source.as_array().and_then(|a| a.first()).cloned().unwrap_or(Value::Null);
        let files = parse_source_listing(&entry);
        if files.is_empty() {
            return Ok(ContractRecord::closed(address, creator, deploy_timestamp));
        }
        let record = ContractRecord {
            address,
            creator,
            deploy_timestamp,
            verified: true,
            open_source: true,
            files,
        };
        record.canonicalize().map_err(|message| Error::Fetch { address, message })
    }

    /// Returns the record for `address`, from the cache when present.
    pub fn fetch_contract(&self, address: Address, cache: &ContractCache) -> Result<ContractRecord> {
        if let Some(record) = cache.load(address)? {
            return Ok(record);
        }
        let record = self.fetch_remote(address)?;
        cache.store(&record)?;
        Ok(record)
    }

    /// Fetches many addresses with at most `max_in_flight` concurrent requests.
    ///
    /// Addresses are deduplicated first so every cache entry has a single writer.
    /// Results come back in address order.
    pub fn fetch_contracts(
        &self,
        addresses: impl IntoIterator<Item = Address>,
        cache: &ContractCache,
    ) -> Vec<(Address, Result<ContractRecord>)> {
        let unique: Vec<Address> = addresses.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(Address, Result<ContractRecord>)>> = Mutex::new(Vec::with_capacity(unique.len()));
        let workers = self.config.max_in_flight.clamp(1, unique.len().max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&address) = unique.get(i) else { break };
                    let outcome = self.fetch_contract(address, cache);
                    results.lock().expect("results poisoned").push((address, outcome));
                });
            }
        });
        let mut results = results.into_inner().expect("results poisoned");
        results.sort_by_key(|(a, _)| *a);
        results
    }
}

fn value_as_u64(v: &Value) -> Option<u64> {
    v.as_u64().or_else(|| v.as_str().and_then(|s| s.parse().ok()))
}

/// Splits an explorer response into its `result` payload or a
/// `(retriable, message)` failure.
fn classify_body(body: &str) -> std::result::Result<Value, (bool, String)> {
    let json: Value = serde_json::from_str(body).map_err(|e| (false, format!("invalid JSON: {e}")))?;
    let status = json.get("status").and_then(Value::as_str).unwrap_or("0");
    let result = json.get("result").cloned().unwrap_or(Value::Null);
    if status == "1" {
        return Ok(result);
    }
    let detail = result
        .as_str()
        .map(str::to_string)
        .or_else(|| json.get("message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_default();
    let lowered = detail.to_ascii_lowercase();
    let retriable = lowered.contains("rate limit") || lowered.contains("too many") || lowered.contains("timeout");
    Err((retriable, detail))
}

/// Extracts Solidity sources from one `getsourcecode` result entry.
///
/// Handles the three layouts the explorer uses: a single flattened file, a
/// `{path: {content}}` map, and standard-json input wrapped in double braces.
pub fn parse_source_listing(entry: &Value) -> Vec<SourceFile> {
    let code = entry.get("SourceCode").and_then(Value::as_str).unwrap_or("").trim();
    if code.is_empty() {
        return Vec::new();
    }
    let name = entry
        .get("ContractName")
        .and_then(Value::as_str)
        .filter(|n| !n.is_empty())
        .unwrap_or("Contract");

    let unwrapped = if code.starts_with("{{") && code.ends_with("}}") {
        &code[1..code.len() - 1]
    } else {
        code
    };
    if unwrapped.starts_with('{') {
        if let Ok(json) = serde_json::from_str::<Value>(unwrapped) {
            let sources = json.get("sources").unwrap_or(&json);
            if let Some(map) = sources.as_object() {
                let mut files = Vec::new();
                for (path, body) in map {
                    let Some(content) = body.get("content").and_then(Value::as_str) else {
                        continue;
                    };
                    if let Some(file) = source_file_from_path(path, content) {
                        files.push(file);
                    }
                }
                files.sort();
                files.dedup_by(|a, b| a.directory == b.directory && a.filename == b.filename);
                return files;
            }
        }
    }
    vec![SourceFile {
        directory: String::new(),
        filename: format!("{name}.sol"),
        content: code.to_string(),
    }]
}

fn source_file_from_path(path: &str, content: &str) -> Option<SourceFile> {
    let trimmed = path.trim_start_matches('/');
    let (dir, filename) = match trimmed.rsplit_once('/') {
        Some((d, f)) => (d, f),
        None => ("", trimmed),
    };
    if !filename.ends_with(".sol") || filename.len() <= 4 {
        return None;
    }
    let directory = normalize_directory(dir).ok()?;
    Some(SourceFile {
        directory,
        filename: filename.to_string(),
        content: content.to_string(),
    })
}
