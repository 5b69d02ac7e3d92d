//! Etherscan-compatible ingestion client.
//!
//! Two backends implement [`EtherscanApi`]: [`HttpApi`] talks to a REST
//! explorer (`account&action=txlist`, `account&action=txlistinternal`,
//! `contract&action=getsourcecode`) with rate limiting and retry, and
//! [`FixtureApi`] serves local JSON files through the exact same pagination
//! and merge path, so tests never need network access.

use super::{
    parse_compiler_version, Address, Contract, InternalTransaction, NormalTransaction, SourceInfo,
    Wei,
};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Environment variable holding the explorer API key.
pub const API_KEY_ENV: &str = "ETHERSCAN_API_KEY";

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Transactions per page; explorer APIs call this `offset`.
    pub page_size: usize,
    pub requests_per_second: f64,
    pub max_retries: u32,
    /// Bounded parallelism for [`fetch_many`].
    pub concurrency: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: "https://api.etherscan.io/api".into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            page_size: 10_000,
            requests_per_second: 5.0,
            max_retries: 5,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("api error: {0}")]
    Api(String),
    #[error("malformed api payload: field {field:?} has value {value:?}")]
    Parse { field: String, value: String },
    #[error("no creation transaction found for {0}")]
    MissingCreation(Address),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Raw `txlist` record, all fields as decimal/hex strings like the API
/// returns them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawTx {
    pub hash: String,
    #[serde(rename = "blockNumber")]
    pub block_number: String,
    #[serde(rename = "timeStamp")]
    pub time_stamp: String,
    pub from: String,
    #[serde(default)]
    pub to: String,
    #[serde(rename = "contractAddress", default)]
    pub contract_address: String,
    pub value: String,
    pub gas: String,
    #[serde(rename = "gasUsed")]
    pub gas_used: String,
    #[serde(rename = "isError", default)]
    pub is_error: String,
}

/// Raw `txlistinternal` record; `hash` is the originating normal
/// transaction's hash.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawInternalTx {
    pub hash: String,
    pub from: String,
    #[serde(default)]
    pub to: String,
    #[serde(rename = "contractAddress", default)]
    pub contract_address: String,
    pub value: String,
    pub gas: String,
    #[serde(rename = "gasUsed")]
    pub gas_used: String,
    #[serde(rename = "isError", default)]
    pub is_error: String,
}

/// Raw `getsourcecode` record. `ByteCode` is an extension served by the
/// fixture backend; the public endpoint omits it and the contract is then
/// stored with empty bytecode.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawSource {
    #[serde(rename = "SourceCode", default)]
    pub source_code: String,
    #[serde(rename = "CompilerVersion", default)]
    pub compiler_version: String,
    #[serde(rename = "Runs", default)]
    pub runs: String,
    #[serde(rename = "Library", default)]
    pub library: String,
    #[serde(rename = "ByteCode", default)]
    pub byte_code: String,
}

pub trait EtherscanApi: Send + Sync {
    fn txlist(&self, address: &Address, page: usize, offset: usize)
        -> Result<Vec<RawTx>, ClientError>;
    fn txlist_internal(
        &self,
        address: &Address,
        page: usize,
        offset: usize,
    ) -> Result<Vec<RawInternalTx>, ClientError>;
    fn source_code(&self, address: &Address) -> Result<RawSource, ClientError>;
}

#[derive(Debug)]
pub enum FetchOutcome {
    Found {
        contract: Contract,
        source: SourceInfo,
        normals: Vec<NormalTransaction>,
        internals: Vec<InternalTransaction>,
    },
    /// The address has no transactions at all; distinct from an error.
    Unknown,
}

/// Fetch and merge all pages of normal and internal transactions plus the
/// source record for one address.
///
/// Normal transactions are deduplicated by hash and sorted by
/// `(blockNumber, timestamp, hash)`; internal transactions are
/// deduplicated by full record equality and kept unordered. A contract's
/// transaction set is scoped to transactions whose `to` or
/// `contractAddress` equals the contract address.
pub fn fetch_contract_bundle(
    api: &dyn EtherscanApi,
    address: &Address,
    config: &ClientConfig,
) -> Result<FetchOutcome, ClientError> {
    let mut normals: Vec<NormalTransaction> = Vec::new();
    let mut seen_hashes: HashSet<String> = HashSet::new();
    let mut page = 1;
    loop {
        let raw = api.txlist(address, page, config.page_size)?;
        let n = raw.len();
        for r in raw {
            let tx = normalize_tx(&r)?;
            let in_scope = tx.to.as_ref() == Some(address)
                || tx.contract_address.as_ref() == Some(address);
            if in_scope && seen_hashes.insert(tx.hash.clone()) {
                normals.push(tx);
            }
        }
        if n < config.page_size {
            break;
        }
        page += 1;
    }

    let mut internals: Vec<InternalTransaction> = Vec::new();
    let mut seen_internal: HashSet<InternalTransaction> = HashSet::new();
    let mut page = 1;
    loop {
        let raw = api.txlist_internal(address, page, config.page_size)?;
        let n = raw.len();
        for r in raw {
            let tx = normalize_internal(&r)?;
            if seen_internal.insert(tx.clone()) {
                internals.push(tx);
            }
        }
        if n < config.page_size {
            break;
        }
        page += 1;
    }

    if normals.is_empty() && internals.is_empty() {
        return Ok(FetchOutcome::Unknown);
    }

    normals.sort_by(|a, b| {
        (a.block_number, a.timestamp, &a.hash).cmp(&(b.block_number, b.timestamp, &b.hash))
    });

    let creation = normals
        .iter()
        .find(|tx| tx.contract_address.as_ref() == Some(address))
        .ok_or_else(|| ClientError::MissingCreation(address.clone()))?;

    let raw_source = api.source_code(address)?;
    let bytecode = if raw_source.byte_code.is_empty() {
        Vec::new()
    } else {
        hex::decode(raw_source.byte_code.trim_start_matches("0x")).map_err(|_| {
            ClientError::Parse { field: "ByteCode".into(), value: raw_source.byte_code.clone() }
        })?
    };

    let contract = Contract {
        address: address.clone(),
        creator: creation.from.clone(),
        bytecode,
        creation_block: creation.block_number,
        creation_tx_hash: creation.hash.clone(),
    };
    let source = normalize_source(&raw_source)?;

    Ok(FetchOutcome::Found { contract, source, normals, internals })
}

/// Fetch many addresses with bounded parallelism (`config.concurrency`
/// worker threads sharing one backend and rate limiter).
pub fn fetch_many(
    api: &dyn EtherscanApi,
    addresses: &[Address],
    config: &ClientConfig,
) -> Vec<Result<FetchOutcome, ClientError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FetchOutcome, ClientError>>>> =
        Mutex::new((0..addresses.len()).map(|_| None).collect());
    let workers = config.concurrency.max(1).min(addresses.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= addresses.len() {
                    break;
                }
                let res = fetch_contract_bundle(api, &addresses[i], config);
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

fn parse_u64(field: &str, value: &str) -> Result<u64, ClientError> {
    if value.is_empty() {
        return Ok(0);
    }
    value
        .parse()
        .map_err(|_| ClientError::Parse { field: field.into(), value: value.into() })
}

fn parse_wei(field: &str, value: &str) -> Result<Wei, ClientError> {
    if value.is_empty() {
        return Ok(Wei::default());
    }
    value
        .parse()
        .map(Wei)
        .map_err(|_| ClientError::Parse { field: field.into(), value: value.into() })
}

fn parse_flag(field: &str, value: &str) -> Result<bool, ClientError> {
    match value {
        "" | "0" => Ok(false),
        "1" => Ok(true),
        other => Err(ClientError::Parse { field: field.into(), value: other.into() }),
    }
}

fn opt_address(s: &str) -> Option<Address> {
    let a = Address::new(s);
    if a.is_empty() {
        None
    } else {
        Some(a)
    }
}

fn normalize_tx(raw: &RawTx) -> Result<NormalTransaction, ClientError> {
    let gas = parse_u64("gas", &raw.gas)?;
    let gas_used = parse_u64("gasUsed", &raw.gas_used)?;
    if gas_used > gas {
        return Err(ClientError::Parse { field: "gasUsed".into(), value: raw.gas_used.clone() });
    }
    Ok(NormalTransaction {
        hash: raw.hash.trim().to_ascii_lowercase(),
        block_number: parse_u64("blockNumber", &raw.block_number)?,
        timestamp: parse_u64("timeStamp", &raw.time_stamp)?,
        from: Address::new(&raw.from),
        to: opt_address(&raw.to),
        contract_address: opt_address(&raw.contract_address),
        value: parse_wei("value", &raw.value)?,
        gas,
        gas_used,
        is_error: parse_flag("isError", &raw.is_error)?,
    })
}

fn normalize_internal(raw: &RawInternalTx) -> Result<InternalTransaction, ClientError> {
    Ok(InternalTransaction {
        parent_hash: raw.hash.trim().to_ascii_lowercase(),
        from: Address::new(&raw.from),
        to: opt_address(&raw.to),
        contract_address: opt_address(&raw.contract_address),
        value: parse_wei("value", &raw.value)?,
        gas: parse_u64("gas", &raw.gas)?,
        gas_used: parse_u64("gasUsed", &raw.gas_used)?,
        is_error: parse_flag("isError", &raw.is_error)?,
    })
}

fn normalize_source(raw: &RawSource) -> Result<SourceInfo, ClientError> {
    if raw.source_code.trim().is_empty() {
        return Ok(SourceInfo::absent());
    }
    let (_, minor, patch) = parse_compiler_version(&raw.compiler_version);
    Ok(SourceInfo {
        has_source_code: true,
        source_line_count: raw.source_code.lines().count() as u64,
        compiler_version_raw: raw.compiler_version.clone(),
        compiler_minor: minor,
        compiler_patch: patch,
        compiler_runs: parse_u64("Runs", &raw.runs)?,
        library: if raw.library.trim().is_empty() {
            None
        } else {
            Some(raw.library.trim().to_string())
        },
    })
}

// ---------------------------------------------------------------------------
// Fixture backend
// ---------------------------------------------------------------------------

/// One fixture file per address: `<dir>/<address>.json`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureRecord {
    #[serde(default)]
    pub txlist: Vec<RawTx>,
    #[serde(default)]
    pub txlistinternal: Vec<RawInternalTx>,
    #[serde(default)]
    pub source: Option<RawSource>,
}

/// Local-file backend. A missing fixture file behaves like an unknown
/// address (empty result pages), not like an error.
pub struct FixtureApi {
    dir: PathBuf,
}

impl FixtureApi {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureApi { dir: dir.into() }
    }

    fn load(&self, address: &Address) -> Result<Option<FixtureRecord>, ClientError> {
        let path = self.dir.join(format!("{address}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let data = std::fs::read_to_string(&path)
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        let record = serde_json::from_str(&data)
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Some(record))
    }
}

fn paginate<T: Clone>(items: &[T], page: usize, offset: usize) -> Vec<T> {
    let start = (page.saturating_sub(1)) * offset;
    items.iter().skip(start).take(offset).cloned().collect()
}

impl EtherscanApi for FixtureApi {
    fn txlist(
        &self,
        address: &Address,
        page: usize,
        offset: usize,
    ) -> Result<Vec<RawTx>, ClientError> {
        Ok(self.load(address)?.map(|r| paginate(&r.txlist, page, offset)).unwrap_or_default())
    }

    fn txlist_internal(
        &self,
        address: &Address,
        page: usize,
        offset: usize,
    ) -> Result<Vec<RawInternalTx>, ClientError> {
        Ok(self
            .load(address)?
            .map(|r| paginate(&r.txlistinternal, page, offset))
            .unwrap_or_default())
    }

    fn source_code(&self, address: &Address) -> Result<RawSource, ClientError> {
        Ok(self.load(address)?.and_then(|r| r.source).unwrap_or_default())
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// REST backend with a shared rate limiter and exponential backoff on
/// HTTP 429/5xx and transport errors.
pub struct HttpApi {
    client: reqwest::blocking::Client,
    config: ClientConfig,
    last_request: Mutex<Option<Instant>>,
}

impl HttpApi {
    pub fn new(config: ClientConfig) -> Self {
        HttpApi {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("reqwest client"),
            config,
            last_request: Mutex::new(None),
        }
    }

    fn throttle(&self) {
        let min_interval = Duration::from_secs_f64(1.0 / self.config.requests_per_second.max(0.1));
        let mut last = self.last_request.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min_interval {
                std::thread::sleep(min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn get_result(&self, params: &[(&str, &str)]) -> Result<serde_json::Value, ClientError> {
        let mut attempt = 0;
        loop {
            self.throttle();
            let mut pairs: Vec<(&str, &str)> = params.to_vec();
            if let Some(key) = &self.config.api_key {
                pairs.push(("apikey", key.as_str()));
            }
            let url = reqwest::Url::parse_with_params(&self.config.base_url, &pairs)
                .map_err(|e| ClientError::Api(format!("bad base url: {e}")))?;
            let outcome = self.client.get(url).send();
            let retryable_message = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let envelope: serde_json::Value = resp.json().map_err(|e| {
                            ClientError::Parse { field: "<body>".into(), value: e.to_string() }
                        })?;
                        return interpret_envelope(envelope);
                    } else if status.as_u16() == 429 || status.is_server_error() {
                        format!("http status {status}")
                    } else {
                        return Err(ClientError::Api(format!("http status {status}")));
                    }
                }
                Err(e) => e.to_string(),
            };
            attempt += 1;
            if attempt > self.config.max_retries {
                return Err(ClientError::Network { attempts: attempt, message: retryable_message });
            }
            std::thread::sleep(Duration::from_millis(100u64 << attempt.min(8)));
        }
    }
}

fn interpret_envelope(envelope: serde_json::Value) -> Result<serde_json::Value, ClientError> {
    let status = envelope.get("status").and_then(|v| v.as_str()).unwrap_or("");
    let result = envelope.get("result").cloned().unwrap_or(serde_json::Value::Null);
    if status == "1" || result.is_array() {
        return Ok(result);
    }
    let message = envelope.get("message").and_then(|v| v.as_str()).unwrap_or("");
    if message.starts_with("No transactions found") || message.starts_with("No records found") {
        return Ok(serde_json::Value::Array(Vec::new()));
    }
    Err(ClientError::Api(format!("{message}: {result}")))
}

impl EtherscanApi for HttpApi {
    fn txlist(
        &self,
        address: &Address,
        page: usize,
        offset: usize,
    ) -> Result<Vec<RawTx>, ClientError> {
        let result = self.get_result(&[
            ("module", "account"),
            ("action", "txlist"),
            ("address", address.as_str()),
            ("page", &page.to_string()),
            ("offset", &offset.to_string()),
            ("sort", "asc"),
        ])?;
        serde_json::from_value(result)
            .map_err(|e| ClientError::Parse { field: "result".into(), value: e.to_string() })
    }

    fn txlist_internal(
        &self,
        address: &Address,
        page: usize,
        offset: usize,
    ) -> Result<Vec<RawInternalTx>, ClientError> {
        let result = self.get_result(&[
            ("module", "account"),
            ("action", "txlistinternal"),
            ("address", address.as_str()),
            ("page", &page.to_string()),
            ("offset", &offset.to_string()),
            ("sort", "asc"),
        ])?;
        serde_json::from_value(result)
            .map_err(|e| ClientError::Parse { field: "result".into(), value: e.to_string() })
    }

    fn source_code(&self, address: &Address) -> Result<RawSource, ClientError> {
        let result = self.get_result(&[
            ("module", "contract"),
            ("action", "getsourcecode"),
            ("address", address.as_str()),
        ])?;
        let records: Vec<RawSource> = serde_json::from_value(result)
            .map_err(|e| ClientError::Parse { field: "result".into(), value: e.to_string() })?;
        Ok(records.into_iter().next().unwrap_or_default())
    }
}
