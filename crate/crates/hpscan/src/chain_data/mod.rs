//! Raw chain records: contracts, transactions, source metadata and labels.
//!
//! Everything downstream (fund-flow classification, feature extraction)
//! consumes the types defined here. Values are kept as exact big integers
//! until feature extraction converts them to ether; no floating point at
//! ingestion.

mod client;
mod store;

pub use client::{
    fetch_contract_bundle, fetch_many, ClientConfig, ClientError, EtherscanApi, FetchOutcome,
    FixtureApi, HttpApi, RawInternalTx, RawSource, RawTx,
};
pub use store::{
    append_dataset, load_dataset, read_dataset, store_dataset, write_dataset, StoreError,
    FORMAT_NAME, FORMAT_VERSION,
};

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Lowercase-normalized hex account address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String")]
pub struct Address(String);

impl Address {
    pub fn new(s: &str) -> Self {
        Address(s.trim().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `0x` followed by 40 hex digits.
    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 42
            && self.0.starts_with("0x")
            && self.0[2..].bytes().all(|b| b.is_ascii_hexdigit())
    }
}

impl From<String> for Address {
    fn from(s: String) -> Self {
        Address::new(&s)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Exact wei amount. Ether values exceed the 64-bit range, so amounts are
/// arbitrary-precision and serialized as decimal strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Wei(pub BigUint);

impl Wei {
    pub fn from_u128(v: u128) -> Self {
        Wei(BigUint::from(v))
    }

    /// Whole ether, at 1e18 wei per ether, as f64. Used only by feature
    /// extraction after exact accumulation.
    pub fn to_ether_f64(&self) -> f64 {
        biguint_to_f64(&self.0) / 1e18
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

pub(crate) fn biguint_to_f64(v: &BigUint) -> f64 {
    v.to_string().parse::<f64>().unwrap_or(f64::INFINITY)
}

impl Serialize for Wei {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Wei {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v = s
            .parse::<BigUint>()
            .map_err(|_| serde::de::Error::custom(format!("invalid wei amount: {s:?}")))?;
        Ok(Wei(v))
    }
}

/// A deployed contract as ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub address: Address,
    pub creator: Address,
    /// Raw deployed bytecode; empty when the creation failed.
    #[serde(with = "hex_bytes")]
    pub bytecode: Vec<u8>,
    pub creation_block: u64,
    pub creation_tx_hash: String,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s.trim_start_matches("0x")).map_err(serde::de::Error::custom)
    }
}

/// A transaction initiated by a user account.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalTransaction {
    pub hash: String,
    pub block_number: u64,
    pub timestamp: u64,
    pub from: Address,
    /// Empty for contract-creation transactions.
    pub to: Option<Address>,
    /// Set only for contract-creation transactions.
    pub contract_address: Option<Address>,
    pub value: Wei,
    pub gas: u64,
    pub gas_used: u64,
    pub is_error: bool,
}

impl NormalTransaction {
    pub fn is_creation(&self) -> bool {
        self.contract_address.is_some()
    }
}

/// A transfer initiated by a contract while executing a normal transaction.
/// Carries no timestamp or block ordering of its own.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InternalTransaction {
    /// Hash of the originating normal transaction.
    pub parent_hash: String,
    pub from: Address,
    pub to: Option<Address>,
    pub contract_address: Option<Address>,
    pub value: Wei,
    pub gas: u64,
    pub gas_used: u64,
    pub is_error: bool,
}

/// Compilation and source code metadata from the explorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub has_source_code: bool,
    pub source_line_count: u64,
    pub compiler_version_raw: String,
    pub compiler_minor: String,
    pub compiler_patch: String,
    pub compiler_runs: u64,
    pub library: Option<String>,
}

impl SourceInfo {
    /// All-sentinel record for contracts without verified source.
    pub fn absent() -> Self {
        SourceInfo {
            has_source_code: false,
            source_line_count: 0,
            compiler_version_raw: String::new(),
            compiler_minor: SENTINEL.to_string(),
            compiler_patch: SENTINEL.to_string(),
            compiler_runs: 0,
            library: None,
        }
    }
}

/// Sentinel token for absent categorical values.
pub const SENTINEL: &str = "absent";

/// Honeypot trapdoor technique, carried as a label value only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Technique {
    /// Balance Disorder
    BD,
    /// Inheritance Disorder
    ID,
    /// Skip Empty String Literal
    SESL,
    /// Type Deduction Overflow
    TDO,
    /// Uninitialised Struct
    US,
    /// Hidden State Update
    HSU,
    /// Hidden Transfer
    HT,
    /// Straw Man Contract
    SMC,
    /// Unexecuted Call
    UC,
    /// Map Key Encoding Trick
    MKET,
    /// Not a honeypot
    NONE,
}

impl Technique {
    pub const ALL_HONEYPOT: [Technique; 10] = [
        Technique::BD,
        Technique::ID,
        Technique::SESL,
        Technique::TDO,
        Technique::US,
        Technique::HSU,
        Technique::HT,
        Technique::SMC,
        Technique::UC,
        Technique::MKET,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::BD => "BD",
            Technique::ID => "ID",
            Technique::SESL => "SESL",
            Technique::TDO => "TDO",
            Technique::US => "US",
            Technique::HSU => "HSU",
            Technique::HT => "HT",
            Technique::SMC => "SMC",
            Technique::UC => "UC",
            Technique::MKET => "MKET",
            Technique::NONE => "NONE",
        }
    }

    pub fn parse(s: &str) -> Option<Technique> {
        let all = [
            Technique::BD,
            Technique::ID,
            Technique::SESL,
            Technique::TDO,
            Technique::US,
            Technique::HSU,
            Technique::HT,
            Technique::SMC,
            Technique::UC,
            Technique::MKET,
            Technique::NONE,
        ];
        all.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary honeypot label plus technique. `technique == NONE` iff not a
/// honeypot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoneypotLabel {
    pub is_honeypot: bool,
    pub technique: Technique,
}

impl HoneypotLabel {
    pub fn honeypot(technique: Technique) -> Self {
        assert!(technique != Technique::NONE, "honeypot label needs a technique");
        HoneypotLabel { is_honeypot: true, technique }
    }

    pub fn negative() -> Self {
        HoneypotLabel { is_honeypot: false, technique: Technique::NONE }
    }
}

/// Everything ingested for one contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractBundle {
    pub contract: Contract,
    pub source: SourceInfo,
    pub normals: Vec<NormalTransaction>,
    pub internals: Vec<InternalTransaction>,
    pub label: HoneypotLabel,
}

#[derive(Debug, Error)]
pub enum ChainDataError {
    #[error("conflicting seed labels for one bytecode group: {first} is {first_technique}, {second} is {second_technique}")]
    LabelConflict {
        first: Address,
        first_technique: Technique,
        second: Address,
        second_technique: Technique,
    },
}

/// Compiler version split into (major, minor, patch) tokens.
///
/// Splits on the first two dots; everything after the second dot, commit
/// suffix included, becomes the patch token. Total: any input that does not
/// yield three non-empty parts maps to sentinel tokens.
pub fn parse_compiler_version(raw: &str) -> (String, String, String) {
    let trimmed = raw.trim();
    let stripped = trimmed.strip_prefix('v').unwrap_or(trimmed);
    let mut parts = stripped.splitn(3, '.');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(major), Some(minor), Some(patch))
            if !major.is_empty() && !minor.is_empty() && !patch.is_empty() =>
        {
            (major.to_string(), minor.to_string(), patch.to_string())
        }
        _ => (SENTINEL.to_string(), SENTINEL.to_string(), SENTINEL.to_string()),
    }
}

/// SHA-256 digest of the raw bytecode bytes, used to group byte-identical
/// contracts for label propagation.
pub fn bytecode_hash(bytecode: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytecode);
    hasher.finalize().into()
}

/// Transfer each seed label to every contract sharing the seed's bytecode
/// hash; every other contract gets the negative label. Two seeds with the
/// same hash but different labels are a conflict.
pub fn propagate_labels(
    contracts: &[Contract],
    seed_labels: &HashMap<Address, HoneypotLabel>,
) -> Result<HashMap<Address, HoneypotLabel>, ChainDataError> {
    let hashes: HashMap<&Address, [u8; 32]> = contracts
        .iter()
        .map(|c| (&c.address, bytecode_hash(&c.bytecode)))
        .collect();

    let mut group_label: HashMap<[u8; 32], (&Address, HoneypotLabel)> = HashMap::new();
    for contract in contracts {
        let Some(label) = seed_labels.get(&contract.address) else {
            continue;
        };
        let hash = hashes[&contract.address];
        match group_label.get(&hash) {
            Some((seed_addr, seed_label)) if seed_label != label => {
                return Err(ChainDataError::LabelConflict {
                    first: (*seed_addr).clone(),
                    first_technique: seed_label.technique,
                    second: contract.address.clone(),
                    second_technique: label.technique,
                });
            }
            Some(_) => {}
            None => {
                group_label.insert(hash, (&contract.address, *label));
            }
        }
    }

    Ok(contracts
        .iter()
        .map(|c| {
            let label = group_label
                .get(&hashes[&c.address])
                .map(|(_, l)| *l)
                .unwrap_or_else(HoneypotLabel::negative);
            (c.address.clone(), label)
        })
        .collect())
}
