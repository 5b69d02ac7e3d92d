//! Deterministic synthetic corpus generator.
//!
//! Produces labeled [`ContractBundle`]s with planted behavioral archetypes
//! so the full pipeline can be exercised end to end without chain access.
//! Honeypot archetypes emit the characteristic lifecycle — creation, an
//! initial creator deposit, victim deposits the contract keeps, and a
//! creator withdrawal — with configurable noise rates; non-honeypot
//! archetypes cover high-volume token-like traffic, zero-value utility
//! calls, and pools that pay out to non-creators. Generation is
//! single-threaded and fully determined by the seed.

use crate::chain_data::{
    Address, Contract, ContractBundle, HoneypotLabel, InternalTransaction, NormalTransaction,
    SourceInfo, Technique, Wei,
};
use num_bigint::BigUint;
use num_traits::Zero;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How an archetype's transaction stream is shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Behavior {
    /// Creation → creator deposit → victim deposits → creator withdrawal.
    HoneypotLifecycle,
    /// Many zero-value calls from a pool of senders, occasional errors.
    TokenLike,
    /// Sparse zero-value calls from the creator and others.
    ZeroValueUtility,
    /// Deposits from others interleaved with payouts to third parties.
    Payout,
}

/// Parameters of one behavioral archetype. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Archetype {
    pub name: String,
    pub weight: f64,
    pub behavior: Behavior,
    /// Honeypot technique tag; required iff behavior is the lifecycle.
    pub technique: Option<String>,
    pub source_lines: [u64; 2],
    pub compiler_versions: Vec<String>,
    pub compiler_runs: [u64; 2],
    pub library: Option<String>,
    pub library_rate: f64,
    /// Victim-deposit count for honeypots, total call count otherwise.
    pub tx_count: [u64; 2],
    pub value_milli_ether: [u64; 2],
    pub gas: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthConfig {
    pub seed: u64,
    pub n_honeypots: usize,
    pub n_non_honeypots: usize,
    /// Fraction of honeypots missing the initial creator deposit.
    pub omit_creator_deposit_rate: f64,
    /// Fraction of honeypots that attracted victim deposits.
    pub victim_deposit_rate: f64,
    /// Opt-in anomaly: honeypots that paid ether back to a non-creator.
    pub failed_honeypot_rate: f64,
    /// Bytecode-collision pairs planted among the non-honeypots.
    pub shared_bytecode_groups: usize,
    pub honeypot_archetypes: Vec<Archetype>,
    pub non_honeypot_archetypes: Vec<Archetype>,
}

const DEFAULT_CONFIG: &str = include_str!("synth/default_config.json");

impl SynthConfig {
    /// The built-in archetype profile (300 honeypots, 5,000 non-honeypots,
    /// seed 7).
    pub fn default_profile() -> SynthConfig {
        serde_json::from_str(DEFAULT_CONFIG).expect("embedded default config parses")
    }

    pub fn from_json(json: &str) -> Result<SynthConfig, SynthError> {
        let config: SynthConfig = serde_json::from_str(json).map_err(SynthError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    /// Every violated field is reported, not just the first.
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut problems = Vec::new();
        for (field, rate) in [
            ("omitCreatorDepositRate", self.omit_creator_deposit_rate),
            ("victimDepositRate", self.victim_deposit_rate),
            ("failedHoneypotRate", self.failed_honeypot_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                problems.push(format!("{field} must be in [0, 1], got {rate}"));
            }
        }
        for (group, archetypes, want_technique) in [
            ("honeypotArchetypes", &self.honeypot_archetypes, true),
            ("nonHoneypotArchetypes", &self.non_honeypot_archetypes, false),
        ] {
            if archetypes.is_empty() {
                problems.push(format!("{group} must not be empty"));
                continue;
            }
            let total: f64 = archetypes.iter().map(|a| a.weight).sum();
            if (total - 1.0).abs() > 1e-6 {
                problems.push(format!("{group} weights must sum to 1, got {total}"));
            }
            for a in archetypes {
                if a.weight < 0.0 {
                    problems.push(format!("{group}/{}: negative weight {}", a.name, a.weight));
                }
                if !(0.0..=1.0).contains(&a.library_rate) {
                    problems
                        .push(format!("{group}/{}: libraryRate out of [0, 1]", a.name));
                }
                for (field, range) in [
                    ("sourceLines", a.source_lines),
                    ("compilerRuns", a.compiler_runs),
                    ("txCount", a.tx_count),
                    ("valueMilliEther", a.value_milli_ether),
                    ("gas", a.gas),
                ] {
                    if range[0] > range[1] {
                        problems.push(format!(
                            "{group}/{}: {field} range [{}, {}] is inverted",
                            a.name, range[0], range[1]
                        ));
                    }
                }
                if a.compiler_versions.is_empty() {
                    problems.push(format!("{group}/{}: compilerVersions empty", a.name));
                }
                let is_lifecycle = a.behavior == Behavior::HoneypotLifecycle;
                if is_lifecycle != want_technique {
                    problems.push(format!(
                        "{group}/{}: behavior {:?} does not belong in this group",
                        a.name, a.behavior
                    ));
                }
                match &a.technique {
                    Some(t) if want_technique => {
                        match Technique::parse(t) {
                            Some(Technique::NONE) | None => problems.push(format!(
                                "{group}/{}: unknown technique {t:?}",
                                a.name
                            )),
                            Some(_) => {}
                        }
                    }
                    None if want_technique => {
                        problems.push(format!("{group}/{}: technique required", a.name));
                    }
                    Some(t) => problems.push(format!(
                        "{group}/{}: technique {t:?} set on a non-honeypot archetype",
                        a.name
                    )),
                    None => {}
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidConfig(problems))
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::default_profile()
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("config file does not parse: {0}")]
    Parse(#[source] serde_json::Error),
}

const WEI_PER_MILLI_ETHER: u128 = 1_000_000_000_000_000;

fn rand_address(rng: &mut ChaCha8Rng) -> Address {
    let hi: u32 = rng.random();
    let lo: u128 = rng.random();
    Address::new(&format!("0x{hi:08x}{lo:032x}"))
}

fn rand_hash(rng: &mut ChaCha8Rng) -> String {
    let a: u128 = rng.random();
    let b: u128 = rng.random();
    format!("0x{a:032x}{b:032x}")
}

fn sample_range(rng: &mut ChaCha8Rng, range: [u64; 2]) -> u64 {
    rng.random_range(range[0]..=range[1])
}

fn sample_value(rng: &mut ChaCha8Rng, archetype: &Archetype) -> Wei {
    let milli = sample_range(rng, archetype.value_milli_ether);
    Wei::from_u128(milli as u128 * WEI_PER_MILLI_ETHER)
}

fn sample_source(rng: &mut ChaCha8Rng, archetype: &Archetype) -> SourceInfo {
    let raw = archetype.compiler_versions
        [rng.random_range(0..archetype.compiler_versions.len())]
    .clone();
    let (_major, minor, patch) = crate::chain_data::parse_compiler_version(&raw);
    let library = match &archetype.library {
        Some(lib) if rng.random_bool(archetype.library_rate) => Some(lib.clone()),
        _ => None,
    };
    SourceInfo {
        has_source_code: true,
        source_line_count: sample_range(rng, archetype.source_lines),
        compiler_version_raw: raw,
        compiler_minor: minor,
        compiler_patch: patch,
        compiler_runs: sample_range(rng, archetype.compiler_runs),
        library,
    }
}

/// Monotone block/timestamp sequence for one contract's transactions.
struct Clock {
    block: u64,
}

impl Clock {
    fn tick(&mut self, rng: &mut ChaCha8Rng) -> (u64, u64) {
        self.block += rng.random_range(1..=400);
        (self.block, self.block * 13)
    }
}

struct TxBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    clock: Clock,
    contract: Address,
    gas_range: [u64; 2],
    normals: Vec<NormalTransaction>,
    internals: Vec<InternalTransaction>,
}

impl TxBuilder<'_> {
    fn call(&mut self, from: &Address, value: Wei, is_error: bool) -> String {
        let (block_number, timestamp) = self.clock.tick(self.rng);
        let hash = rand_hash(self.rng);
        let gas = sample_range(self.rng, self.gas_range);
        let gas_used = gas * self.rng.random_range(60..=95) / 100;
        self.normals.push(NormalTransaction {
            hash: hash.clone(),
            block_number,
            timestamp,
            from: from.clone(),
            to: Some(self.contract.clone()),
            contract_address: None,
            value,
            gas,
            gas_used,
            is_error,
        });
        hash
    }

    fn internal(&mut self, parent_hash: &str, to: &Address, value: Wei) {
        let gas = sample_range(self.rng, [2300, 30000]);
        self.internals.push(InternalTransaction {
            parent_hash: parent_hash.to_string(),
            from: self.contract.clone(),
            to: Some(to.clone()),
            contract_address: None,
            value,
            gas,
            gas_used: gas,
            is_error: false,
        });
    }
}

fn generate_bundle(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    archetype: &Archetype,
    bytecode: Vec<u8>,
    label: HoneypotLabel,
) -> ContractBundle {
    let creator = rand_address(rng);
    let contract = rand_address(rng);
    let creation_block = rng.random_range(1_000_000..4_000_000);
    let creation_hash = rand_hash(rng);

    let mut normals = vec![NormalTransaction {
        hash: creation_hash.clone(),
        block_number: creation_block,
        timestamp: creation_block * 13,
        from: creator.clone(),
        to: None,
        contract_address: Some(contract.clone()),
        value: Wei::default(),
        gas: sample_range(rng, [400_000, 2_000_000]),
        gas_used: sample_range(rng, [300_000, 400_000]),
        is_error: false,
    }];
    let mut builder = TxBuilder {
        rng,
        clock: Clock { block: creation_block },
        contract: contract.clone(),
        gas_range: archetype.gas,
        normals: Vec::new(),
        internals: Vec::new(),
    };

    match archetype.behavior {
        Behavior::HoneypotLifecycle => {
            let mut balance = BigUint::zero();
            if !builder.rng.random_bool(config.omit_creator_deposit_rate) {
                let deposit = sample_value(builder.rng, archetype);
                balance += &deposit.0;
                builder.call(&creator, deposit, false);
            }
            if builder.rng.random_bool(config.victim_deposit_rate) {
                let victims = sample_range(builder.rng, archetype.tx_count);
                for _ in 0..victims {
                    let victim = rand_address(builder.rng);
                    if builder.rng.random_bool(0.25) {
                        // failed attempt before the deposit lands
                        let probe = sample_value(builder.rng, archetype);
                        builder.call(&victim, probe, true);
                    }
                    let deposit = sample_value(builder.rng, archetype);
                    balance += &deposit.0;
                    builder.call(&victim, deposit, false);
                }
            }
            if !balance.is_zero() {
                let hash = builder.call(&creator, Wei::default(), false);
                builder.internal(&hash, &creator, Wei(balance));
            }
            if builder.rng.random_bool(config.failed_honeypot_rate) {
                // the anomaly: ether flowing back to a non-creator
                let escapee = rand_address(builder.rng);
                let hash = builder.call(&escapee, Wei::default(), false);
                let refund = sample_value(builder.rng, archetype);
                builder.internal(&hash, &escapee, refund);
            }
        }
        Behavior::TokenLike => {
            let pool: Vec<Address> = (0..builder.rng.random_range(5..=15))
                .map(|_| rand_address(builder.rng))
                .collect();
            let calls = sample_range(builder.rng, archetype.tx_count);
            for _ in 0..calls {
                let from = pool[builder.rng.random_range(0..pool.len())].clone();
                let is_error = builder.rng.random_bool(0.05);
                builder.call(&from, Wei::default(), is_error);
            }
        }
        Behavior::ZeroValueUtility => {
            let calls = sample_range(builder.rng, archetype.tx_count);
            for _ in 0..calls {
                let from = if builder.rng.random_bool(0.3) {
                    creator.clone()
                } else {
                    rand_address(builder.rng)
                };
                builder.call(&from, Wei::default(), false);
            }
        }
        Behavior::Payout => {
            let calls = sample_range(builder.rng, archetype.tx_count);
            for _ in 0..calls {
                let from = rand_address(builder.rng);
                if builder.rng.random_bool(0.5) {
                    let deposit = sample_value(builder.rng, archetype);
                    builder.call(&from, deposit, false);
                } else {
                    // zero-value trigger paying a third party
                    let hash = builder.call(&from, Wei::default(), false);
                    let beneficiary = rand_address(builder.rng);
                    let payout = sample_value(builder.rng, archetype);
                    builder.internal(&hash, &beneficiary, payout);
                }
            }
        }
    }

    normals.extend(builder.normals);
    let internals = builder.internals;
    let source = sample_source(rng, archetype);

    ContractBundle {
        contract: Contract {
            address: contract,
            creator,
            bytecode,
            creation_block,
            creation_tx_hash: creation_hash,
        },
        source,
        normals,
        internals,
        label,
    }
}

/// Generate the full corpus: honeypots first, then non-honeypots, each
/// drawn from its archetype mix. Byte-identical output for identical
/// configs.
pub fn generate(config: &SynthConfig) -> Result<Vec<ContractBundle>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let fresh_bytecode = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(96..=512);
        let mut bytes = vec![0u8; len];
        rng.fill(&mut bytes[..]);
        bytes
    };
    let shared_blobs: Vec<Vec<u8>> =
        (0..config.shared_bytecode_groups).map(|_| fresh_bytecode(&mut rng)).collect();

    let mut bundles = Vec::with_capacity(config.n_honeypots + config.n_non_honeypots);

    if config.n_honeypots > 0 {
        let weights: Vec<f64> = config.honeypot_archetypes.iter().map(|a| a.weight).collect();
        let mix = WeightedIndex::new(&weights)
            .map_err(|e| SynthError::InvalidConfig(vec![e.to_string()]))?;
        for _ in 0..config.n_honeypots {
            let archetype = &config.honeypot_archetypes[mix.sample(&mut rng)];
            let technique = Technique::parse(archetype.technique.as_deref().unwrap_or(""))
                .expect("validated technique");
            let bytecode = fresh_bytecode(&mut rng);
            bundles.push(generate_bundle(
                &mut rng,
                config,
                archetype,
                bytecode,
                HoneypotLabel::honeypot(technique),
            ));
        }
    }

    if config.n_non_honeypots > 0 {
        let weights: Vec<f64> =
            config.non_honeypot_archetypes.iter().map(|a| a.weight).collect();
        let mix = WeightedIndex::new(&weights)
            .map_err(|e| SynthError::InvalidConfig(vec![e.to_string()]))?;
        for i in 0..config.n_non_honeypots {
            let archetype = &config.non_honeypot_archetypes[mix.sample(&mut rng)];
            // plant bytecode-collision pairs at the front of the pool
            let bytecode = if i < config.shared_bytecode_groups * 2 {
                shared_blobs[i / 2].clone()
            } else {
                fresh_bytecode(&mut rng)
            };
            bundles.push(generate_bundle(
                &mut rng,
                config,
                archetype,
                bytecode,
                HoneypotLabel::negative(),
            ));
        }
    }

    Ok(bundles)
}
