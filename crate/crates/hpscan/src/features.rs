//! Feature extraction, matrix assembly and preprocessing.
//!
//! Three column families feed the classifier: source-code metadata,
//! transaction aggregates, and the 244 fund-flow case frequencies.
//! Preprocessing reproduces the published pipeline: contracts without
//! bytecode or source are filtered out, the internal-transaction aggregate
//! columns are replaced by a single `hasInternalTransactions` flag,
//! missing statistics are zero-filled, fund-flow columns that never fire
//! on the fit rows are dropped, and unbounded numeric columns are min-max
//! scaled into [0, 1] using the fit rows only.

use crate::chain_data::{Address, Contract, ContractBundle, HoneypotLabel, SourceInfo, SENTINEL};
use crate::chain_data::{InternalTransaction, NormalTransaction};
use crate::fundflow::{classify_contract_events, frequency_vector, FrequencyVector, CASE_COUNT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnFamily {
    SourceCode,
    Transaction,
    FundFlow,
}

/// Which feature families participate in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSet {
    All,
    OnlyTransactions,
    OnlySourceCode,
    OnlyFundFlow,
}

impl FeatureSet {
    pub fn includes(&self, family: ColumnFamily) -> bool {
        match self {
            FeatureSet::All => true,
            FeatureSet::OnlyTransactions => family == ColumnFamily::Transaction,
            FeatureSet::OnlySourceCode => family == ColumnFamily::SourceCode,
            FeatureSet::OnlyFundFlow => family == ColumnFamily::FundFlow,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FeatureSet::All => "All",
            FeatureSet::OnlyTransactions => "OnlyTransactions",
            FeatureSet::OnlySourceCode => "OnlySourceCode",
            FeatureSet::OnlyFundFlow => "OnlyFundFlow",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureSet> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Some(FeatureSet::All),
            "transactions" | "onlytransactions" => Some(FeatureSet::OnlyTransactions),
            "source" | "sourcecode" | "onlysourcecode" => Some(FeatureSet::OnlySourceCode),
            "fundflow" | "onlyfundflow" => Some(FeatureSet::OnlyFundFlow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub family: ColumnFamily,
    /// Ratios, frequencies and 0/1 flags are already in [0, 1] and are not
    /// min-max scaled.
    pub bounded: bool,
}

/// Ordered value lists for the three categorical features. Indices are
/// dense from 0 and deterministic: values are sorted lexicographically at
/// fit time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingDictionary {
    pub format_version: u32,
    pub library: Vec<String>,
    pub compiler_minor: Vec<String>,
    pub compiler_patch: Vec<String>,
}

pub const DICTIONARY_FORMAT_VERSION: u32 = 1;

impl EncodingDictionary {
    /// Collect the categorical vocabularies from contracts with verified
    /// source. Sentinel/absent values never enter the dictionary; they
    /// encode as all-zero blocks.
    pub fn fit(sources: &[&SourceInfo]) -> Self {
        let mut library = BTreeSet::new();
        let mut minor = BTreeSet::new();
        let mut patch = BTreeSet::new();
        for src in sources {
            if !src.has_source_code {
                continue;
            }
            if let Some(lib) = &src.library {
                library.insert(lib.clone());
            }
            if src.compiler_minor != SENTINEL {
                minor.insert(src.compiler_minor.clone());
            }
            if src.compiler_patch != SENTINEL {
                patch.insert(src.compiler_patch.clone());
            }
        }
        EncodingDictionary {
            format_version: DICTIONARY_FORMAT_VERSION,
            library: library.into_iter().collect(),
            compiler_minor: minor.into_iter().collect(),
            compiler_patch: patch.into_iter().collect(),
        }
    }

    pub fn fit_from_bundles(bundles: &[ContractBundle]) -> Self {
        Self::fit(&bundles.iter().map(|b| &b.source).collect::<Vec<_>>())
    }
}

fn one_hot(values: &[String], value: Option<&str>) -> Vec<f64> {
    let mut block = vec![0.0; values.len()];
    if let Some(v) = value {
        // out-of-vocabulary values stay all-zero
        if let Ok(idx) = values.binary_search_by(|probe| probe.as_str().cmp(v)) {
            block[idx] = 1.0;
        }
    }
    block
}

/// Source-code feature block for one contract.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceFeatureBlock {
    pub has_bytecode: f64,
    pub has_source_code: f64,
    pub num_source_code_lines: f64,
    pub compiler_runs: f64,
    pub library_onehot: Vec<f64>,
    pub minor_onehot: Vec<f64>,
    pub patch_onehot: Vec<f64>,
}

/// The compiler major version is constant over the studied corpus and is
/// dropped; minor and patch are one-hot encoded against the dictionary.
pub fn extract_source_features(
    contract: &Contract,
    src: &SourceInfo,
    dict: &EncodingDictionary,
) -> SourceFeatureBlock {
    fn categorical(token: &str) -> Option<&str> {
        if token == SENTINEL {
            None
        } else {
            Some(token)
        }
    }
    SourceFeatureBlock {
        has_bytecode: if contract.bytecode.is_empty() { 0.0 } else { 1.0 },
        has_source_code: if src.has_source_code { 1.0 } else { 0.0 },
        num_source_code_lines: src.source_line_count as f64,
        compiler_runs: src.compiler_runs as f64,
        library_onehot: one_hot(&dict.library, src.library.as_deref()),
        minor_onehot: one_hot(&dict.compiler_minor, categorical(&src.compiler_minor)),
        patch_onehot: one_hot(&dict.compiler_patch, categorical(&src.compiler_patch)),
    }
}

/// Transaction aggregate block. `None` marks a statistic that is undefined
/// for the contract (no error-free values, fewer than two transactions, no
/// internal transactions); preprocessing resolves these to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionFeatureBlock {
    pub normal_count: f64,
    pub normal_other_sender_ratio: f64,
    pub value_mean: Option<f64>,
    pub value_std: Option<f64>,
    pub gas_mean: f64,
    pub gas_std: f64,
    pub gas_used_mean: f64,
    pub gas_used_std: f64,
    pub block_span: f64,
    pub time_span: f64,
    pub block_delta_mean: Option<f64>,
    pub block_delta_std: Option<f64>,
    pub time_delta_mean: Option<f64>,
    pub time_delta_std: Option<f64>,
    pub internal_count: f64,
    pub internal_other_sender_ratio: Option<f64>,
    pub internal_creation_count: f64,
    pub internal_to_other_ratio: Option<f64>,
    pub has_internal_transactions: f64,
}

fn population_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Unique-over-total ratio among non-creator parties; zero when the
/// creator is the only party.
pub fn other_sender_ratio(parties: &[&Address], creator: &Address) -> f64 {
    let others: Vec<&&Address> = parties.iter().filter(|p| **p != creator).collect();
    if others.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&str> = others.iter().map(|p| p.as_str()).collect();
    unique.len() as f64 / others.len() as f64
}

/// Aggregate transaction statistics for one contract.
///
/// Value statistics cover only error-free transactions (errored values are
/// rolled back); gas statistics cover everything (the gas is spent either
/// way). Deltas are over consecutive normal transactions sorted by
/// `(blockNumber, timestamp, hash)`. Standard deviations are population
/// standard deviations, so a single sample yields 0.
pub fn extract_transaction_features(
    normals: &[NormalTransaction],
    internals: &[InternalTransaction],
    creator: &Address,
) -> TransactionFeatureBlock {
    assert!(!normals.is_empty(), "a contract always has its creation transaction");

    let mut sorted: Vec<&NormalTransaction> = normals.iter().collect();
    sorted.sort_by(|a, b| {
        (a.block_number, a.timestamp, &a.hash).cmp(&(b.block_number, b.timestamp, &b.hash))
    });

    let error_free_values: Vec<f64> =
        sorted.iter().filter(|t| !t.is_error).map(|t| t.value.to_ether_f64()).collect();
    let (value_mean, value_std) = if error_free_values.is_empty() {
        (None, None)
    } else {
        let (m, s) = population_mean_std(&error_free_values);
        (Some(m), Some(s))
    };

    let gas: Vec<f64> = sorted.iter().map(|t| t.gas as f64).collect();
    let gas_used: Vec<f64> = sorted.iter().map(|t| t.gas_used as f64).collect();
    let (gas_mean, gas_std) = population_mean_std(&gas);
    let (gas_used_mean, gas_used_std) = population_mean_std(&gas_used);

    let first = sorted.first().unwrap();
    let last = sorted.last().unwrap();
    let block_span = (last.block_number - first.block_number) as f64;
    let time_span = (last.timestamp - first.timestamp) as f64;

    let deltas = |of: &dyn Fn(&NormalTransaction) -> u64| -> Option<(f64, f64)> {
        if sorted.len() < 2 {
            return None;
        }
        let diffs: Vec<f64> =
            sorted.windows(2).map(|w| of(w[1]) as f64 - of(w[0]) as f64).collect();
        Some(population_mean_std(&diffs))
    };
    let block_deltas = deltas(&|t| t.block_number);
    let time_deltas = deltas(&|t| t.timestamp);

    let senders: Vec<&Address> = sorted.iter().map(|t| &t.from).collect();
    let normal_other_sender_ratio = other_sender_ratio(&senders, creator);

    let has_internal = !internals.is_empty();
    let internal_senders: Vec<&Address> = internals.iter().map(|t| &t.from).collect();
    let internal_receivers: Vec<&Address> = internals
        .iter()
        .filter_map(|t| t.to.as_ref().or(t.contract_address.as_ref()))
        .collect();

    TransactionFeatureBlock {
        normal_count: sorted.len() as f64,
        normal_other_sender_ratio,
        value_mean,
        value_std,
        gas_mean,
        gas_std,
        gas_used_mean,
        gas_used_std,
        block_span,
        time_span,
        block_delta_mean: block_deltas.map(|(m, _)| m),
        block_delta_std: block_deltas.map(|(_, s)| s),
        time_delta_mean: time_deltas.map(|(m, _)| m),
        time_delta_std: time_deltas.map(|(_, s)| s),
        internal_count: internals.len() as f64,
        internal_other_sender_ratio: has_internal
            .then(|| other_sender_ratio(&internal_senders, creator)),
        internal_creation_count: internals.iter().filter(|t| t.contract_address.is_some()).count()
            as f64,
        internal_to_other_ratio: has_internal
            .then(|| other_sender_ratio(&internal_receivers, creator)),
        has_internal_transactions: if has_internal { 1.0 } else { 0.0 },
    }
}

/// All feature blocks for one contract, label carried alongside.
#[derive(Debug, Clone)]
pub struct FeatureRow {
    pub address: Address,
    pub source: SourceFeatureBlock,
    pub transaction: TransactionFeatureBlock,
    pub fund_flow: FrequencyVector,
    pub label: HoneypotLabel,
}

/// Dense feature matrix. Cells are `Option<f64>`: `None` is the explicit
/// missing-value sentinel until preprocessing resolves it. Labels ride
/// alongside and are never feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub addresses: Vec<Address>,
    pub labels: Vec<HoneypotLabel>,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("dictionary mismatch: row {row} has one-hot widths ({lib}, {minor}, {patch}), expected ({exp_lib}, {exp_minor}, {exp_patch})")]
    DictionaryMismatch {
        row: usize,
        lib: usize,
        minor: usize,
        patch: usize,
        exp_lib: usize,
        exp_minor: usize,
        exp_patch: usize,
    },
    #[error("cannot preprocess with an empty fit set")]
    EmptyFit,
    #[error("fit row {0} is out of range")]
    FitRowOutOfRange(usize),
    #[error("csv error: {0}")]
    Csv(String),
}

pub const INTERNAL_AGGREGATE_COLUMNS: [&str; 4] = [
    "internalTransactionCount",
    "internalTransactionOtherSenderRatio",
    "internalTransactionCreationCount",
    "internalTransactionToOtherRatio",
];

fn source_columns(dict_lib: usize, dict_minor: usize, dict_patch: usize) -> Vec<Column> {
    let mut cols = vec![
        Column { name: "hasByteCode".into(), family: ColumnFamily::SourceCode, bounded: true },
        Column { name: "hasSourceCode".into(), family: ColumnFamily::SourceCode, bounded: true },
        Column {
            name: "numSourceCodeLines".into(),
            family: ColumnFamily::SourceCode,
            bounded: false,
        },
        Column { name: "compilerRuns".into(), family: ColumnFamily::SourceCode, bounded: false },
    ];
    for i in 0..dict_lib {
        cols.push(Column {
            name: format!("library{i}"),
            family: ColumnFamily::SourceCode,
            bounded: true,
        });
    }
    for i in 0..dict_minor {
        cols.push(Column {
            name: format!("compilerMinorVersion{i}"),
            family: ColumnFamily::SourceCode,
            bounded: true,
        });
    }
    for i in 0..dict_patch {
        cols.push(Column {
            name: format!("compilerPatchVersion{i}"),
            family: ColumnFamily::SourceCode,
            bounded: true,
        });
    }
    cols
}

fn transaction_columns() -> Vec<Column> {
    let unbounded = [
        "normalTransactionCount",
        "normalTransactionValueMean",
        "normalTransactionValueStd",
        "normalTransactionGasMean",
        "normalTransactionGasStd",
        "normalTransactionGasUsedMean",
        "normalTransactionGasUsedStd",
        "normalTransactionBlockSpan",
        "normalTransactionTimeSpan",
        "normalTransactionBlockDeltaMean",
        "normalTransactionBlockDeltaStd",
        "normalTransactionTimeDeltaMean",
        "normalTransactionTimeDeltaStd",
    ];
    let mut cols = vec![Column {
        name: "normalTransactionCount".into(),
        family: ColumnFamily::Transaction,
        bounded: false,
    }];
    cols.push(Column {
        name: "normalTransactionOtherSenderRatio".into(),
        family: ColumnFamily::Transaction,
        bounded: true,
    });
    for name in &unbounded[1..] {
        cols.push(Column {
            name: (*name).into(),
            family: ColumnFamily::Transaction,
            bounded: false,
        });
    }
    cols.push(Column {
        name: "internalTransactionCount".into(),
        family: ColumnFamily::Transaction,
        bounded: false,
    });
    cols.push(Column {
        name: "internalTransactionOtherSenderRatio".into(),
        family: ColumnFamily::Transaction,
        bounded: true,
    });
    cols.push(Column {
        name: "internalTransactionCreationCount".into(),
        family: ColumnFamily::Transaction,
        bounded: false,
    });
    cols.push(Column {
        name: "internalTransactionToOtherRatio".into(),
        family: ColumnFamily::Transaction,
        bounded: true,
    });
    cols.push(Column {
        name: "hasInternalTransactions".into(),
        family: ColumnFamily::Transaction,
        bounded: true,
    });
    cols
}

fn fundflow_columns() -> Vec<Column> {
    (0..CASE_COUNT)
        .map(|i| Column {
            name: format!("fundFlowCase{i}"),
            family: ColumnFamily::FundFlow,
            bounded: true,
        })
        .collect()
}

/// Assemble rows into a matrix with the frozen column order: source block,
/// transaction block, `fundFlowCase0..243`.
pub fn assemble_matrix(rows: Vec<FeatureRow>) -> Result<FeatureMatrix, FeatureError> {
    let (lib, minor, patch) = rows
        .first()
        .map(|r| {
            (
                r.source.library_onehot.len(),
                r.source.minor_onehot.len(),
                r.source.patch_onehot.len(),
            )
        })
        .unwrap_or((0, 0, 0));

    let mut columns = source_columns(lib, minor, patch);
    columns.extend(transaction_columns());
    columns.extend(fundflow_columns());

    let mut addresses = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len());

    for (i, row) in rows.into_iter().enumerate() {
        let s = &row.source;
        if s.library_onehot.len() != lib
            || s.minor_onehot.len() != minor
            || s.patch_onehot.len() != patch
        {
            return Err(FeatureError::DictionaryMismatch {
                row: i,
                lib: s.library_onehot.len(),
                minor: s.minor_onehot.len(),
                patch: s.patch_onehot.len(),
                exp_lib: lib,
                exp_minor: minor,
                exp_patch: patch,
            });
        }
        let mut cells: Vec<Option<f64>> = Vec::with_capacity(columns.len());
        cells.push(Some(s.has_bytecode));
        cells.push(Some(s.has_source_code));
        cells.push(Some(s.num_source_code_lines));
        cells.push(Some(s.compiler_runs));
        cells.extend(s.library_onehot.iter().map(|v| Some(*v)));
        cells.extend(s.minor_onehot.iter().map(|v| Some(*v)));
        cells.extend(s.patch_onehot.iter().map(|v| Some(*v)));

        let t = &row.transaction;
        cells.push(Some(t.normal_count));
        cells.push(Some(t.normal_other_sender_ratio));
        cells.push(t.value_mean);
        cells.push(t.value_std);
        cells.push(Some(t.gas_mean));
        cells.push(Some(t.gas_std));
        cells.push(Some(t.gas_used_mean));
        cells.push(Some(t.gas_used_std));
        cells.push(Some(t.block_span));
        cells.push(Some(t.time_span));
        cells.push(t.block_delta_mean);
        cells.push(t.block_delta_std);
        cells.push(t.time_delta_mean);
        cells.push(t.time_delta_std);
        cells.push(Some(t.internal_count));
        cells.push(t.internal_other_sender_ratio);
        cells.push(Some(t.internal_creation_count));
        cells.push(t.internal_to_other_ratio);
        cells.push(Some(t.has_internal_transactions));

        cells.extend(row.fund_flow.freq.iter().map(|v| Some(*v)));

        debug_assert_eq!(cells.len(), columns.len());
        data.push(cells);
        addresses.push(row.address);
        labels.push(row.label);
    }

    Ok(FeatureMatrix { columns, rows: data, addresses, labels })
}

/// Run the whole extraction pipeline over ingested bundles.
pub fn featurize_bundles(
    bundles: &[ContractBundle],
    dict: &EncodingDictionary,
) -> Result<FeatureMatrix, FeatureError> {
    let rows: Vec<FeatureRow> = bundles
        .par_iter()
        .map(|b| {
            let events = classify_contract_events(
                &b.normals,
                &b.internals,
                &b.contract.creator,
                &b.contract.address,
            );
            let fund_flow = frequency_vector(&events)
                .expect("every ingested contract has at least its creation event");
            FeatureRow {
                address: b.contract.address.clone(),
                source: extract_source_features(&b.contract, &b.source, dict),
                transaction: extract_transaction_features(
                    &b.normals,
                    &b.internals,
                    &b.contract.creator,
                ),
                fund_flow,
                label: b.label,
            }
        })
        .collect();
    assemble_matrix(rows)
}

/// Per-column min-max parameters for the unbounded numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub format_version: u32,
    pub columns: Vec<ScalerColumn>,
}

pub const SCALER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerColumn {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ScalerColumn {
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            // constant column convention
            0.0
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        if self.max > self.min {
            v * (self.max - self.min) + self.min
        } else {
            self.min
        }
    }
}

/// What preprocessing did, for auditability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub dropped_internal_aggregates: Vec<String>,
    pub dropped_dead_fundflow: Vec<String>,
    pub live_fundflow_count: usize,
    /// Columns whose fit-set variance is below 1e-12; reported, not dropped.
    pub near_zero_variance: Vec<String>,
    /// Scaling is fitted on the fit rows only (train folds during CV),
    /// which differs from scaling the full matrix before splitting.
    pub scaler_fit_rows: usize,
}

/// Fully numeric matrix after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedMatrix {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
    pub addresses: Vec<Address>,
    pub labels: Vec<HoneypotLabel>,
    /// Index of each kept row in the input matrix.
    pub origin: Vec<usize>,
}

impl ProcessedMatrix {
    /// Column-subset view for a feature-set experiment.
    pub fn select(&self, set: FeatureSet) -> ProcessedMatrix {
        let keep: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| set.includes(c.family))
            .map(|(i, _)| i)
            .collect();
        ProcessedMatrix {
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i]).collect())
                .collect(),
            addresses: self.addresses.clone(),
            labels: self.labels.clone(),
            origin: self.origin.clone(),
        }
    }

    pub fn label_vec(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_honeypot).collect()
    }
}

/// Apply the published preprocessing, fitting all data-dependent pieces
/// (dead-column detection, scaler ranges) on `fit_on` rows only.
///
/// `fit_on` holds row indices of the *input* matrix; fit rows that are
/// filtered out by the bytecode/source rule are ignored for fitting.
pub fn preprocess(
    matrix: &FeatureMatrix,
    fit_on: &[usize],
) -> Result<(ProcessedMatrix, ScalerParams, ColumnReport), FeatureError> {
    if fit_on.is_empty() {
        return Err(FeatureError::EmptyFit);
    }
    for &i in fit_on {
        if i >= matrix.rows.len() {
            return Err(FeatureError::FitRowOutOfRange(i));
        }
    }

    let col_idx = |name: &str| matrix.columns.iter().position(|c| c.name == name);
    let has_bytecode = col_idx("hasByteCode");
    let has_source = col_idx("hasSourceCode");

    // (1) row filter: executable, source-verified contracts only
    let keep_row = |row: &Vec<Option<f64>>| {
        let nonzero = |idx: Option<usize>| {
            idx.map(|i| row[i].unwrap_or(0.0) != 0.0).unwrap_or(true)
        };
        nonzero(has_bytecode) && nonzero(has_source)
    };
    let kept: Vec<usize> =
        (0..matrix.rows.len()).filter(|&i| keep_row(&matrix.rows[i])).collect();
    let fit_kept: Vec<usize> =
        fit_on.iter().copied().filter(|&i| keep_row(&matrix.rows[i])).collect();
    if fit_kept.is_empty() {
        return Err(FeatureError::EmptyFit);
    }

    // (2) drop internal aggregates, (4) drop dead fund-flow columns
    let mut dropped_internal = Vec::new();
    let mut dropped_dead = Vec::new();
    let mut keep_cols: Vec<usize> = Vec::new();
    for (ci, col) in matrix.columns.iter().enumerate() {
        if INTERNAL_AGGREGATE_COLUMNS.contains(&col.name.as_str()) {
            dropped_internal.push(col.name.clone());
            continue;
        }
        if col.family == ColumnFamily::FundFlow {
            let alive = fit_kept.iter().any(|&ri| matrix.rows[ri][ci].unwrap_or(0.0) != 0.0);
            if !alive {
                dropped_dead.push(col.name.clone());
                continue;
            }
        }
        keep_cols.push(ci);
    }

    let columns: Vec<Column> = keep_cols.iter().map(|&ci| matrix.columns[ci].clone()).collect();

    // (3) zero-fill into a dense matrix
    let mut rows: Vec<Vec<f64>> = kept
        .iter()
        .map(|&ri| keep_cols.iter().map(|&ci| matrix.rows[ri][ci].unwrap_or(0.0)).collect())
        .collect();

    let kept_pos: std::collections::HashMap<usize, usize> =
        kept.iter().enumerate().map(|(pos, &ri)| (ri, pos)).collect();
    let fit_pos: Vec<usize> = fit_kept.iter().map(|&ri| kept_pos[&ri]).collect();

    // (5) near-zero-variance report
    let mut near_zero = Vec::new();
    for (cj, col) in columns.iter().enumerate() {
        let vals: Vec<f64> = fit_pos.iter().map(|&p| rows[p][cj]).collect();
        let (_, std) = population_mean_std(&vals);
        if std * std < 1e-12 {
            near_zero.push(col.name.clone());
        }
    }

    // (6) min-max scale unbounded columns on the fit rows
    let mut scaler_cols = Vec::new();
    for (cj, col) in columns.iter().enumerate() {
        if col.bounded {
            continue;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &p in &fit_pos {
            min = min.min(rows[p][cj]);
            max = max.max(rows[p][cj]);
        }
        let sc = ScalerColumn { name: col.name.clone(), min, max };
        for row in &mut rows {
            row[cj] = sc.scale(row[cj]);
        }
        scaler_cols.push(sc);
    }

    let live_fundflow =
        columns.iter().filter(|c| c.family == ColumnFamily::FundFlow).count();
    let report = ColumnReport {
        rows_in: matrix.rows.len(),
        rows_kept: kept.len(),
        dropped_internal_aggregates: dropped_internal,
        dropped_dead_fundflow: dropped_dead,
        live_fundflow_count: live_fundflow,
        near_zero_variance: near_zero,
        scaler_fit_rows: fit_pos.len(),
    };
    let scaler = ScalerParams { format_version: SCALER_FORMAT_VERSION, columns: scaler_cols };
    let processed = ProcessedMatrix {
        columns,
        rows,
        addresses: kept.iter().map(|&ri| matrix.addresses[ri].clone()).collect(),
        labels: kept.iter().map(|&ri| matrix.labels[ri]).collect(),
        origin: kept,
    };
    Ok((processed, scaler, report))
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v == v.trunc() && v.abs() < 1e15 => format!("{v}"),
        Some(v) => format!("{v:.8e}"),
    }
}

/// Write the matrix as CSV: `address, <features...>, isHoneypot, technique`.
/// Missing values are empty cells; floats carry 9 significant digits.
pub fn matrix_to_csv<W: std::io::Write>(
    matrix: &FeatureMatrix,
    writer: W,
) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["address".to_string()];
    header.extend(matrix.columns.iter().map(|c| c.name.clone()));
    header.push("isHoneypot".into());
    header.push("technique".into());
    w.write_record(&header).map_err(|e| FeatureError::Csv(e.to_string()))?;
    for (i, row) in matrix.rows.iter().enumerate() {
        let mut record = vec![matrix.addresses[i].to_string()];
        record.extend(row.iter().map(|v| fmt_cell(*v)));
        record.push(if matrix.labels[i].is_honeypot { "1".into() } else { "0".into() });
        record.push(matrix.labels[i].technique.as_str().to_string());
        w.write_record(&record).map_err(|e| FeatureError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| FeatureError::Csv(e.to_string()))?;
    Ok(())
}

fn column_meta_from_name(name: &str) -> Column {
    let family = if name.starts_with("fundFlowCase") {
        ColumnFamily::FundFlow
    } else if name.starts_with("normalTransaction")
        || name.starts_with("internalTransaction")
        || name == "hasInternalTransactions"
    {
        ColumnFamily::Transaction
    } else {
        ColumnFamily::SourceCode
    };
    let bounded = family == ColumnFamily::FundFlow
        || name.ends_with("Ratio")
        || name.starts_with("has")
        || name.starts_with("library")
        || name.starts_with("compilerMinorVersion")
        || name.starts_with("compilerPatchVersion");
    Column { name: name.to_string(), family, bounded }
}

/// Read a matrix back from CSV produced by [`matrix_to_csv`]. Column
/// families and boundedness are recovered from the canonical names.
pub fn matrix_from_csv<R: std::io::Read>(reader: R) -> Result<FeatureMatrix, FeatureError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header =
        r.headers().map_err(|e| FeatureError::Csv(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"address")
        || names.len() < 3
        || names[names.len() - 2] != "isHoneypot"
        || names[names.len() - 1] != "technique"
    {
        return Err(FeatureError::Csv(
            "expected header: address, <features...>, isHoneypot, technique".into(),
        ));
    }
    let feature_names = &names[1..names.len() - 2];
    let columns: Vec<Column> = feature_names.iter().map(|n| column_meta_from_name(n)).collect();

    let mut rows = Vec::new();
    let mut addresses = Vec::new();
    let mut labels = Vec::new();
    for (li, record) in r.records().enumerate() {
        let record = record.map_err(|e| FeatureError::Csv(e.to_string()))?;
        if record.len() != names.len() {
            return Err(FeatureError::Csv(format!(
                "record {} has {} fields, expected {}",
                li + 2,
                record.len(),
                names.len()
            )));
        }
        addresses.push(Address::new(&record[0]));
        let mut cells = Vec::with_capacity(columns.len());
        for field in record.iter().skip(1).take(columns.len()) {
            if field.is_empty() {
                cells.push(None);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| FeatureError::Csv(format!("bad float {field:?} at record {}", li + 2)))?;
                cells.push(Some(v));
            }
        }
        rows.push(cells);
        let is_honeypot = &record[names.len() - 2] == "1";
        let technique = crate::chain_data::Technique::parse(&record[names.len() - 1])
            .ok_or_else(|| FeatureError::Csv(format!("unknown technique at record {}", li + 2)))?;
        labels.push(HoneypotLabel { is_honeypot, technique });
    }
    Ok(FeatureMatrix { columns, rows, addresses, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_data::{Technique, Wei};

    fn addr(tag: &str) -> Address {
        Address::new(tag)
    }

    fn normal(
        hash: &str,
        block: u64,
        ts: u64,
        from: &Address,
        to: Option<&Address>,
        creation: Option<&Address>,
        ether: f64,
        gas: u64,
        gas_used: u64,
        is_error: bool,
    ) -> NormalTransaction {
        NormalTransaction {
            hash: hash.into(),
            block_number: block,
            timestamp: ts,
            from: from.clone(),
            to: to.cloned(),
            contract_address: creation.cloned(),
            value: Wei::from_u128((ether * 1e18) as u128),
            gas,
            gas_used,
            is_error,
        }
    }

    fn dict() -> EncodingDictionary {
        EncodingDictionary {
            format_version: 1,
            library: vec!["SafeMath".into()],
            compiler_minor: vec!["4".into(), "5".into()],
            compiler_patch: vec!["19+commit.c4cbbb05".into(), "25+commit.59dbf8f1".into()],
        }
    }

    #[test]
    fn source_features_one_hot_and_lines() {
        let contract = Contract {
            address: addr("0xc1"),
            creator: addr("0xc0"),
            bytecode: vec![0x60],
            creation_block: 1,
            creation_tx_hash: "0x01".into(),
        };
        let src = SourceInfo {
            has_source_code: true,
            source_line_count: 50,
            compiler_version_raw: "v0.4.19+commit.c4cbbb05".into(),
            compiler_minor: "4".into(),
            compiler_patch: "19+commit.c4cbbb05".into(),
            compiler_runs: 200,
            library: None,
        };
        let block = extract_source_features(&contract, &src, &dict());
        assert_eq!(block.has_bytecode, 1.0);
        assert_eq!(block.num_source_code_lines, 50.0);
        assert_eq!(block.patch_onehot, vec![1.0, 0.0]);
        assert_eq!(block.library_onehot, vec![0.0]);
    }

    #[test]
    fn unseen_categorical_encodes_all_zero() {
        let contract = Contract {
            address: addr("0xc1"),
            creator: addr("0xc0"),
            bytecode: vec![],
            creation_block: 1,
            creation_tx_hash: "0x01".into(),
        };
        let src = SourceInfo {
            has_source_code: true,
            source_line_count: 5,
            compiler_version_raw: "v0.8.0".into(),
            compiler_minor: "8".into(),
            compiler_patch: "0".into(),
            compiler_runs: 0,
            library: Some("Unknown".into()),
        };
        let block = extract_source_features(&contract, &src, &dict());
        assert_eq!(block.has_bytecode, 0.0);
        assert!(block.minor_onehot.iter().all(|v| *v == 0.0));
        assert!(block.patch_onehot.iter().all(|v| *v == 0.0));
        assert!(block.library_onehot.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn minimal_contract_statistics() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let normals =
            vec![normal("0x01", 100, 1000, &creator, None, Some(&contract), 0.0, 100_000, 60_000, false)];
        let t = extract_transaction_features(&normals, &[], &creator);
        assert_eq!(t.normal_count, 1.0);
        assert_eq!(t.value_mean, Some(0.0));
        assert_eq!(t.block_span, 0.0);
        assert_eq!(t.time_span, 0.0);
        assert_eq!(t.block_delta_mean, None);
        assert_eq!(t.time_delta_std, None);
        assert_eq!(t.has_internal_transactions, 0.0);
        assert_eq!(t.internal_other_sender_ratio, None);
    }

    #[test]
    fn two_point_value_statistics_are_population() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let normals = vec![
            normal("0x01", 100, 1000, &creator, Some(&contract), None, 1.0, 90_000, 21_000, false),
            normal("0x02", 110, 1150, &creator, Some(&contract), None, 3.0, 90_000, 21_000, false),
        ];
        let t = extract_transaction_features(&normals, &[], &creator);
        assert_eq!(t.value_mean, Some(2.0));
        assert_eq!(t.value_std, Some(1.0));
    }

    /// Hand-computed population std of {10, 20} is 5.
    #[test]
    fn block_deltas_over_three_transactions() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let normals = vec![
            normal("0x01", 100, 1000, &creator, Some(&contract), None, 0.0, 90_000, 21_000, false),
            normal("0x02", 110, 1100, &creator, Some(&contract), None, 0.0, 90_000, 21_000, false),
            normal("0x03", 130, 1300, &creator, Some(&contract), None, 0.0, 90_000, 21_000, false),
        ];
        let t = extract_transaction_features(&normals, &[], &creator);
        assert_eq!(t.block_span, 30.0);
        assert_eq!(t.block_delta_mean, Some(15.0));
        assert_eq!(t.block_delta_std, Some(5.0));
    }

    #[test]
    fn value_statistics_skip_errored_transactions() {
        let creator = addr("0xc0");
        let contract = addr("0xc1");
        let victim = addr("0xv0");
        let normals = vec![
            normal("0x01", 100, 1000, &creator, Some(&contract), None, 1.0, 90_000, 21_000, false),
            normal("0x02", 110, 1100, &victim, Some(&contract), None, 9.0, 90_000, 90_000, true),
        ];
        let t = extract_transaction_features(&normals, &[], &creator);
        assert_eq!(t.value_mean, Some(1.0));
        assert_eq!(t.normal_count, 2.0); // errored txs still count
    }

    #[test]
    fn other_sender_ratio_cases() {
        let creator = addr("0xc0");
        let (a, b, c) = (addr("0xa"), addr("0xb"), addr("0xc"));
        assert_eq!(other_sender_ratio(&[&creator, &a, &b, &c], &creator), 1.0);
        assert!((other_sender_ratio(&[&creator, &a, &a, &a], &creator) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(other_sender_ratio(&[&creator, &creator], &creator), 0.0);
        assert_eq!(other_sender_ratio(&[], &creator), 0.0);
    }

    fn tiny_matrix() -> FeatureMatrix {
        // two hand-built rows through the real extraction path
        let creator = addr("0xc0");
        let contract_a = addr("0xa1");
        let contract_b = addr("0xb1");
        let d = dict();
        let rows = vec![
            FeatureRow {
                address: contract_a.clone(),
                source: extract_source_features(
                    &Contract {
                        address: contract_a.clone(),
                        creator: creator.clone(),
                        bytecode: vec![1],
                        creation_block: 1,
                        creation_tx_hash: "0x01".into(),
                    },
                    &SourceInfo {
                        has_source_code: true,
                        source_line_count: 10,
                        compiler_version_raw: "v0.4.19+commit.c4cbbb05".into(),
                        compiler_minor: "4".into(),
                        compiler_patch: "19+commit.c4cbbb05".into(),
                        compiler_runs: 200,
                        library: None,
                    },
                    &d,
                ),
                transaction: extract_transaction_features(
                    &[normal("0x01", 100, 1000, &creator, None, Some(&contract_a), 0.0, 90_000, 60_000, false)],
                    &[],
                    &creator,
                ),
                fund_flow: frequency_vector(&[crate::fundflow::CaseId(33)]).unwrap(),
                label: HoneypotLabel::negative(),
            },
            FeatureRow {
                address: contract_b.clone(),
                source: extract_source_features(
                    &Contract {
                        address: contract_b.clone(),
                        creator: creator.clone(),
                        bytecode: vec![2],
                        creation_block: 2,
                        creation_tx_hash: "0x02".into(),
                    },
                    &SourceInfo {
                        has_source_code: true,
                        source_line_count: 60,
                        compiler_version_raw: "v0.4.25+commit.59dbf8f1".into(),
                        compiler_minor: "4".into(),
                        compiler_patch: "25+commit.59dbf8f1".into(),
                        compiler_runs: 0,
                        library: Some("SafeMath".into()),
                    },
                    &d,
                ),
                transaction: extract_transaction_features(
                    &[
                        normal("0x03", 100, 1000, &creator, None, Some(&contract_b), 0.0, 90_000, 60_000, false),
                        normal("0x04", 120, 1300, &creator, Some(&contract_b), None, 1.0, 90_000, 21_000, false),
                    ],
                    &[],
                    &creator,
                ),
                fund_flow: frequency_vector(&[crate::fundflow::CaseId(33), crate::fundflow::CaseId(83)]).unwrap(),
                label: HoneypotLabel::honeypot(Technique::HSU),
            },
        ];
        assemble_matrix(rows).unwrap()
    }

    #[test]
    fn matrix_shape_and_label_separation() {
        let m = tiny_matrix();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].len(), m.columns.len());
        assert!(m.columns.iter().all(|c| c.name != "isHoneypot" && c.name != "technique"));
        assert_eq!(
            m.columns.iter().filter(|c| c.family == ColumnFamily::FundFlow).count(),
            CASE_COUNT
        );
    }

    #[test]
    fn csv_round_trip() {
        let m = tiny_matrix();
        let mut buf = Vec::new();
        matrix_to_csv(&m, &mut buf).unwrap();
        let back = matrix_from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.columns.len(), m.columns.len());
        for (a, b) in back.columns.iter().zip(&m.columns) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.family, b.family, "family of {}", a.name);
            assert_eq!(a.bounded, b.bounded, "boundedness of {}", a.name);
        }
        assert_eq!(back.labels, m.labels);
        for (ra, rb) in back.rows.iter().zip(&m.rows) {
            for (ca, cb) in ra.iter().zip(rb) {
                match (ca, cb) {
                    (None, None) => {}
                    (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0)),
                    other => panic!("missingness mismatch: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn preprocess_drops_internal_aggregates_and_dead_cases() {
        let m = tiny_matrix();
        let (p, scaler, report) = preprocess(&m, &[0, 1]).unwrap();
        for name in INTERNAL_AGGREGATE_COLUMNS {
            assert!(p.columns.iter().all(|c| c.name != name), "{name} should be dropped");
        }
        assert!(p.columns.iter().any(|c| c.name == "hasInternalTransactions"));
        // only cases 33 and 83 fire in the fixture
        assert_eq!(report.live_fundflow_count, 2);
        assert!(report.dropped_dead_fundflow.contains(&"fundFlowCase200".to_string()));
        // zero-fill happened
        assert!(p.rows.iter().all(|r| r.iter().all(|v| v.is_finite())));
        // unbounded columns scaled into [0,1] on fit rows
        for sc in &scaler.columns {
            let cj = p.columns.iter().position(|c| c.name == sc.name).unwrap();
            for r in &p.rows {
                assert!((-1e-9..=1.0 + 1e-9).contains(&r[cj]), "{} = {}", sc.name, r[cj]);
            }
        }
    }

    #[test]
    fn scaling_is_fit_on_training_rows_only() {
        let m = tiny_matrix();
        let (p, scaler, _) = preprocess(&m, &[0]).unwrap();
        // row 1 was not in the fit set: its values may fall outside [0,1]
        let sc = scaler.columns.iter().find(|c| c.name == "numSourceCodeLines").unwrap();
        assert_eq!(sc.min, 10.0);
        assert_eq!(sc.max, 10.0); // constant on the fit set
        let cj = p.columns.iter().position(|c| c.name == "numSourceCodeLines").unwrap();
        assert_eq!(p.rows[0][cj], 0.0); // constant-column convention
    }

    #[test]
    fn rows_without_source_are_filtered() {
        let mut m = tiny_matrix();
        let has_source = m.columns.iter().position(|c| c.name == "hasSourceCode").unwrap();
        m.rows[1][has_source] = Some(0.0);
        let (p, _, report) = preprocess(&m, &[0, 1]).unwrap();
        assert_eq!(p.rows.len(), 1);
        assert_eq!(report.rows_kept, 1);
        assert_eq!(p.origin, vec![0]);
    }
}
