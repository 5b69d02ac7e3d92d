//! Command implementations: thin adapters between CLI flags, file
//! formats, and the library calls.

use clap::Args;
use hpscan::chain_data::{
    self, fetch_many, load_dataset, propagate_labels, read_dataset, store_dataset, write_dataset,
    Address, ClientConfig, ContractBundle, EtherscanApi, FetchOutcome, FixtureApi, HoneypotLabel,
    HttpApi, Technique,
};
use hpscan::eval::{
    cross_validate, leave_one_technique_out, loto_to_csv, triage_rank, EvalError,
};
use hpscan::features::{
    matrix_from_csv, matrix_to_csv, preprocess, EncodingDictionary, FeatureSet,
};
use hpscan::fundflow::{
    classify_contract_events, frequency_vector, query_cases, BalanceChange, CaseCatalog,
    CasePredicate, Sender, SenderBalance,
};
use hpscan::gbdt::{feature_importance, train, TrainConfig};
use hpscan::synth::SynthConfig;
use serde::Deserialize;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed inputs; exit code 1.
    Input(String),
    /// Everything else; exit code 2.
    Internal(String),
}

impl CliError {
    /// One machine-readable line for stderr.
    pub fn to_json_line(&self) -> String {
        let (kind, message) = match self {
            CliError::Input(m) => ("input", m),
            CliError::Internal(m) => ("internal", m),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Gbdt(inner) => CliError::Internal(inner.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

/// Defaults loadable from a JSON file; explicit flags override each field.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub features: Option<String>,
    pub train: Option<TrainConfig>,
    pub base_url: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let data = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&data)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

/// Trainer hyperparameter overrides shared by the model-fitting commands.
#[derive(Args, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    gain_gamma: Option<f64>,
    #[arg(long)]
    min_child_weight: Option<f64>,
    #[arg(long)]
    scale_pos_weight: Option<f64>,
}

impl TrainArgs {
    pub fn resolve(&self, config: &PipelineConfig, seed: u64) -> TrainConfig {
        let mut tc = config.train.clone().unwrap_or_default();
        if let Some(v) = self.rounds {
            tc.n_rounds = v;
        }
        if let Some(v) = self.learning_rate {
            tc.learning_rate = v;
        }
        if let Some(v) = self.max_depth {
            tc.max_depth = v;
        }
        if let Some(v) = self.l2_lambda {
            tc.l2_lambda = v;
        }
        if let Some(v) = self.gain_gamma {
            tc.gain_gamma = v;
        }
        if let Some(v) = self.min_child_weight {
            tc.min_child_weight = v;
        }
        if let Some(v) = self.scale_pos_weight {
            tc.scale_pos_weight = Some(v);
        }
        tc.seed = seed;
        tc
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(input_err)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn open_input(input: Option<&Path>) -> Result<Box<dyn BufRead>, CliError> {
    Ok(match input {
        Some(path) => Box::new(BufReader::new(File::open(path).map_err(|e| {
            CliError::Input(format!("{}: {e}", path.display()))
        })?)),
        None => Box::new(BufReader::new(std::io::stdin())),
    })
}

fn metadata_line(w: &mut dyn Write, seed: u64) -> Result<(), CliError> {
    writeln!(w, "# hpscan {} seed={seed}", env!("CARGO_PKG_VERSION")).map_err(internal_err)
}

fn load_bundles(input: Option<&Path>) -> Result<Vec<ContractBundle>, CliError> {
    match input {
        Some(path) => load_dataset(path).map_err(input_err),
        None => read_dataset(BufReader::new(std::io::stdin())).map_err(input_err),
    }
}

fn load_matrix(input: Option<&Path>) -> Result<hpscan::features::FeatureMatrix, CliError> {
    matrix_from_csv(open_input(input)?).map_err(input_err)
}

pub fn ingest(
    config: &PipelineConfig,
    addresses_path: &Path,
    labels_path: Option<&Path>,
    fixtures: Option<&Path>,
    base_url: Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let addresses: Vec<Address> = std::fs::read_to_string(addresses_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", addresses_path.display())))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(Address::new)
        .collect();
    for a in &addresses {
        if !a.is_well_formed() {
            return Err(CliError::Input(format!("malformed address {a}")));
        }
    }

    let mut seed_labels: HashMap<Address, HoneypotLabel> = HashMap::new();
    if let Some(path) = labels_path {
        let data = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        for (no, line) in data.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("address") {
                continue;
            }
            let (addr, technique) = line
                .split_once(',')
                .ok_or_else(|| CliError::Input(format!("labels line {}: no comma", no + 1)))?;
            let technique = Technique::parse(technique.trim()).ok_or_else(|| {
                CliError::Input(format!("labels line {}: unknown technique {technique:?}", no + 1))
            })?;
            let label = if technique == Technique::NONE {
                HoneypotLabel::negative()
            } else {
                HoneypotLabel::honeypot(technique)
            };
            seed_labels.insert(Address::new(addr.trim()), label);
        }
    }

    let mut client_config = ClientConfig::default();
    if let Some(url) = base_url.or_else(|| config.base_url.clone()) {
        client_config.base_url = url;
    }
    let fixture_api;
    let http_api;
    let api: &dyn EtherscanApi = match fixtures {
        Some(dir) => {
            fixture_api = FixtureApi::new(dir);
            &fixture_api
        }
        None => {
            http_api = HttpApi::new(client_config.clone());
            &http_api
        }
    };

    let results = fetch_many(api, &addresses, &client_config);
    let mut found = Vec::new();
    for (address, result) in addresses.iter().zip(results) {
        match result.map_err(internal_err)? {
            FetchOutcome::Found { contract, source, normals, internals } => {
                found.push((contract, source, normals, internals));
            }
            FetchOutcome::Unknown => {
                eprintln!("{}", serde_json::json!({ "skipped": address.as_str() }));
            }
        }
    }

    let contracts: Vec<chain_data::Contract> =
        found.iter().map(|(c, _, _, _)| c.clone()).collect();
    let labels = propagate_labels(&contracts, &seed_labels).map_err(input_err)?;

    let bundles: Vec<ContractBundle> = found
        .into_iter()
        .map(|(contract, source, normals, internals)| {
            let label = labels[&contract.address];
            ContractBundle { contract, source, normals, internals, label }
        })
        .collect();
    store_dataset(out, &bundles).map_err(internal_err)
}

pub fn synth(
    synth_config: Option<&Path>,
    honeypots: Option<usize>,
    non_honeypots: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut config = match synth_config {
        Some(path) => {
            let data = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            SynthConfig::from_json(&data).map_err(input_err)?
        }
        None => SynthConfig::default_profile(),
    };
    if let Some(n) = honeypots {
        config.n_honeypots = n;
    }
    if let Some(n) = non_honeypots {
        config.n_non_honeypots = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let bundles = hpscan::synth::generate(&config).map_err(input_err)?;
    match out {
        Some(path) => store_dataset(path, &bundles).map_err(internal_err),
        None => write_dataset(BufWriter::new(std::io::stdout()), &bundles).map_err(internal_err),
    }
}

pub fn cases(seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    writeln!(w, "id,description").map_err(internal_err)?;
    for (id, case) in CaseCatalog::global().iter() {
        writeln!(w, "{id},\"{}\"", case.describe()).map_err(internal_err)?;
    }
    w.flush().map_err(internal_err)
}

pub fn featurize(input: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let bundles = load_bundles(input)?;
    let dict = EncodingDictionary::fit_from_bundles(&bundles);
    let matrix = hpscan::features::featurize_bundles(&bundles, &dict).map_err(internal_err)?;
    let mut w = open_output(out)?;
    matrix_to_csv(&matrix, &mut w).map_err(internal_err)?;
    w.flush().map_err(internal_err)
}

pub fn cv(
    config: &PipelineConfig,
    input: Option<&Path>,
    features: Option<&str>,
    k: Option<usize>,
    train_args: &TrainArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let matrix = load_matrix(input)?;
    let tag = features.map(str::to_string).or_else(|| config.features.clone());
    let feature_set = match &tag {
        Some(t) => FeatureSet::parse(t)
            .ok_or_else(|| CliError::Input(format!("unknown feature set {t:?}")))?,
        None => FeatureSet::All,
    };
    let k = k.or(config.k).unwrap_or(10);
    let train_config = train_args.resolve(config, seed);
    let report = cross_validate(&matrix, feature_set, &train_config, k, seed).map_err(eval_err)?;
    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    report.to_csv(&mut w).map_err(internal_err)?;
    w.flush().map_err(internal_err)
}

pub fn loto(
    config: &PipelineConfig,
    input: Option<&Path>,
    technique: Option<&str>,
    train_args: &TrainArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let matrix = load_matrix(input)?;
    let train_config = train_args.resolve(config, seed);

    let held_out: Vec<Technique> = match technique {
        Some(t) => {
            let t = Technique::parse(t)
                .ok_or_else(|| CliError::Input(format!("unknown technique {t:?}")))?;
            vec![t]
        }
        None => Technique::ALL_HONEYPOT
            .into_iter()
            .filter(|t| matrix.labels.iter().any(|l| l.technique == *t))
            .collect(),
    };
    if held_out.is_empty() {
        return Err(CliError::Input("no honeypot techniques in the labels".into()));
    }

    let mut results = Vec::new();
    for t in held_out {
        results.push(leave_one_technique_out(&matrix, t, &train_config, 0.5).map_err(eval_err)?);
    }
    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    loto_to_csv(&results, &mut w).map_err(internal_err)?;
    w.flush().map_err(internal_err)
}

pub fn rank(
    config: &PipelineConfig,
    input: Option<&Path>,
    k: Option<usize>,
    unlabeled_only: bool,
    train_args: &TrainArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let matrix = load_matrix(input)?;
    let k = k.or(config.k).unwrap_or(10);
    let train_config = train_args.resolve(config, seed);
    let mut ranking = triage_rank(&matrix, &train_config, k, seed).map_err(eval_err)?;
    if unlabeled_only {
        ranking = ranking.unlabeled_only();
    }
    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    ranking.to_csv(&mut w).map_err(internal_err)?;
    w.flush().map_err(internal_err)
}

/// Raw predicate flags; every invalid value is reported together.
pub struct PredicateArgs {
    pub sender: Option<String>,
    pub creation: Option<String>,
    pub error: Option<String>,
    pub balance_creator: Option<String>,
    pub balance_contract: Option<String>,
    pub balance_sender: Option<String>,
    pub balance_other_positive: Option<String>,
    pub balance_other_negative: Option<String>,
}

impl PredicateArgs {
    fn parse(&self) -> Result<CasePredicate, CliError> {
        let mut problems = Vec::new();
        let mut predicate = CasePredicate::default();

        let parse_bool = |flag: &str, v: &Option<String>, problems: &mut Vec<String>| match v
            .as_deref()
        {
            None => None,
            Some("yes") => Some(true),
            Some("no") => Some(false),
            Some(other) => {
                problems.push(format!("--{flag}: expected yes|no, got {other:?}"));
                None
            }
        };
        let parse_change = |flag: &str, v: &Option<String>, problems: &mut Vec<String>| match v
            .as_deref()
        {
            None => None,
            Some("up") => Some(BalanceChange::Up),
            Some("unchanged") => Some(BalanceChange::Unchanged),
            Some("down") => Some(BalanceChange::Down),
            Some(other) => {
                problems.push(format!("--{flag}: expected up|unchanged|down, got {other:?}"));
                None
            }
        };

        predicate.sender = match self.sender.as_deref() {
            None => None,
            Some("creator") => Some(Sender::Creator),
            Some("other") => Some(Sender::Other),
            Some(other) => {
                problems.push(format!("--sender: expected creator|other, got {other:?}"));
                None
            }
        };
        predicate.creation = parse_bool("creation", &self.creation, &mut problems);
        predicate.error = parse_bool("error", &self.error, &mut problems);
        predicate.balance_creator =
            parse_change("balance-creator", &self.balance_creator, &mut problems);
        predicate.balance_contract =
            parse_change("balance-contract", &self.balance_contract, &mut problems);
        predicate.balance_sender = match self.balance_sender.as_deref() {
            None => None,
            Some("up") => Some(SenderBalance::Up),
            Some("unchanged") => Some(SenderBalance::Unchanged),
            Some("down") => Some(SenderBalance::Down),
            Some("na") => Some(SenderBalance::NotApplicable),
            Some(other) => {
                problems
                    .push(format!("--balance-sender: expected up|unchanged|down|na, got {other:?}"));
                None
            }
        };
        predicate.balance_other_positive =
            parse_bool("balance-other-positive", &self.balance_other_positive, &mut problems);
        predicate.balance_other_negative =
            parse_bool("balance-other-negative", &self.balance_other_negative, &mut problems);

        if problems.is_empty() {
            Ok(predicate)
        } else {
            Err(CliError::Input(problems.join("; ")))
        }
    }
}

pub fn query(
    input: Option<&Path>,
    args: PredicateArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let predicate = args.parse()?;
    let bundles = load_bundles(input)?;

    let mut vectors = Vec::with_capacity(bundles.len());
    for b in &bundles {
        let events = classify_contract_events(
            &b.normals,
            &b.internals,
            &b.contract.creator,
            &b.contract.address,
        );
        let vector = frequency_vector(&events).map_err(input_err)?;
        vectors.push((b.contract.address.clone(), vector));
    }
    let scored = query_cases(&predicate, vectors.iter().map(|(a, v)| (a.clone(), v)));

    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    writeln!(w, "address,matchedFrequency").map_err(internal_err)?;
    for (address, score) in scored {
        writeln!(w, "{address},{score:.6}").map_err(internal_err)?;
    }
    w.flush().map_err(internal_err)
}

pub fn report(
    config: &PipelineConfig,
    input: Option<&Path>,
    train_args: &TrainArgs,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let matrix = load_matrix(input)?;
    let train_config = train_args.resolve(config, seed);
    let all_rows: Vec<usize> = (0..matrix.rows.len()).collect();
    let (processed, _, _) = preprocess(&matrix, &all_rows).map_err(input_err)?;
    let names: Vec<String> = processed.columns.iter().map(|c| c.name.clone()).collect();
    let model = train(&processed.rows, &processed.label_vec(), &names, &train_config)
        .map_err(internal_err)?;
    let importance = feature_importance(&model);

    let mut w = open_output(out)?;
    metadata_line(&mut w, seed)?;
    if !importance.has_splits {
        writeln!(w, "# model has no splits; importances are all zero").map_err(internal_err)?;
    }
    writeln!(w, "rank,feature,importance").map_err(internal_err)?;
    for (i, (name, value)) in importance.ranked(&model.feature_names).into_iter().enumerate() {
        writeln!(w, "{},{name},{value:.6}", i + 1).map_err(internal_err)?;
    }
    w.flush().map_err(internal_err)
}
