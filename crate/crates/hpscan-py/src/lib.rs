//! Python bindings: the fund-flow case catalog, AUROC, stratified folds,
//! the boosted-tree model, and the synthetic corpus generator, exposed as
//! the `hpscan_py` extension module.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::{Path, PathBuf};

use hpscan::chain_data::{load_dataset, store_dataset};
use hpscan::eval;
use hpscan::features::{
    featurize_bundles, matrix_from_csv, matrix_to_csv, preprocess, EncodingDictionary,
    FeatureMatrix, FeatureSet,
};
use hpscan::fundflow::{classify_contract_events, CaseCatalog, CaseId};
use hpscan::gbdt::{self, GbdtModel, TrainConfig};
use hpscan::synth::SynthConfig;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Number of valid fund-flow cases (244).
#[pyfunction]
fn case_count() -> usize {
    CaseCatalog::global().len()
}

/// All cases as `(id, description)` pairs in canonical order.
#[pyfunction]
fn enumerate_cases() -> Vec<(u16, String)> {
    CaseCatalog::global().iter().map(|(id, c)| (id.0, c.describe())).collect()
}

/// Table-style description of one case id.
#[pyfunction]
fn describe_case(id: u16) -> PyResult<String> {
    if id as usize >= CaseCatalog::global().len() {
        return Err(PyValueError::new_err(format!("case id {id} out of range")));
    }
    Ok(CaseCatalog::global().case(CaseId(id)).describe())
}

/// Area under the ROC curve with tie handling.
#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    eval::auroc(&scores, &labels).map_err(value_err)
}

/// Stratified fold index per sample.
#[pyfunction]
#[pyo3(signature = (labels, k=10, seed=0))]
fn stratified_kfold(labels: Vec<bool>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(eval::stratified_kfold(&labels, k, seed).map_err(value_err)?.fold_of)
}

/// Write a synthetic labeled corpus (JSONL) using the built-in archetype
/// profile.
#[pyfunction]
#[pyo3(signature = (path, honeypots=300, non_honeypots=5000, seed=7))]
fn generate_corpus(path: PathBuf, honeypots: usize, non_honeypots: usize, seed: u64) -> PyResult<usize> {
    let mut config = SynthConfig::default_profile();
    config.n_honeypots = honeypots;
    config.n_non_honeypots = non_honeypots;
    config.seed = seed;
    let bundles = hpscan::synth::generate(&config).map_err(value_err)?;
    store_dataset(&path, &bundles).map_err(io_err)?;
    Ok(bundles.len())
}

/// Per-contract fund-flow case ids for every contract in a corpus file.
#[pyfunction]
fn classify_corpus(path: PathBuf) -> PyResult<Vec<(String, Vec<u16>)>> {
    let bundles = load_dataset(&path).map_err(io_err)?;
    Ok(bundles
        .iter()
        .map(|b| {
            let events = classify_contract_events(
                &b.normals,
                &b.internals,
                &b.contract.creator,
                &b.contract.address,
            );
            (b.contract.address.to_string(), events.into_iter().map(|id| id.0).collect())
        })
        .collect())
}

/// Extract the feature matrix from a JSONL corpus into a CSV file.
#[pyfunction]
fn featurize_corpus(corpus: PathBuf, csv_out: PathBuf) -> PyResult<usize> {
    let bundles = load_dataset(&corpus).map_err(io_err)?;
    let dict = EncodingDictionary::fit_from_bundles(&bundles);
    let matrix = featurize_bundles(&bundles, &dict).map_err(value_err)?;
    let file = std::fs::File::create(&csv_out).map_err(io_err)?;
    matrix_to_csv(&matrix, std::io::BufWriter::new(file)).map_err(io_err)?;
    Ok(matrix.rows.len())
}

fn load_matrix(path: &Path) -> PyResult<FeatureMatrix> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    matrix_from_csv(std::io::BufReader::new(file)).map_err(value_err)
}

fn train_config(n_rounds: usize, max_depth: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig { n_rounds, max_depth, learning_rate, seed, ..TrainConfig::default() }
}

/// Stratified cross-validation over a feature-matrix CSV; returns
/// `(per_fold_test_auroc, test_mean, test_std)`.
#[pyfunction]
#[pyo3(signature = (csv_path, feature_set="all", k=10, seed=0, n_rounds=100))]
fn cross_validate_csv(
    csv_path: PathBuf,
    feature_set: &str,
    k: usize,
    seed: u64,
    n_rounds: usize,
) -> PyResult<(Vec<f64>, f64, f64)> {
    let matrix = load_matrix(&csv_path)?;
    let set = FeatureSet::parse(feature_set)
        .ok_or_else(|| PyValueError::new_err(format!("unknown feature set {feature_set:?}")))?;
    let config = train_config(n_rounds, 6, 0.1, seed);
    let report = eval::cross_validate(&matrix, set, &config, k, seed).map_err(value_err)?;
    let folds = report.folds.iter().map(|f| f.test_auroc).collect();
    Ok((folds, report.test_mean, report.test_std))
}

/// Boosted-tree classifier over dense feature rows.
#[pyclass(name = "GbdtModel")]
struct PyGbdtModel {
    inner: GbdtModel,
}

#[pymethods]
impl PyGbdtModel {
    /// Train on row-major features and boolean labels.
    #[staticmethod]
    #[pyo3(signature = (rows, labels, feature_names, n_rounds=100, max_depth=6, learning_rate=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
        feature_names: Vec<String>,
        n_rounds: usize,
        max_depth: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let config = train_config(n_rounds, max_depth, learning_rate, seed);
        let inner = gbdt::train(&rows, &labels, &feature_names, &config).map_err(value_err)?;
        Ok(PyGbdtModel { inner })
    }

    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&rows).map_err(value_err)
    }

    /// Normalized gain importance per feature name, descending.
    fn feature_importance(&self) -> Vec<(String, f64)> {
        let report = gbdt::feature_importance(&self.inner);
        report
            .ranked(&self.inner.feature_names)
            .into_iter()
            .map(|(n, v)| (n.to_string(), v))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(data: &str) -> PyResult<Self> {
        Ok(PyGbdtModel { inner: serde_json::from_str(data).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(io_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyGbdtModel { inner: GbdtModel::load_json(&path).map_err(io_err)? })
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn base_score(&self) -> f64 {
        self.inner.base_score
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }
}

/// Preprocess a feature-matrix CSV (row filter, column drops, zero fill,
/// min-max scaling fitted on all rows) and return
/// `(column_names, rows, labels)` ready for training.
#[pyfunction]
fn preprocess_csv(csv_path: PathBuf) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<bool>)> {
    let matrix = load_matrix(&csv_path)?;
    let all: Vec<usize> = (0..matrix.rows.len()).collect();
    let (processed, _, _) = preprocess(&matrix, &all).map_err(value_err)?;
    let names = processed.columns.iter().map(|c| c.name.clone()).collect();
    let labels = processed.label_vec();
    Ok((names, processed.rows, labels))
}

#[pymodule]
fn hpscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(case_count, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_cases, m)?)?;
    m.add_function(wrap_pyfunction!(describe_case, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_kfold, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(classify_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(featurize_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate_csv, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_csv, m)?)?;
    m.add_class::<PyGbdtModel>()?;
    Ok(())
}
