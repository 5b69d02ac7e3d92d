//! Evaluation protocols: AUROC, stratified k-fold cross-validation,
//! leave-one-technique-out recall, and the ensemble triage ranking.

use crate::chain_data::{Address, HoneypotLabel, Technique};
use crate::features::{preprocess, FeatureError, FeatureMatrix, FeatureSet};
use crate::gbdt::{train, GbdtError, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("auroc needs at least one positive and one negative sample")]
    SingleClassScores,
    #[error("stratified split impossible: class {class} has {count} samples, fewer than k={k}")]
    TooFewSamples { class: bool, count: usize, k: usize },
    #[error("k must be at least 2 (got {0})")]
    BadK(usize),
    #[error("technique {0} not present in the labels")]
    UnknownTechnique(Technique),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic:
/// over all (positive, negative) pairs, a positive scoring higher earns 1,
/// an exact tie earns 1/2. Computed by a single sort with average ranks
/// over tie groups.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassScores);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j)
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fold membership per sample for stratified k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Within each class, shuffle by seed and deal round-robin into k folds,
/// so per-fold class counts differ by at most one from proportionality.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [false, true] {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(EvalError::TooFewSamples { class, count: members.len(), k });
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            fold_of[idx] = pos % k;
        }
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    // exact answer for a constant slice; summation rounding would
    // otherwise leave a spurious nonzero deviation
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_auroc: f64,
    pub test_auroc: f64,
}

/// Cross-validation report for one feature-set experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub feature_set: String,
    pub folds: Vec<FoldResult>,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

impl CvReport {
    /// CSV rows `featureSet, fold, trainAuroc, testAuroc` plus a summary
    /// row with fold `mean+-std`.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "featureSet,fold,trainAuroc,testAuroc")?;
        for fr in &self.folds {
            writeln!(w, "{},{},{:.6},{:.6}", self.feature_set, fr.fold, fr.train_auroc, fr.test_auroc)?;
        }
        writeln!(
            w,
            "{},mean,{:.6},{:.6}",
            self.feature_set, self.train_mean, self.test_mean
        )?;
        writeln!(w, "{},std,{:.6},{:.6}", self.feature_set, self.train_std, self.test_std)?;
        Ok(())
    }
}

/// Stratified k-fold cross-validation over a raw feature matrix.
///
/// Preprocessing is fitted per fold on the training split only (scaler
/// ranges and dead-column detection never see the test fold), and the
/// positive-class weight is recomputed from each training split. Rows
/// removed by the bytecode/source filter take part in neither training
/// nor testing.
pub fn cross_validate(
    matrix: &FeatureMatrix,
    feature_set: FeatureSet,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    let labels: Vec<bool> = matrix.labels.iter().map(|l| l.is_honeypot).collect();
    let assignment = stratified_kfold(&labels, k, seed)?;

    let folds: Result<Vec<FoldResult>, EvalError> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let fit_on = assignment.train_indices(fold);
            let (processed, _, _) = preprocess(matrix, &fit_on)?;
            let selected = processed.select(feature_set);

            let in_train: Vec<bool> =
                selected.origin.iter().map(|&orig| assignment.fold_of[orig] != fold).collect();
            let train_rows: Vec<Vec<f64>> = selected
                .rows
                .iter()
                .zip(&in_train)
                .filter(|(_, t)| **t)
                .map(|(r, _)| r.clone())
                .collect();
            let train_labels: Vec<bool> = selected
                .origin
                .iter()
                .zip(&in_train)
                .filter(|(_, t)| **t)
                .map(|(&orig, _)| labels[orig])
                .collect();
            let test_rows: Vec<Vec<f64>> = selected
                .rows
                .iter()
                .zip(&in_train)
                .filter(|(_, t)| !**t)
                .map(|(r, _)| r.clone())
                .collect();
            let test_labels: Vec<bool> = selected
                .origin
                .iter()
                .zip(&in_train)
                .filter(|(_, t)| !**t)
                .map(|(&orig, _)| labels[orig])
                .collect();

            let names: Vec<String> = selected.columns.iter().map(|c| c.name.clone()).collect();
            let model = train(&train_rows, &train_labels, &names, config)?;
            let train_auroc = auroc(&model.predict_proba(&train_rows)?, &train_labels)?;
            let test_auroc = auroc(&model.predict_proba(&test_rows)?, &test_labels)?;
            Ok(FoldResult { fold, train_auroc, test_auroc })
        })
        .collect();
    let folds = folds?;

    let train_scores: Vec<f64> = folds.iter().map(|f| f.train_auroc).collect();
    let test_scores: Vec<f64> = folds.iter().map(|f| f.test_auroc).collect();
    let (train_mean, train_std) = mean_std(&train_scores);
    let (test_mean, test_std) = mean_std(&test_scores);
    Ok(CvReport {
        feature_set: feature_set.tag().to_string(),
        folds,
        train_mean,
        train_std,
        test_mean,
        test_std,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LotoResult {
    pub technique: Technique,
    pub false_negatives: usize,
    pub true_positives: usize,
    pub recall: f64,
}

/// Simulated detection of an unknown technique: every honeypot of the
/// held-out technique forms the test set, everything else trains, and the
/// test set is scored at the given probability threshold (0.5 mirrors the
/// published protocol).
pub fn leave_one_technique_out(
    matrix: &FeatureMatrix,
    technique: Technique,
    config: &TrainConfig,
    threshold: f64,
) -> Result<LotoResult, EvalError> {
    if technique == Technique::NONE
        || !matrix.labels.iter().any(|l| l.technique == technique)
    {
        return Err(EvalError::UnknownTechnique(technique));
    }

    let held_out = |label: &HoneypotLabel| label.is_honeypot && label.technique == technique;
    let fit_on: Vec<usize> =
        (0..matrix.rows.len()).filter(|&i| !held_out(&matrix.labels[i])).collect();
    let (processed, _, _) = preprocess(matrix, &fit_on)?;

    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    for (pos, &orig) in processed.origin.iter().enumerate() {
        if held_out(&matrix.labels[orig]) {
            test_rows.push(processed.rows[pos].clone());
        } else {
            train_rows.push(processed.rows[pos].clone());
            train_labels.push(matrix.labels[orig].is_honeypot);
        }
    }

    let names: Vec<String> = processed.columns.iter().map(|c| c.name.clone()).collect();
    let model = train(&train_rows, &train_labels, &names, config)?;
    let probs = model.predict_proba(&test_rows)?;
    let true_positives = probs.iter().filter(|p| **p > threshold).count();
    let false_negatives = probs.len() - true_positives;
    let recall = true_positives as f64 / probs.len().max(1) as f64;
    Ok(LotoResult { technique, false_negatives, true_positives, recall })
}

/// CSV mirroring the published table layout.
pub fn loto_to_csv<W: std::io::Write>(results: &[LotoResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "technique,FN,TP,recall")?;
    for r in results {
        writeln!(w, "{},{},{},{:.3}", r.technique, r.false_negatives, r.true_positives, r.recall)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriageEntry {
    pub rank: usize,
    pub address: Address,
    pub mean_prob: f64,
    pub std_prob: f64,
    /// True for contracts already carrying a honeypot label.
    pub is_labeled: bool,
    pub label: HoneypotLabel,
}

/// Per-contract ensemble statistics, sorted descending by mean
/// probability with address as the tiebreak.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriageRanking {
    pub entries: Vec<TriageEntry>,
    pub k: usize,
    pub seed: u64,
}

impl TriageRanking {
    /// Drop contracts that already carry a honeypot label, keeping a
    /// ranking over the unlabeled pool only. Ranks are reassigned.
    pub fn unlabeled_only(&self) -> TriageRanking {
        let mut entries: Vec<TriageEntry> =
            self.entries.iter().filter(|e| !e.is_labeled).cloned().collect();
        for (i, e) in entries.iter_mut().enumerate() {
            e.rank = i + 1;
        }
        TriageRanking { entries, k: self.k, seed: self.seed }
    }

    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rank,address,meanProb,stdProb,isLabeled,label")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{},{}",
                e.rank,
                e.address,
                e.mean_prob,
                e.std_prob,
                if e.is_labeled { 1 } else { 0 },
                e.label.technique
            )?;
        }
        Ok(())
    }
}

/// Assemble a ranking from per-model probability vectors (k rows of
/// per-contract probabilities). Exposed separately so degenerate
/// ensembles (for example k copies of one constant model) can be ranked
/// directly.
pub fn triage_from_probabilities(
    probs_per_model: &[Vec<f64>],
    addresses: &[Address],
    labels: &[HoneypotLabel],
    k: usize,
    seed: u64,
) -> TriageRanking {
    let n = addresses.len();
    let mut entries: Vec<TriageEntry> = (0..n)
        .map(|i| {
            let values: Vec<f64> = probs_per_model.iter().map(|m| m[i]).collect();
            let (mean_prob, std_prob) = mean_std(&values);
            TriageEntry {
                rank: 0,
                address: addresses[i].clone(),
                mean_prob,
                std_prob,
                is_labeled: labels[i].is_honeypot,
                label: labels[i],
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_prob.partial_cmp(&a.mean_prob).unwrap().then_with(|| a.address.cmp(&b.address))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    TriageRanking { entries, k, seed }
}

/// Train k models on the k stratified fold-complements, score every
/// contract with every model, and rank by the ensemble mean probability.
/// The standard deviation column is the models' disagreement and can be
/// used as a filter downstream.
pub fn triage_rank(
    matrix: &FeatureMatrix,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<TriageRanking, EvalError> {
    let labels: Vec<bool> = matrix.labels.iter().map(|l| l.is_honeypot).collect();
    let assignment = stratified_kfold(&labels, k, seed)?;

    let per_model: Result<Vec<(Vec<usize>, Vec<f64>)>, EvalError> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let fit_on = assignment.train_indices(fold);
            let (processed, _, _) = preprocess(matrix, &fit_on)?;
            let train_rows: Vec<Vec<f64>> = processed
                .origin
                .iter()
                .enumerate()
                .filter(|(_, &orig)| assignment.fold_of[orig] != fold)
                .map(|(pos, _)| processed.rows[pos].clone())
                .collect();
            let train_labels: Vec<bool> = processed
                .origin
                .iter()
                .filter(|&&orig| assignment.fold_of[orig] != fold)
                .map(|&orig| labels[orig])
                .collect();
            let names: Vec<String> =
                processed.columns.iter().map(|c| c.name.clone()).collect();
            let model = train(&train_rows, &train_labels, &names, config)?;
            // every model scores every surviving contract
            let probs = model.predict_proba(&processed.rows)?;
            Ok((processed.origin.clone(), probs))
        })
        .collect();
    let per_model = per_model?;

    // all folds share the same row filter, so origins agree
    let origin = &per_model[0].0;
    let probs_per_model: Vec<Vec<f64>> = per_model.iter().map(|(_, p)| p.clone()).collect();
    let addresses: Vec<Address> =
        origin.iter().map(|&orig| matrix.addresses[orig].clone()).collect();
    let entry_labels: Vec<HoneypotLabel> =
        origin.iter().map(|&orig| matrix.labels[orig]).collect();
    Ok(triage_from_probabilities(&probs_per_model, &addresses, &entry_labels, k, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_scores_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [true, false, true, false];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    /// Brute-forced over all four (positive, negative) pairs.
    #[test]
    fn mixed_scores_match_pairwise_count() {
        let scores = [0.9, 0.4, 0.6, 0.1];
        assert_eq!(auroc(&scores, &[true, false, true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&scores, &[true, true, false, false]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auroc(&[0.5, 0.6], &[true, true]).is_err());
    }

    fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            if !labels[i] {
                continue;
            }
            for j in 0..scores.len() {
                if labels[j] {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn fast_auroc_matches_brute_force_with_ties() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            // coarse grid forces plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let fast = auroc(&scores, &labels).unwrap();
            let brute = brute_force_auroc(&scores, &labels);
            assert!((fast - brute).abs() < 1e-12, "fast {fast} vs brute {brute}");
        }
    }

    #[test]
    fn auroc_complement_identity_without_ties() {
        let scores = [0.11, 0.42, 0.73, 0.24, 0.95, 0.58];
        let labels = [false, true, true, false, true, false];
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auroc(&scores, &labels).unwrap();
        let b = auroc(&neg, &labels).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let scores = [0.11, 0.42, 0.73, 0.24, 0.95, 0.58];
        let labels = [false, true, true, false, true, false];
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 7.0_f64).exp()).collect();
        assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&transformed, &labels).unwrap());
    }

    #[test]
    fn exact_divisibility_gives_exact_fold_counts() {
        let labels: Vec<bool> = (0..100).map(|i| i < 20).collect();
        let assignment = stratified_kfold(&labels, 10, 3).unwrap();
        for fold in 0..10 {
            let test = assignment.test_indices(fold);
            let positives = test.iter().filter(|&&i| labels[i]).count();
            assert_eq!(positives, 2);
            assert_eq!(test.len(), 10);
        }
    }

    #[test]
    fn paper_sized_positive_counts_land_in_29_or_30() {
        let labels: Vec<bool> = (0..10_000).map(|i| i < 295).collect();
        let assignment = stratified_kfold(&labels, 10, 7).unwrap();
        for fold in 0..10 {
            let positives =
                assignment.test_indices(fold).iter().filter(|&&i| labels[i]).count();
            assert!(positives == 29 || positives == 30, "fold {fold}: {positives}");
        }
    }

    #[test]
    fn folds_partition_the_index_set() {
        let labels: Vec<bool> = (0..137).map(|i| i % 9 == 0).collect();
        let k = 5;
        let assignment = stratified_kfold(&labels, k, 42).unwrap();
        let mut seen = vec![false; labels.len()];
        for fold in 0..k {
            for i in assignment.test_indices(fold) {
                assert!(!seen[i], "sample {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn undersized_class_is_reported() {
        let labels = vec![true, false, false, false, false];
        let err = stratified_kfold(&labels, 3, 0).unwrap_err();
        assert!(matches!(err, EvalError::TooFewSamples { class: true, count: 1, k: 3 }));
    }

    #[test]
    fn constant_ensemble_has_zero_std() {
        let addresses: Vec<Address> =
            (0..5).map(|i| Address::new(&format!("0x{i:040x}"))).collect();
        let labels = vec![HoneypotLabel::negative(); 5];
        let probs = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5]; 10];
        let ranking = triage_from_probabilities(&probs, &addresses, &labels, 10, 0);
        assert!(ranking.entries.iter().all(|e| e.std_prob == 0.0));
        // descending order
        for w in ranking.entries.windows(2) {
            assert!(w[0].mean_prob >= w[1].mean_prob);
        }
        assert_eq!(ranking.entries[0].mean_prob, 0.5);
    }
}
