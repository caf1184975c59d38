//! Cross-validation folds and ranking metrics.
//!
//! AUC is the probability that a random positive outranks a random
//! negative with ties worth half credit (the trapezoidal ROC area). AUPR
//! is average precision with tied scores grouped into a single threshold
//! cut, so a constant predictor scores exactly positives/total. Best-F1
//! sweeps thresholds midway between adjacent distinct scores plus the
//! infinite sentinels.

use crate::error::{Error, Result};
use crate::ingest::HeteroAdjacency;
use crate::rng::{derive_seed, seeded_rng};
use crate::trainer::{fit, KernelSelector, TrainConfig};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const FOLD_STREAM: u64 = 0x666f6c64; // "fold"
const FOLD_MODEL_STREAM: u64 = 0x666d646c; // "fmdl"

/// Held-out positive cells per fold; folds partition the positives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<(usize, usize)>>,
    pub seed: u64,
}

/// Shuffle the positive cells with a seeded generator and deal them
/// round-robin into `k` folds.
pub fn make_folds(y: &Array2<f64>, k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 {
        return Err(Error::config("folds: k must be >= 1"));
    }
    let mut positives: Vec<(usize, usize)> = Vec::new();
    for ((i, j), &v) in y.indexed_iter() {
        if v == 1.0 {
            positives.push((i, j));
        }
    }
    if positives.len() < k {
        return Err(Error::data(format!(
            "folds: {} positives cannot fill {k} folds",
            positives.len()
        )));
    }
    let mut rng = seeded_rng(derive_seed(seed, &[FOLD_STREAM]));
    positives.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (idx, cell) in positives.into_iter().enumerate() {
        folds[idx % k].push(cell);
    }
    Ok(FoldSplit { folds, seed })
}

/// Copy of `Y` with the fold's held-out positive cells zeroed.
pub fn mask_train(y: &Array2<f64>, fold: &[(usize, usize)]) -> Result<Array2<f64>> {
    let mut masked = y.clone();
    for &(i, j) in fold {
        if y[[i, j]] != 1.0 {
            return Err(Error::data(format!(
                "fold references cell ({i}, {j}) which is not a known positive"
            )));
        }
        masked[[i, j]] = 0.0;
    }
    Ok(masked)
}

/// Indices sorted by descending score, ties by ascending original index.
fn ranked_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    idx
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let p = labels.iter().filter(|&&l| l).count();
    (p, labels.len() - p)
}

/// ROC area: probability a random positive outscores a random negative,
/// ties counted half. Errors on single-class input.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::data(
            "auc undefined: need at least one positive and one negative",
        ));
    }
    // Average ranks over tie groups (ascending scores, rank 1-based).
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN score"));
    let mut rank_sum_pos = 0.0;
    let mut at = 0;
    while at < idx.len() {
        let mut end = at;
        while end + 1 < idx.len() && scores[idx[end + 1]] == scores[idx[at]] {
            end += 1;
        }
        // ranks at..=end (0-based) -> average 1-based rank
        let avg_rank = (at + end) as f64 / 2.0 + 1.0;
        for &i in &idx[at..=end] {
            if labels[i] {
                rank_sum_pos += avg_rank;
            }
        }
        at = end + 1;
    }
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Average precision over distinct-score threshold cuts: each positive
/// contributes the precision of the cut that first includes it, so tied
/// scores share one cut and a constant predictor scores positives/total.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::data("aupr undefined: no positive labels"));
    }
    let ranked = ranked_indices(scores);
    let mut sum = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut at = 0;
    while at < ranked.len() {
        let mut end = at;
        while end + 1 < ranked.len() && scores[ranked[end + 1]] == scores[ranked[at]] {
            end += 1;
        }
        let group_pos = ranked[at..=end].iter().filter(|&&i| labels[i]).count();
        tp += group_pos;
        seen += end - at + 1;
        if group_pos > 0 {
            let precision = tp as f64 / seen as f64;
            sum += group_pos as f64 * precision;
        }
        at = end + 1;
    }
    Ok(sum / p as f64)
}

/// Best F1 over all thresholds midway between adjacent distinct scores
/// plus the infinite sentinels; prediction is `score >= threshold`.
/// Returns the lowest threshold achieving the maximum.
pub fn f1_best(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::data("f1 undefined: no positive labels"));
    }
    let ranked = ranked_indices(scores);
    let f1_of = |tp: usize, predicted: usize| -> f64 {
        // denominator = predicted + actual positives, never zero (p >= 1)
        2.0 * tp as f64 / (predicted + p) as f64
    };

    // Sweep from the +inf sentinel (predict nothing) down through the
    // distinct-score boundaries to -inf (predict everything); >= keeps the
    // lowest threshold among ties.
    let mut best = (f1_of(0, 0), f64::INFINITY);
    let mut tp = 0usize;
    let mut at = 0;
    while at < ranked.len() {
        let mut end = at;
        while end + 1 < ranked.len() && scores[ranked[end + 1]] == scores[ranked[at]] {
            end += 1;
        }
        tp += ranked[at..=end].iter().filter(|&&i| labels[i]).count();
        let predicted = end + 1;
        let threshold = if end + 1 < ranked.len() {
            (scores[ranked[end]] + scores[ranked[end + 1]]) / 2.0
        } else {
            f64::NEG_INFINITY
        };
        let f1 = f1_of(tp, predicted);
        if f1 >= best.0 {
            best = (f1, threshold);
        }
        at = end + 1;
    }
    Ok(best)
}

/// Scores and metrics of one evaluated fold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RankingMetrics {
    pub auc: f64,
    pub aupr: f64,
    pub f1_best: f64,
    pub threshold_best: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// The scores and labels a fold is judged on: held-out positives
/// (label 1) plus every unknown cell (label 0), in row-major cell order;
/// training positives are excluded.
pub fn fold_eval_set(
    y: &Array2<f64>,
    fold: &[(usize, usize)],
    y_star: &Array2<f64>,
) -> Result<(Vec<f64>, Vec<bool>)> {
    assert_eq!(y.dim(), y_star.dim(), "Y/Y* shape mismatch");
    let held: HashSet<(usize, usize)> = fold.iter().copied().collect();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ((i, j), &v) in y.indexed_iter() {
        if held.contains(&(i, j)) {
            if v != 1.0 {
                return Err(Error::data(format!(
                    "fold cell ({i}, {j}) is not a positive in Y"
                )));
            }
            scores.push(y_star[[i, j]]);
            labels.push(true);
        } else if v == 0.0 {
            scores.push(y_star[[i, j]]);
            labels.push(false);
        }
    }
    Ok((scores, labels))
}

/// Evaluate predictions at the fold's evaluation set.
pub fn evaluate_fold(
    y: &Array2<f64>,
    fold: &[(usize, usize)],
    y_star: &Array2<f64>,
) -> Result<RankingMetrics> {
    let (scores, labels) = fold_eval_set(y, fold, y_star)?;
    metrics_from_scores(&scores, &labels)
}

/// Assemble all metrics from a flat score/label list.
pub fn metrics_from_scores(scores: &[f64], labels: &[bool]) -> Result<RankingMetrics> {
    let auc_v = auc(scores, labels)?;
    let aupr_v = aupr(scores, labels)?;
    let (f1_v, threshold) = f1_best(scores, labels)?;
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(RankingMetrics {
        auc: auc_v,
        aupr: aupr_v,
        f1_best: f1_v,
        threshold_best: threshold,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// ROC step-curve points `(fpr, tpr)` at each distinct-score cut.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let (p, n) = class_counts(labels);
    let ranked = ranked_indices(scores);
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fpc = 0usize;
    let mut at = 0;
    while at < ranked.len() {
        let mut end = at;
        while end + 1 < ranked.len() && scores[ranked[end + 1]] == scores[ranked[at]] {
            end += 1;
        }
        for &i in &ranked[at..=end] {
            if labels[i] {
                tp += 1;
            } else {
                fpc += 1;
            }
        }
        points.push((
            if n > 0 { fpc as f64 / n as f64 } else { 0.0 },
            if p > 0 { tp as f64 / p as f64 } else { 0.0 },
        ));
        at = end + 1;
    }
    points
}

/// PR step-curve points `(recall, precision)` at each distinct-score cut.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let (p, _) = class_counts(labels);
    let ranked = ranked_indices(scores);
    let mut points = vec![(0.0, 1.0)];
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut at = 0;
    while at < ranked.len() {
        let mut end = at;
        while end + 1 < ranked.len() && scores[ranked[end + 1]] == scores[ranked[at]] {
            end += 1;
        }
        tp += ranked[at..=end].iter().filter(|&&i| labels[i]).count();
        seen += end - at + 1;
        points.push((
            if p > 0 { tp as f64 / p as f64 } else { 0.0 },
            tp as f64 / seen as f64,
        ));
        at = end + 1;
    }
    points
}

/// Per-fold outcome inside a cross-validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub held_out: usize,
    pub metrics: RankingMetrics,
}

/// Mean and standard deviation of the headline metrics over folds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub aupr: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

/// Cross-validation result: the metric report plus each fold's raw
/// evaluation scores (for ROC/PR curve dumps).
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: CvReport,
    pub fold_scores: Vec<(Vec<f64>, Vec<bool>)>,
}

fn summarize(folds: &[FoldOutcome]) -> (MetricSummary, MetricSummary) {
    let k = folds.len() as f64;
    let mean = MetricSummary {
        auc: folds.iter().map(|f| f.metrics.auc).sum::<f64>() / k,
        aupr: folds.iter().map(|f| f.metrics.aupr).sum::<f64>() / k,
        f1: folds.iter().map(|f| f.metrics.f1_best).sum::<f64>() / k,
    };
    let var = |get: fn(&RankingMetrics) -> f64, mu: f64| -> f64 {
        if folds.len() < 2 {
            return 0.0;
        }
        folds
            .iter()
            .map(|f| {
                let d = get(&f.metrics) - mu;
                d * d
            })
            .sum::<f64>()
            / (k - 1.0)
    };
    let std = MetricSummary {
        auc: var(|m| m.auc, mean.auc).sqrt(),
        aupr: var(|m| m.aupr, mean.aupr).sqrt(),
        f1: var(|m| m.f1_best, mean.f1).sqrt(),
    };
    (mean, std)
}

/// Per-fold training configuration: both seed fields derive from the
/// evaluation seed and the fold index.
fn fold_config(base: &TrainConfig, seed: u64, fold: usize) -> TrainConfig {
    let mut config = base.clone();
    config.seed = derive_seed(seed, &[FOLD_MODEL_STREAM, fold as u64, 0]);
    config.gat.seed = derive_seed(seed, &[FOLD_MODEL_STREAM, fold as u64, 1]);
    config
}

/// K-fold cross-validation. Folds run independently (optionally on
/// `workers` threads); results merge by fold index, so worker count never
/// changes the report.
pub fn cross_validate(
    adj: &HeteroAdjacency,
    y: &Array2<f64>,
    selector: &KernelSelector,
    config: &TrainConfig,
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<CvOutcome> {
    let split = make_folds(y, k, seed)?;
    type FoldResult = (FoldOutcome, (Vec<f64>, Vec<bool>));
    let run_fold = |fold_idx: usize| -> Result<FoldResult> {
        let fold = &split.folds[fold_idx];
        let y_train = mask_train(y, fold)?;
        for &(i, j) in fold {
            assert_eq!(y_train[[i, j]], 0.0, "held-out cell leaked into Y_train");
        }
        let fc = fold_config(config, seed, fold_idx);
        let (_, y_star) = fit(adj, &y_train, selector, &fc)?;
        let (scores, labels) = fold_eval_set(y, fold, &y_star)?;
        let metrics = metrics_from_scores(&scores, &labels)?;
        Ok((
            FoldOutcome {
                fold: fold_idx,
                held_out: fold.len(),
                metrics,
            },
            (scores, labels),
        ))
    };

    let workers = workers.max(1).min(k);
    let mut outcomes: Vec<Option<FoldResult>> = (0..k).map(|_| None).collect();
    if workers == 1 {
        for (i, slot) in outcomes.iter_mut().enumerate() {
            *slot = Some(run_fold(i)?);
        }
    } else {
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run_fold = &run_fold;
                    scope.spawn(move || {
                        let mut acc = Vec::new();
                        let mut i = w;
                        while i < k {
                            acc.push((i, run_fold(i)));
                            i += workers;
                        }
                        acc
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("fold worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, result) in results {
            outcomes[i] = Some(result?);
        }
    }

    let mut folds = Vec::with_capacity(k);
    let mut fold_scores = Vec::with_capacity(k);
    for outcome in outcomes {
        let (f, s) = outcome.unwrap();
        folds.push(f);
        fold_scores.push(s);
    }
    let (mean, std) = summarize(&folds);
    Ok(CvOutcome {
        report: CvReport { folds, mean, std },
        fold_scores,
    })
}

/// One cell of a hyperparameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub gammas: Vec<f64>,
    pub layer_dims: Vec<usize>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

/// Run cross-validation over the full bandwidth x dimension grid,
/// emitting one record per cell.
#[allow(clippy::too_many_arguments)]
pub fn sweep_grid(
    adj: &HeteroAdjacency,
    y: &Array2<f64>,
    selector: &KernelSelector,
    base: &TrainConfig,
    gamma_grid: &[Vec<f64>],
    dim_grid: &[Vec<usize>],
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepRecord>> {
    if gamma_grid.is_empty() || dim_grid.is_empty() {
        return Err(Error::config("sweep: both grids need at least one entry"));
    }
    let mut records = Vec::with_capacity(gamma_grid.len() * dim_grid.len());
    for gammas in gamma_grid {
        for dims in dim_grid {
            let mut config = base.clone();
            config.kernel.gammas = gammas.clone();
            config.gat.layer_dims = dims.clone();
            config.validate()?;
            let outcome = cross_validate(adj, y, selector, &config, k, seed, workers)?;
            records.push(SweepRecord {
                gammas: gammas.clone(),
                layer_dims: dims.clone(),
                mean: outcome.report.mean,
                std: outcome.report.std,
            });
        }
    }
    Ok(records)
}
