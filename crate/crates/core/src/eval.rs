//! AUROC, thresholded rates, k-fold splitting and fold-averaged reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{Dataset, Label, Pool};
use crate::gaussian::Shrinkage;
use crate::par::Exec;
use crate::rng::Xoshiro256StarStar;
use crate::scoring::{score_table, FitOptions, LevelScorer, Metric};
use crate::spectral::Compression;

fn class_counts(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let anomalous = labels.iter().filter(|l| l.is_anomalous()).count();
    let normal = labels.len() - anomalous;
    if anomalous == 0 || normal == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((normal, anomalous))
}

/// Area under the ROC curve, `P(s_anom > s_norm) + ½ P(s_anom = s_norm)`,
/// via the Mann–Whitney rank sum with mid-ranks for ties.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (n_norm, n_anom) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Doubled mid-ranks are integers: a tie block at 0-based positions
    // [start, end) has mid-rank (start + 1 + end) / 2.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled = (start + 1 + end) as u128;
        let anomalies_in_block = order[start..end].iter().filter(|&&i| labels[i].is_anomalous()).count() as u128;
        doubled_rank_sum += doubled * anomalies_in_block;
        start = end;
    }
    let n1 = n_anom as u128;
    let doubled_u = doubled_rank_sum - n1 * (n1 + 1);
    Ok(doubled_u as f64 / (2 * n_anom * n_norm) as f64)
}

/// `(fpr, tpr)` at threshold `t`; a sample is flagged iff its score exceeds `t`.
pub fn fpr_tpr_at(scores: &[f64], labels: &[Label], t: f64) -> Result<(f64, f64)> {
    let (n_norm, n_anom) = class_counts(scores, labels)?;
    let mut fp = 0usize;
    let mut tp = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        if *s > t {
            match l {
                Label::Normal => fp += 1,
                Label::Anomalous => tp += 1,
            }
        }
    }
    Ok((fp as f64 / n_norm as f64, tp as f64 / n_anom as f64))
}

/// Fold assignment of `n` items: shuffle `0..n` with the seeded generator
/// described in [`crate::rng`], then cut into `k` contiguous chunks. The first
/// `n mod k` folds get one extra item.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the number of samples {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Xoshiro256StarStar::seed_from_u64(seed).shuffle(&mut order);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[pos..pos + size].to_vec());
        pos += size;
    }
    Ok(folds)
}

/// [`kfold_indices`] applied to a sequence of ids.
pub fn kfold_split<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    Ok(kfold_indices(ids.len(), k, seed)?
        .into_iter()
        .map(|fold| fold.into_iter().map(|i| ids[i].clone()).collect())
        .collect())
}

/// Mean and standard error of the mean (sample std with `k - 1`, over `√k`).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub target_fpr: f64,
    pub threshold: f64,
    pub achieved_fpr: f64,
    pub achieved_tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub n_fit: usize,
    pub auroc: f64,
    pub level_auroc: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub working_point: Option<ThresholdResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sem: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, sem) = mean_sem(values);
        Self { mean, sem }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub metric: Metric,
    pub shrinkage: Shrinkage,
    pub compression: Compression,
    pub levels: Vec<String>,
    pub k: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub folds: Vec<FoldResult>,
    /// AUROC of the sum score (of the single level when only one is selected).
    pub auroc: Summary,
    pub level_auroc: BTreeMap<String, Summary>,
}

impl EvalReport {
    pub fn from_folds(meta: ReportMeta, folds: Vec<FoldResult>) -> Self {
        let sums: Vec<f64> = folds.iter().map(|f| f.auroc).collect();
        let level_auroc = meta
            .levels
            .iter()
            .map(|name| {
                let vals: Vec<f64> = folds.iter().map(|f| f.level_auroc[name]).collect();
                (name.clone(), Summary::of(&vals))
            })
            .collect();
        Self {
            auroc: Summary::of(&sums),
            level_auroc,
            meta,
            folds,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(
            out,
            "metric {}  shrinkage {}  compression {}  k {}  seed {}",
            m.metric,
            shrinkage_label(m.shrinkage),
            m.compression,
            m.k,
            m.seed
        );
        let _ = writeln!(out, "levels {}", m.levels.join(","));
        let with_wp = self.folds.iter().any(|f| f.working_point.is_some());
        let _ = write!(out, "{:<6} {:>6} {:>10}", "fold", "n_fit", "auroc");
        if with_wp {
            let _ = write!(out, " {:>10} {:>10} {:>10} {:>10}", "target", "threshold", "fpr", "tpr");
        }
        out.push('\n');
        for f in &self.folds {
            let _ = write!(out, "{:<6} {:>6} {:>10.6}", f.fold_index, f.n_fit, f.auroc);
            if let Some(wp) = &f.working_point {
                let _ = write!(
                    out,
                    " {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                    wp.target_fpr, wp.threshold, wp.achieved_fpr, wp.achieved_tpr
                );
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{:<13} {:>10.6} ± {:.6}", "mean ± sem", self.auroc.mean, self.auroc.sem);
        if self.level_auroc.len() > 1 {
            let _ = writeln!(out, "per level:");
            let width = self.level_auroc.keys().map(String::len).max().unwrap_or(0).max(5);
            for (name, s) in &self.level_auroc {
                let _ = writeln!(out, "  {name:<width$} {:>10.6} ± {:.6}", s.mean, s.sem);
            }
        }
        out
    }
}

pub fn shrinkage_label(s: Shrinkage) -> String {
    match s {
        Shrinkage::Auto => "auto".into(),
        Shrinkage::None => "none".into(),
        Shrinkage::Fixed(r) => format!("fixed:{r}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldConfig {
    pub fit: FitOptions,
    /// Levels to use; `None` selects every level of the dataset.
    pub levels: Option<Vec<String>>,
    pub k: usize,
    pub seed: u64,
    /// Per-level working point to evaluate; only valid with a single level.
    pub target_fpr: Option<f64>,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            levels: None,
            k: 5,
            seed: 42,
            target_fpr: None,
        }
    }
}

/// Resolves a level filter against the dataset, keeping dataset order.
pub fn select_levels(dataset: &Dataset, filter: Option<&[String]>) -> Result<Vec<String>> {
    match filter {
        None => Ok(dataset.levels.iter().map(|l| l.level_name.clone()).collect()),
        Some(names) => {
            if names.is_empty() {
                return Err(Error::NoLevels);
            }
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if dataset.level(n).is_none() {
                    return Err(Error::MissingLevel(n.clone()));
                }
                if !seen.insert(n) {
                    return Err(Error::DuplicateLevel(n.clone()));
                }
            }
            Ok(dataset
                .levels
                .iter()
                .map(|l| l.level_name.clone())
                .filter(|n| names.contains(n))
                .collect())
        }
    }
}

/// Fits one scorer per level on the given rows.
pub fn fit_levels(dataset: &Dataset, levels: &[String], rows: &[usize], opts: &FitOptions, exec: Exec) -> Result<Vec<LevelScorer>> {
    exec.try_map_range(levels.len(), |i| {
        let set = dataset.level(&levels[i]).ok_or_else(|| Error::MissingLevel(levels[i].clone()))?;
        LevelScorer::fit(&set.level_name, &set.select_rows(rows), opts)
    })
}

/// k-fold evaluation: each fold's model is fitted on the remaining `k - 1`
/// folds of the (all-normal) train pool and applied to the whole test pool.
/// AUROCs are averaged over folds.
pub fn run_kfold(dataset: &Dataset, cfg: &KFoldConfig, exec: Exec) -> Result<EvalReport> {
    let levels = select_levels(dataset, cfg.levels.as_deref())?;
    if cfg.target_fpr.is_some() && levels.len() > 1 {
        return Err(Error::SumModeThreshold);
    }
    let train = dataset.normal_train_rows()?;
    let test = dataset.pool_rows(Pool::Test)?;
    let test_labels: Vec<Label> = test.iter().map(|&r| dataset.label_at(r)).collect();
    let anomalous = test_labels.iter().filter(|l| l.is_anomalous()).count();
    if anomalous == 0 || anomalous == test_labels.len() {
        return Err(Error::DegenerateLabels);
    }
    let folds = kfold_split(&train, cfg.k, cfg.seed)?;

    let results = exec.try_map_range(folds.len(), |f| -> Result<FoldResult> {
        let mut fit_rows: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        fit_rows.sort_unstable();
        let scorers = fit_levels(dataset, &levels, &fit_rows, &cfg.fit, exec)?;
        let table = score_table(&scorers, &dataset.levels, &test, exec)?;
        let mut level_auroc = BTreeMap::new();
        for (name, col) in &table.levels {
            level_auroc.insert(name.clone(), auroc(col, &test_labels)?);
        }
        let working_point = match cfg.target_fpr {
            Some(fpr) => {
                let wp = scorers[0].working_point(fpr)?;
                let (achieved_fpr, achieved_tpr) = fpr_tpr_at(&table.sum, &test_labels, wp.threshold)?;
                Some(ThresholdResult {
                    target_fpr: fpr,
                    threshold: wp.threshold,
                    achieved_fpr,
                    achieved_tpr,
                })
            }
            None => None,
        };
        Ok(FoldResult {
            fold_index: f,
            n_fit: fit_rows.len(),
            auroc: auroc(&table.sum, &test_labels)?,
            level_auroc,
            working_point,
        })
    })?;

    let meta = ReportMeta {
        metric: cfg.fit.metric,
        shrinkage: cfg.fit.shrinkage,
        compression: cfg.fit.compression,
        levels,
        k: cfg.k,
        seed: cfg.seed,
        target_fpr: cfg.target_fpr,
    };
    Ok(EvalReport::from_folds(meta, results))
}

/// Metrics for one score column against labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetrics {
    pub column: String,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub auroc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub working_point: Option<ThresholdResult>,
}

pub fn score_metrics(column: &str, scores: &[f64], labels: &[Label], threshold: Option<(f64, f64)>) -> Result<ScoreMetrics> {
    let (n_normal, n_anomalous) = class_counts(scores, labels)?;
    let working_point = match threshold {
        Some((target_fpr, t)) => {
            let (achieved_fpr, achieved_tpr) = fpr_tpr_at(scores, labels, t)?;
            Some(ThresholdResult {
                target_fpr,
                threshold: t,
                achieved_fpr,
                achieved_tpr,
            })
        }
        None => None,
    };
    Ok(ScoreMetrics {
        column: column.to_string(),
        n_normal,
        n_anomalous,
        auroc: auroc(scores, labels)?,
        working_point,
    })
}
