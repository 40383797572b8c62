//! Per-level scorers, equal-weight sum mode, and thresholded decisions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::gaussian::{fit_diagonal, fit_gaussian, l2, DiagonalModel, GaussianModel, Shrinkage};
use crate::io::atomic_write;
use crate::linalg::column_means;
use crate::par::Exec;
use crate::specfun::{threshold_for_fpr, WorkingPoint};
use crate::spectral::{Compression, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mahalanobis,
    Sed,
    L2,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mahalanobis => "mahalanobis",
            Metric::Sed => "sed",
            Metric::L2 => "l2",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mahalanobis" => Ok(Metric::Mahalanobis),
            "sed" => Ok(Metric::Sed),
            "l2" => Ok(Metric::L2),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevelModel {
    Gaussian(GaussianModel),
    Diagonal(DiagonalModel),
    Mean(DVector<f64>),
}

impl LevelModel {
    pub fn dim(&self) -> usize {
        match self {
            LevelModel::Gaussian(m) => m.dim(),
            LevelModel::Diagonal(m) => m.dim(),
            LevelModel::Mean(m) => m.len(),
        }
    }
}

/// Everything needed to score one network level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScorer {
    level_name: String,
    metric: Metric,
    model: LevelModel,
    projection: Option<Projection>,
    n_fit: usize,
}

/// Fitting options shared by all levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub metric: Metric,
    pub shrinkage: Shrinkage,
    pub compression: Compression,
    pub sed_eps: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Mahalanobis,
            shrinkage: Shrinkage::Auto,
            compression: Compression::None,
            sed_eps: None,
        }
    }
}

impl LevelScorer {
    pub fn new(
        level_name: impl Into<String>,
        metric: Metric,
        model: LevelModel,
        projection: Option<Projection>,
    ) -> Result<Self> {
        let kinds_agree = matches!(
            (metric, &model),
            (Metric::Mahalanobis, LevelModel::Gaussian(_))
                | (Metric::Sed, LevelModel::Diagonal(_))
                | (Metric::L2, LevelModel::Mean(_))
        );
        if !kinds_agree {
            return Err(Error::InvalidArgument(format!("model kind does not match metric {metric}")));
        }
        if let Some(p) = &projection {
            if p.output_dim() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: p.output_dim(),
                    got: model.dim(),
                });
            }
        }
        Ok(Self {
            level_name: level_name.into(),
            metric,
            model,
            projection,
            n_fit: 0,
        })
    }

    /// Records how many samples the scorer was fitted on.
    pub fn with_n_fit(mut self, n_fit: usize) -> Self {
        self.n_fit = n_fit;
        self
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    /// Fits the projection (if any) and the metric's model on `x`.
    pub fn fit(level_name: impl Into<String>, x: &DMatrix<f64>, opts: &FitOptions) -> Result<Self> {
        let projection = match opts.compression {
            Compression::None => None,
            Compression::Select(mode) => Some(Projection::fit(x, mode)?),
        };
        let projected;
        let data = match &projection {
            Some(p) => {
                projected = p.project(x)?;
                &projected
            }
            None => x,
        };
        let model = match opts.metric {
            Metric::Mahalanobis => LevelModel::Gaussian(fit_gaussian(data, opts.shrinkage)?),
            Metric::Sed => LevelModel::Diagonal(fit_diagonal(data)?.with_floor(opts.sed_eps)),
            Metric::L2 => {
                if data.nrows() == 0 {
                    return Err(Error::Empty);
                }
                LevelModel::Mean(column_means(data))
            }
        };
        Ok(Self::new(level_name, opts.metric, model, projection)?.with_n_fit(x.nrows()))
    }

    pub fn level_name(&self) -> &str {
        &self.level_name
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn model(&self) -> &LevelModel {
        &self.model
    }

    pub fn projection(&self) -> Option<&Projection> {
        self.projection.as_ref()
    }

    /// Dimension of the raw feature vectors this scorer accepts.
    pub fn input_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.model.dim(), Projection::input_dim)
    }

    /// Dimension of the space the model lives in (after projection).
    pub fn model_dim(&self) -> usize {
        self.model.dim()
    }

    fn score_model_space(&self, v: &[f64]) -> Result<f64> {
        match &self.model {
            LevelModel::Gaussian(m) => m.mahalanobis(v),
            LevelModel::Diagonal(m) => m.sed(v),
            LevelModel::Mean(mean) => l2(mean.as_slice(), v),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        match &self.projection {
            Some(p) => self.score_model_space(&p.project_vec(x)?),
            None => self.score_model_space(x),
        }
    }

    /// Scores every row of `x`, in row order.
    pub fn score_rows(&self, x: &DMatrix<f64>, exec: Exec) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let projected;
        let data = match &self.projection {
            Some(p) => {
                projected = p.project(x)?;
                &projected
            }
            None => x,
        };
        if let LevelModel::Diagonal(m) = &self.model {
            let zeros = m.zero_variance_features();
            if !zeros.is_empty() {
                return Err(Error::ZeroVariance(zeros));
            }
        }
        exec.try_map_range(data.nrows(), |i| {
            let row: Vec<f64> = data.row(i).iter().copied().collect();
            self.score_model_space(&row)
        })
    }

    /// Analytic working point for this level. Both Mahalanobis and SED
    /// distances are chi-distributed under their model; L2 is not.
    pub fn working_point(&self, fpr: f64) -> Result<WorkingPoint> {
        if self.metric == Metric::L2 {
            return Err(Error::InvalidArgument("working point undefined for the l2 metric".into()));
        }
        let dim = u32::try_from(self.model_dim()).map_err(|_| Error::InvalidArgument("dimension too large".into()))?;
        threshold_for_fpr(dim, fpr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Anomalous,
}

/// Anomalous iff `score > threshold`; a score equal to the threshold is normal.
pub fn classify(score: f64, wp: &WorkingPoint) -> Decision {
    if score > wp.threshold {
        Decision::Anomalous
    } else {
        Decision::Normal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub level_scores: BTreeMap<String, f64>,
    pub sum_score: f64,
    pub decision: Option<Decision>,
}

/// Sum of per-level scores in ascending level-name order.
pub fn ordered_sum(level_scores: &BTreeMap<String, f64>) -> f64 {
    level_scores.values().fold(0.0, |acc, v| acc + v)
}

fn check_unique_levels(scorers: &[LevelScorer]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in scorers {
        if !seen.insert(s.level_name()) {
            return Err(Error::DuplicateLevel(s.level_name().to_string()));
        }
    }
    Ok(())
}

/// Scores one sample on every level and sums with equal weights.
pub fn score_sum(sample_id: &str, scorers: &[LevelScorer], sample: &HashMap<&str, &[f64]>) -> Result<ScoreRecord> {
    check_unique_levels(scorers)?;
    let mut level_scores = BTreeMap::new();
    for scorer in scorers {
        let x = sample
            .get(scorer.level_name())
            .ok_or_else(|| Error::MissingLevel(scorer.level_name().to_string()))?;
        level_scores.insert(scorer.level_name().to_string(), scorer.score(x)?);
    }
    Ok(ScoreRecord {
        sample_id: sample_id.to_string(),
        sum_score: ordered_sum(&level_scores),
        level_scores,
        decision: None,
    })
}

/// Column-oriented scores for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub sample_ids: Vec<String>,
    /// Ascending by name; this is also the summation order.
    pub levels: Vec<(String, Vec<f64>)>,
    pub sum: Vec<f64>,
}

impl ScoreTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == "sum" {
            return Some(&self.sum);
        }
        self.levels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("sample_id");
        for (name, _) in &self.levels {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",sum\n");
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for (_, col) in &self.levels {
                out.push(',');
                out.push_str(&format_sig(col[i], 9));
            }
            out.push(',');
            out.push_str(&format_sig(self.sum[i], 9));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv_string().as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let err = |message: String| Error::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.len() < 2 || headers[0] != "sample_id" || headers.last().map(String::as_str) != Some("sum") {
            return Err(err("header must be `sample_id,<levels...>,sum`".into()));
        }
        let k = headers.len() - 2;
        let mut sample_ids = Vec::new();
        let mut cols = vec![Vec::new(); k + 1];
        for rec in reader.records() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            sample_ids.push(rec[0].to_string());
            for (j, col) in cols.iter_mut().enumerate() {
                let v: f64 = rec[j + 1]
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad score {:?}", &rec[j + 1])))?;
                col.push(v);
            }
        }
        let sum = cols.pop().unwrap_or_default();
        let levels = headers[1..=k].iter().cloned().zip(cols).collect();
        Ok(Self {
            sample_ids,
            levels,
            sum,
        })
    }
}

/// Scores the selected rows of each level with its scorer. Every scorer must
/// have a matching feature set; extra feature sets are ignored.
pub fn score_table(scorers: &[LevelScorer], sets: &[FeatureSet], rows: &[usize], exec: Exec) -> Result<ScoreTable> {
    check_unique_levels(scorers)?;
    let mut ordered: Vec<&LevelScorer> = scorers.iter().collect();
    ordered.sort_by(|a, b| a.level_name().cmp(b.level_name()));
    let mut sample_ids = None;
    let mut levels = Vec::with_capacity(ordered.len());
    for scorer in ordered {
        let set = sets
            .iter()
            .find(|s| s.level_name == scorer.level_name())
            .ok_or_else(|| Error::MissingLevel(scorer.level_name().to_string()))?;
        let ids: Vec<String> = rows.iter().map(|&r| set.sample_ids[r].clone()).collect();
        match &sample_ids {
            None => sample_ids = Some(ids),
            Some(prev) if *prev != ids => {
                return Err(Error::Manifest(format!(
                    "level {} has a different sample ordering",
                    set.level_name
                )))
            }
            Some(_) => {}
        }
        let x = set.select_rows(rows);
        levels.push((scorer.level_name().to_string(), scorer.score_rows(&x, exec)?));
    }
    let n = rows.len();
    let sum = (0..n)
        .map(|i| levels.iter().fold(0.0, |acc, (_, col)| acc + col[i]))
        .collect();
    Ok(ScoreTable {
        sample_ids: sample_ids.unwrap_or_default(),
        levels,
        sum,
    })
}

/// Formats like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// trimmed, exponent form outside `1e-4 ≤ |v| < 10^sig`.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= sig as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}
