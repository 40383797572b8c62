//! Model directories.
//!
//! ```text
//! <dir>/models.json          index: model id, fit options, level list
//! <dir>/<level>/meta.json    per-level metadata (+ working point, if set)
//! <dir>/<level>/mean.adfv    1 × d
//! <dir>/<level>/chol.adfv    d × d lower Cholesky factor   (mahalanobis)
//! <dir>/<level>/std.adfv     1 × d standard deviations     (sed)
//! <dir>/<level>/basis.adfv   D × d projection basis        (compressed)
//! <dir>/<level>/eigvals.adfv 1 × d selected eigenvalues    (compressed)
//! <dir>/<level>/center.adfv  1 × D projection center       (compressed)
//! ```
//!
//! Parameters are stored as binary32 like features, so a reloaded model
//! agrees with the in-memory one to single precision.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{read_matrix, write_matrix};
use crate::gaussian::{DiagonalModel, GaussianModel, Shrinkage};
use crate::io::{read_json, write_json};
use crate::scoring::{LevelModel, LevelScorer, Metric};
use crate::specfun::WorkingPoint;
use crate::spectral::{Compression, Projection, SelectionMode};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIndex {
    pub format_version: u32,
    pub model_id: String,
    pub metric: Metric,
    pub shrinkage: Shrinkage,
    pub compression: Compression,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sed_eps: Option<f64>,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub mode: SelectionMode,
    pub total_variance: f64,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMeta {
    pub level_name: String,
    pub metric: Metric,
    /// Dimension of the fitted model (after projection).
    pub dim: usize,
    /// Dimension of the raw feature vectors.
    pub input_dim: usize,
    pub shrinkage: f64,
    pub n_fit: usize,
    pub compression: Compression,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projection: Option<ProjectionMeta>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sed_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub working_point: Option<WorkingPoint>,
}

/// A loaded model directory.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub index: ModelIndex,
    pub scorers: Vec<LevelScorer>,
    pub metas: Vec<LevelMeta>,
}

impl ModelSet {
    pub fn scorer(&self, level: &str) -> Option<(&LevelScorer, &LevelMeta)> {
        self.scorers
            .iter()
            .zip(&self.metas)
            .find(|(s, _)| s.level_name() == level)
    }
}

fn check_level_name(name: &str) -> Result<()> {
    if name.is_empty() || name == "." || name == ".." || name == "sum" || name.contains(['/', '\\', ',']) {
        return Err(Error::InvalidArgument(format!(
            "level name {name:?} cannot be used as a model directory or score column"
        )));
    }
    Ok(())
}

fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn level_dir(dir: &Path, level: &str) -> PathBuf {
    dir.join(level)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every scorer and the index into `dir`.
pub fn save_models(dir: &Path, index: &ModelIndex, scorers: &[LevelScorer]) -> Result<()> {
    let names: Vec<&str> = scorers.iter().map(LevelScorer::level_name).collect();
    if names != index.levels.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument("model index does not list the scorers' levels".into()));
    }
    for n in &names {
        check_level_name(n)?;
    }
    mkdir(dir)?;
    for scorer in scorers {
        let ldir = level_dir(dir, scorer.level_name());
        mkdir(&ldir)?;
        let (shrinkage, mean) = match scorer.model() {
            LevelModel::Gaussian(m) => {
                write_matrix(m.chol_factor(), &ldir.join("chol.adfv"))?;
                (m.shrinkage(), m.mean().clone())
            }
            LevelModel::Diagonal(m) => {
                write_matrix(&row(&m.std), &ldir.join("std.adfv"))?;
                (0.0, m.mean.clone())
            }
            LevelModel::Mean(m) => (0.0, m.clone()),
        };
        write_matrix(&row(&mean), &ldir.join("mean.adfv"))?;
        let projection = match scorer.projection() {
            Some(p) => {
                write_matrix(&p.basis, &ldir.join("basis.adfv"))?;
                write_matrix(&row(&p.eigenvalues), &ldir.join("eigvals.adfv"))?;
                write_matrix(&row(&p.center), &ldir.join("center.adfv"))?;
                Some(ProjectionMeta {
                    mode: p.mode,
                    total_variance: p.total_variance,
                    selected: p.output_dim(),
                })
            }
            None => None,
        };
        let sed_eps = match scorer.model() {
            LevelModel::Diagonal(m) => m.floor,
            _ => None,
        };
        let meta = LevelMeta {
            level_name: scorer.level_name().to_string(),
            metric: scorer.metric(),
            dim: scorer.model_dim(),
            input_dim: scorer.input_dim(),
            shrinkage,
            n_fit: scorer.n_fit(),
            compression: index.compression,
            projection,
            sed_eps,
            working_point: None,
        };
        write_json(&ldir.join("meta.json"), &meta)?;
    }
    write_json(&dir.join("models.json"), index)
}

fn expect_shape(m: &DMatrix<f64>, shape: (usize, usize), what: &str, level: &str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Manifest(format!(
            "level {level}: {what} has shape {}x{}, meta.json implies {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

fn row_vector(m: DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.iter().copied())
}

pub fn read_level_meta(dir: &Path, level: &str) -> Result<LevelMeta> {
    check_level_name(level)?;
    let meta: LevelMeta = read_json(&level_dir(dir, level).join("meta.json"))?;
    if meta.level_name != level {
        return Err(Error::Manifest(format!(
            "meta.json in {level}/ names level {}",
            meta.level_name
        )));
    }
    Ok(meta)
}

fn load_level(dir: &Path, level: &str) -> Result<(LevelScorer, LevelMeta)> {
    let meta = read_level_meta(dir, level)?;
    let ldir = level_dir(dir, level);
    let d = meta.dim;
    let mean = read_matrix(&ldir.join("mean.adfv"))?;
    expect_shape(&mean, (1, d), "mean.adfv", level)?;
    let mean = row_vector(mean);
    let model = match meta.metric {
        Metric::Mahalanobis => {
            let chol = read_matrix(&ldir.join("chol.adfv"))?;
            expect_shape(&chol, (d, d), "chol.adfv", level)?;
            LevelModel::Gaussian(GaussianModel::from_factor(mean, chol, meta.shrinkage, meta.n_fit)?)
        }
        Metric::Sed => {
            let std = read_matrix(&ldir.join("std.adfv"))?;
            expect_shape(&std, (1, d), "std.adfv", level)?;
            LevelModel::Diagonal(DiagonalModel {
                mean,
                std: row_vector(std),
                floor: meta.sed_eps,
            })
        }
        Metric::L2 => LevelModel::Mean(mean),
    };
    let projection = match &meta.projection {
        Some(pm) => {
            if pm.selected != d {
                return Err(Error::Manifest(format!(
                    "level {level}: projection keeps {} components but model dim is {d}",
                    pm.selected
                )));
            }
            let basis = read_matrix(&ldir.join("basis.adfv"))?;
            expect_shape(&basis, (meta.input_dim, d), "basis.adfv", level)?;
            let eig = read_matrix(&ldir.join("eigvals.adfv"))?;
            expect_shape(&eig, (1, d), "eigvals.adfv", level)?;
            let center = read_matrix(&ldir.join("center.adfv"))?;
            expect_shape(&center, (1, meta.input_dim), "center.adfv", level)?;
            Some(Projection {
                basis,
                eigenvalues: row_vector(eig),
                mode: pm.mode,
                total_variance: pm.total_variance,
                center: row_vector(center),
            })
        }
        None => {
            if meta.input_dim != d {
                return Err(Error::Manifest(format!(
                    "level {level}: input_dim {} differs from dim {d} without a projection",
                    meta.input_dim
                )));
            }
            None
        }
    };
    let scorer = LevelScorer::new(level, meta.metric, model, projection)?.with_n_fit(meta.n_fit);
    Ok((scorer, meta))
}

pub fn load_models(dir: &Path) -> Result<ModelSet> {
    let index: ModelIndex = read_json(&dir.join("models.json"))?;
    if index.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported model format_version {}",
            index.format_version
        )));
    }
    if index.levels.is_empty() {
        return Err(Error::NoLevels);
    }
    let mut scorers = Vec::with_capacity(index.levels.len());
    let mut metas = Vec::with_capacity(index.levels.len());
    for level in &index.levels {
        let (s, m) = load_level(dir, level)?;
        if m.metric != index.metric {
            return Err(Error::Manifest(format!("level {level}: metric differs from models.json")));
        }
        scorers.push(s);
        metas.push(m);
    }
    Ok(ModelSet { index, scorers, metas })
}

/// Stores `wp` in the level's `meta.json`.
pub fn store_working_point(dir: &Path, level: &str, wp: WorkingPoint) -> Result<()> {
    let mut meta = read_level_meta(dir, level)?;
    if wp.dim as usize != meta.dim {
        return Err(Error::DimensionMismatch {
            expected: meta.dim,
            got: wp.dim as usize,
        });
    }
    meta.working_point = Some(wp);
    write_json(&level_dir(dir, level).join("meta.json"), &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::Exec;
    use crate::scoring::FitOptions;

    fn data(n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |i, j| ((i * 7 + j * 3) as f64 * 0.61).sin() * (j + 1) as f64 + 0.01 * i as f64)
    }

    fn round_trip(opts: FitOptions) {
        let x = data(80, 6);
        let scorer = LevelScorer::fit("lvl", &x, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = ModelIndex {
            format_version: FORMAT_VERSION,
            model_id: "test".into(),
            metric: opts.metric,
            shrinkage: opts.shrinkage,
            compression: opts.compression,
            sed_eps: opts.sed_eps,
            levels: vec!["lvl".into()],
        };
        save_models(dir.path(), &index, std::slice::from_ref(&scorer)).unwrap();
        let loaded = load_models(dir.path()).unwrap();
        assert_eq!(loaded.index, index);
        let (ls, meta) = loaded.scorer("lvl").unwrap();
        assert_eq!(meta.n_fit, 80);
        assert_eq!(ls.model_dim(), scorer.model_dim());
        let a = scorer.score_rows(&x, Exec::Sequential).unwrap();
        let b = ls.score_rows(&x, Exec::Sequential).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-4 * u.max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn round_trips_every_model_kind() {
        round_trip(FitOptions::default());
        round_trip(FitOptions {
            compression: "npca:0.2".parse().unwrap(),
            ..Default::default()
        });
        round_trip(FitOptions {
            metric: Metric::Sed,
            sed_eps: Some(1e-6),
            ..Default::default()
        });
        round_trip(FitOptions {
            metric: Metric::L2,
            compression: "pca:0.9".parse().unwrap(),
            ..Default::default()
        });
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = data(40, 4);
        let scorer = LevelScorer::fit("lvl", &x, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = ModelIndex {
            format_version: FORMAT_VERSION,
            model_id: "m".into(),
            metric: Metric::Mahalanobis,
            shrinkage: Shrinkage::Auto,
            compression: Compression::None,
            sed_eps: None,
            levels: vec!["lvl".into()],
        };
        save_models(dir.path(), &index, &[scorer]).unwrap();
        write_matrix(&DMatrix::zeros(1, 3), &dir.path().join("lvl/mean.adfv")).unwrap();
        let err = load_models(dir.path()).unwrap_err();
        assert!(err.to_string().contains("mean.adfv"), "{err}");
    }

    #[test]
    fn working_point_is_stored() {
        let x = data(40, 3);
        let scorer = LevelScorer::fit("lvl", &x, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = ModelIndex {
            format_version: FORMAT_VERSION,
            model_id: "m".into(),
            metric: Metric::Mahalanobis,
            shrinkage: Shrinkage::Auto,
            compression: Compression::None,
            sed_eps: None,
            levels: vec!["lvl".into()],
        };
        save_models(dir.path(), &index, std::slice::from_ref(&scorer)).unwrap();
        let wp = scorer.working_point(0.05).unwrap();
        store_working_point(dir.path(), "lvl", wp).unwrap();
        assert_eq!(read_level_meta(dir.path(), "lvl").unwrap().working_point, Some(wp));
        let bad = WorkingPoint { dim: 7, ..wp };
        assert!(store_working_point(dir.path(), "lvl", bad).is_err());
    }

    #[test]
    fn unsafe_level_names_rejected() {
        for name in ["", "..", "a/b", "sum", "x,y"] {
            assert!(check_level_name(name).is_err(), "{name:?}");
        }
        check_level_name("block_7").unwrap();
    }
}
