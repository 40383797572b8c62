//! On-disk feature storage.
//!
//! Feature matrices live in ADFV files:
//!
//! ```text
//! offset  size        content
//! 0       4           magic "ADFV" (0x41 0x44 0x46 0x56)
//! 4       4           version, u32 little-endian, always 1
//! 8       4           rows, u32 little-endian
//! 12      4           cols, u32 little-endian
//! 16      4*rows*cols IEEE-754 binary32 values, little-endian, row-major
//! ```
//!
//! A dataset is described by a JSON manifest that lists one ADFV file per
//! network level, a labels CSV (`sample_id,label,category`) and a text file of
//! sample ids (one per line, in row order). Relative paths resolve against the
//! manifest's directory. Values are stored as binary32 but held and processed
//! as binary64.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_json, write_json};

pub const MAGIC: [u8; 4] = *b"ADFV";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Samples × features matrix for one network level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub level_name: String,
    pub data: DMatrix<f64>,
    pub sample_ids: Vec<String>,
}

impl FeatureSet {
    pub fn new(level_name: impl Into<String>, data: DMatrix<f64>, sample_ids: Vec<String>) -> Result<Self> {
        let set = FeatureSet {
            level_name: level_name.into(),
            data,
            sample_ids,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Error::Empty);
        }
        check_finite(&self.data)?;
        if self.sample_ids.len() != self.data.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.data.nrows(),
                got: self.sample_ids.len(),
            });
        }
        let mut seen = HashSet::with_capacity(self.sample_ids.len());
        for id in &self.sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSample(id.clone()));
            }
        }
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.data.select_rows(rows)
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Encodes a matrix as ADFV bytes.
pub fn encode_matrix(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("matrix dimension {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols)?.to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            let v = m[(r, c)] as f32;
            if !v.is_finite() {
                // finite f64 outside the f32 range
                return Err(Error::NonFinite { row: r, col: c });
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes ADFV bytes. `path` is only used for error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Manifest(format!("{}: header shape overflows", path.display())))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let m = DMatrix::from_row_iterator(
        rows,
        cols,
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
    );
    check_finite(&m)?;
    Ok(m)
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    atomic_write(path, &encode_matrix(m)?)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Writes the feature matrix of `set`. Sample ids are not part of the ADFV
/// payload; they travel in the dataset manifest.
pub fn write_feature_file(set: &FeatureSet, path: &Path) -> Result<()> {
    set.validate()?;
    write_matrix(&set.data, path)
}

/// Reads an ADFV file as a feature set. The level name is taken from the file
/// stem and sample ids default to row indices.
pub fn read_feature_file(path: &Path) -> Result<FeatureSet> {
    let data = read_matrix(path)?;
    let level_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let sample_ids = (0..data.nrows()).map(|i| i.to_string()).collect();
    FeatureSet::new(level_name, data, sample_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Average,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub level_name: String,
    #[serde(alias = "D")]
    pub dim: usize,
    pub file_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub model_id: String,
    pub pooling: Pooling,
    pub levels: Vec<LevelEntry>,
    pub labels_path: PathBuf,
    pub sample_count: usize,
    pub sample_ids_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal = 0,
    Anomalous = 1,
}

impl Label {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Normal),
            1 => Some(Label::Anomalous),
            _ => None,
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sample_id: String,
    pub label: u8,
    pub category: String,
}

/// Per-sample labels keyed by sample id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    records: Vec<(String, Label, String)>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, label: Label, category: impl Into<String>) -> Result<()> {
        let id = sample_id.into();
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateSample(id));
        }
        self.index.insert(id.clone(), self.records.len());
        self.records.push((id, label, category.into()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label(&self, sample_id: &str) -> Option<Label> {
        self.index.get(sample_id).map(|&i| self.records[i].1)
    }

    pub fn category(&self, sample_id: &str) -> Option<&str> {
        self.index.get(sample_id).map(|&i| self.records[i].2.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label, &str)> {
        self.records.iter().map(|(id, l, c)| (id.as_str(), *l, c.as_str()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sample_id", "label", "category"] {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: "header must be `sample_id,label,category`".into(),
            });
        }
        let mut table = LabelTable::new();
        for rec in reader.deserialize::<LabelRecord>() {
            let rec = rec.map_err(csv_err)?;
            let label = Label::from_code(rec.label).ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                message: format!("label for {} must be 0 or 1, got {}", rec.sample_id, rec.label),
            })?;
            table.insert(rec.sample_id, label, rec.category)?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for (id, label, category) in self.iter() {
            w.serialize(LabelRecord {
                sample_id: id.to_string(),
                label: label as u8,
                category: category.to_string(),
            })
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // an empty table still gets its header
        let bytes = if bytes.is_empty() {
            b"sample_id,label,category\n".to_vec()
        } else {
            bytes
        };
        atomic_write(path, &bytes)
    }
}

/// Which pool a sample belongs to, derived from its id: the first `/`-separated
/// path segment equal to `train` or `test` decides. Anything after a `#`
/// (augmentation replica index) is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Train,
    Test,
}

impl Pool {
    pub fn of(sample_id: &str) -> Option<Pool> {
        let path = sample_id.split('#').next().unwrap_or(sample_id);
        path.split('/').find_map(|seg| match seg {
            "train" => Some(Pool::Train),
            "test" => Some(Pool::Test),
            _ => None,
        })
    }
}

/// All levels of a dataset plus labels. Every level shares `sample_ids`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub levels: Vec<FeatureSet>,
    pub labels: LabelTable,
}

impl Dataset {
    pub fn sample_ids(&self) -> &[String] {
        &self.levels[0].sample_ids
    }

    pub fn level(&self, name: &str) -> Option<&FeatureSet> {
        self.levels.iter().find(|l| l.level_name == name)
    }

    pub fn label_at(&self, row: usize) -> Label {
        // load_dataset guarantees every id is labelled
        self.labels.label(&self.sample_ids()[row]).expect("labelled sample")
    }

    /// Row indices of the given pool, in dataset order.
    pub fn pool_rows(&self, pool: Pool) -> Result<Vec<usize>> {
        let mut rows = Vec::new();
        for (i, id) in self.sample_ids().iter().enumerate() {
            match Pool::of(id) {
                Some(p) if p == pool => rows.push(i),
                Some(_) => {}
                None => {
                    return Err(Error::Manifest(format!(
                        "cannot determine pool of sample {id}: no `train` or `test` path segment"
                    )))
                }
            }
        }
        Ok(rows)
    }

    /// Train-pool rows; fails naming the first anomalous one.
    pub fn normal_train_rows(&self) -> Result<Vec<usize>> {
        let rows = self.pool_rows(Pool::Train)?;
        if let Some(&bad) = rows.iter().find(|&&r| self.label_at(r).is_anomalous()) {
            return Err(Error::AnomalousTrainSample(self.sample_ids()[bad].clone()));
        }
        Ok(rows)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_sample_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Loads every level declared in the manifest, cross-checks shapes against
/// the manifest and joins labels.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    if manifest.format_version != VERSION {
        return Err(Error::Manifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    if manifest.levels.is_empty() {
        return Err(Error::NoLevels);
    }
    let mut names = HashSet::new();
    for l in &manifest.levels {
        if !names.insert(l.level_name.as_str()) {
            return Err(Error::DuplicateLevel(l.level_name.clone()));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let sample_ids = read_sample_ids(&resolve(base, &manifest.sample_ids_path))?;
    if sample_ids.len() != manifest.sample_count {
        return Err(Error::Manifest(format!(
            "sample_count is {} but {} sample ids are listed",
            manifest.sample_count,
            sample_ids.len()
        )));
    }
    let labels = LabelTable::read_csv(&resolve(base, &manifest.labels_path))?;

    let mut levels = Vec::with_capacity(manifest.levels.len());
    for entry in &manifest.levels {
        let path = resolve(base, &entry.file_path);
        let data = read_matrix(&path)?;
        if data.shape() != (manifest.sample_count, entry.dim) {
            return Err(Error::Manifest(format!(
                "level {}: file {} has shape {}x{}, manifest declares {}x{}",
                entry.level_name,
                path.display(),
                data.nrows(),
                data.ncols(),
                manifest.sample_count,
                entry.dim
            )));
        }
        levels.push(FeatureSet::new(entry.level_name.clone(), data, sample_ids.clone())?);
    }
    for id in &sample_ids {
        if labels.label(id).is_none() {
            return Err(Error::MissingLabel(id.clone()));
        }
    }
    Ok(Dataset {
        manifest,
        levels,
        labels,
    })
}

/// Writes a complete dataset (features, ids, labels, manifest) into `dir` and
/// returns the manifest path. All levels must share one sample-id ordering.
pub fn write_dataset(dir: &Path, model_id: &str, levels: &[FeatureSet], labels: &LabelTable) -> Result<PathBuf> {
    let first = levels.first().ok_or(Error::NoLevels)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(levels.len());
    for set in levels {
        if set.sample_ids != first.sample_ids {
            return Err(Error::Manifest(format!(
                "level {} has a different sample ordering",
                set.level_name
            )));
        }
        let file = PathBuf::from(format!("{}.adfv", set.level_name));
        write_feature_file(set, &dir.join(&file))?;
        entries.push(LevelEntry {
            level_name: set.level_name.clone(),
            dim: set.dim(),
            file_path: file,
        });
    }
    let mut ids = first.sample_ids.join("\n");
    ids.push('\n');
    atomic_write(&dir.join("sample_ids.txt"), ids.as_bytes())?;
    labels.write_csv(&dir.join("labels.csv"))?;
    let manifest = DatasetManifest {
        format_version: VERSION,
        model_id: model_id.to_string(),
        pooling: Pooling::Average,
        levels: entries,
        labels_path: "labels.csv".into(),
        sample_count: first.n_samples(),
        sample_ids_path: "sample_ids.txt".into(),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
