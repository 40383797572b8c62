//! Synthetic datasets shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gauss_ad::feature_store::{write_dataset, FeatureSet, Label, LabelTable};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut StdRng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_vector(rng: &mut StdRng, d: usize) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v / n
}

/// Haar-ish random rotation from the QR factor of a Gaussian matrix.
pub fn random_rotation(rng: &mut StdRng, d: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, d, d);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub struct Synthetic {
    pub dims: Vec<usize>,
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    /// Shift of anomalies along a random direction, in units of the data's
    /// standard deviation along that direction.
    pub shift: f64,
    pub seed: u64,
}

impl Default for Synthetic {
    fn default() -> Self {
        Self {
            dims: vec![8],
            n_train: 500,
            n_test_normal: 100,
            n_test_anomalous: 100,
            shift: 5.0,
            seed: 7,
        }
    }
}

impl Synthetic {
    /// Writes a dataset with levels `level0`, `level1`, ... and returns the
    /// manifest path. Each level has its own random covariance.
    pub fn write(&self, dir: &Path) -> PathBuf {
        let mut rng = rng(self.seed);
        let n = self.n_train + self.n_test_normal + self.n_test_anomalous;
        let mut ids = Vec::with_capacity(n);
        let mut labels = LabelTable::new();
        for i in 0..self.n_train {
            ids.push(format!("train/good/{i:04}"));
        }
        for i in 0..self.n_test_normal {
            ids.push(format!("test/good/{i:04}"));
        }
        for i in 0..self.n_test_anomalous {
            ids.push(format!("test/shift/{i:04}"));
        }
        for id in &ids {
            let (label, cat) = if id.starts_with("test/shift") {
                (Label::Anomalous, "shift")
            } else {
                (Label::Normal, "good")
            };
            labels.insert(id.clone(), label, cat).unwrap();
        }
        let first_anomaly = self.n_train + self.n_test_normal;
        let levels: Vec<FeatureSet> = self
            .dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let scales = DVector::from_fn(d, |j, _| 0.5 + 2.0 * ((j * 37 + l * 11) % 7) as f64 / 7.0);
                let rot = random_rotation(&mut rng, d);
                let z = normal_matrix(&mut rng, n, d);
                // x = z S Rᵀ has covariance R S² Rᵀ; the standard deviation
                // along a unit direction u is ‖S Rᵀ u‖.
                let factor = DMatrix::from_diagonal(&scales) * rot.transpose();
                let mut x = z * &factor;
                let dir = unit_vector(&mut rng, d);
                let sigma = (&factor * &dir).norm();
                for i in first_anomaly..n {
                    let mut r = x.row_mut(i);
                    r += (self.shift * sigma) * dir.transpose();
                }
                FeatureSet::new(format!("level{l}"), x, ids.clone()).unwrap()
            })
            .collect();
        write_dataset(dir, "synthetic", &levels, &labels).unwrap()
    }
}

pub fn gauss_ad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gauss-ad"))
        .args(args)
        .output()
        .expect("spawn gauss-ad")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
