//! Writes a small synthetic dataset (manifest, labels, ADFV features) for
//! trying out the CLI.
//!
//! `cargo run --example make_synthetic -- OUT_DIR`

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use gauss_ad::feature_store::{write_dataset, FeatureSet, Label, LabelTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).ok_or("usage: make_synthetic OUT_DIR")?;
    let mut rng = StdRng::seed_from_u64(1);
    let (n_train, n_good, n_bad) = (400, 60, 60);
    let mut ids = Vec::new();
    let mut labels = LabelTable::new();
    for i in 0..n_train {
        ids.push(format!("train/good/{i:04}"));
        labels.insert(ids[ids.len() - 1].clone(), Label::Normal, "good")?;
    }
    for i in 0..n_good {
        ids.push(format!("test/good/{i:04}"));
        labels.insert(ids[ids.len() - 1].clone(), Label::Normal, "good")?;
    }
    for i in 0..n_bad {
        ids.push(format!("test/scratch/{i:04}"));
        labels.insert(ids[ids.len() - 1].clone(), Label::Anomalous, "scratch")?;
    }
    let n = ids.len();
    let mut levels = Vec::new();
    for (name, d) in [("block1", 16), ("block2", 32)] {
        let x = DMatrix::from_fn(n, d, |i, j| {
            let z: f64 = rng.sample(StandardNormal);
            let scale = 1.0 + j as f64 / d as f64;
            let shift = if i >= n_train + n_good && j % 4 == 0 { 2.5 } else { 0.0 };
            scale * z + shift
        });
        levels.push(FeatureSet::new(name, x, ids.clone())?);
    }
    let manifest = write_dataset(std::path::Path::new(&out), "synthetic", &levels, &labels)?;
    println!("{}", manifest.display());
    Ok(())
}
