mod common;

use std::fs;

use gauss_ad::feature_store::{write_dataset, FeatureSet, Label, LabelTable};
use nalgebra::DMatrix;

use common::{gauss_ad, p, stderr, stdout, Synthetic};

fn fit_default(manifest: &std::path::Path, model: &std::path::Path, extra: &[&str]) {
    let mut args = vec!["fit", "--manifest", p(manifest), "--model", p(model)];
    args.extend_from_slice(extra);
    let o = gauss_ad(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn threshold_percent_on_one_dimensional_model_gives_three_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![1],
        ..Default::default()
    }
    .write(dir.path());
    let model = dir.path().join("model");
    fit_default(&manifest, &model, &[]);
    let o = gauss_ad(&["threshold", "--model", p(&model), "--fpr", "0.3%"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let wp: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let t = wp["threshold"].as_f64().unwrap();
    // 0.3% is the rounded three-sigma tail, so t agrees with 3 to two digits;
    // the exact point is the normal quantile z(1 - 0.0015).
    assert_eq!(format!("{t:.1}"), "3.0");
    assert!((t - 2.967_737_925_341_78).abs() < 1e-9, "t = {t}");
    assert_eq!(wp["dim"], 1);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(model.join("level0/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["working_point"], wp);
}

#[test]
fn threshold_refuses_sum_mode() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![3, 4],
        ..Default::default()
    }
    .write(dir.path());
    let model = dir.path().join("model");
    fit_default(&manifest, &model, &[]);
    for extra in [&["--sum"][..], &["--level", "sum"], &[]] {
        let mut args = vec!["threshold", "--model", p(&model), "--fpr", "0.05"];
        args.extend_from_slice(extra);
        let o = gauss_ad(&args);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("working point undefined for sum mode"), "{}", stderr(&o));
    }
}

#[test]
fn evaluate_separated_scores_gives_unit_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let labels = dir.path().join("labels.csv");
    fs::write(&scores, "sample_id,a,sum\ntest/good/0,1.0,1.0\ntest/good/1,2.0,2.0\ntest/bad/0,3.5,3.5\ntest/bad/1,9.0,9.0\n").unwrap();
    fs::write(&labels, "sample_id,label,category\ntest/good/0,0,good\ntest/good/1,0,good\ntest/bad/0,1,bad\ntest/bad/1,1,bad\n").unwrap();
    let o = gauss_ad(&["evaluate", "--scores", p(&scores), "--labels", p(&labels)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m["auroc"].as_f64(), Some(1.0));
    assert_eq!(m["n_normal"], 2);
    assert_eq!(m["n_anomalous"], 2);
}

#[test]
fn unknown_flags_and_bad_values_exit_with_usage_code() {
    for args in [
        &["fit", "--nope"][..],
        &["frobnicate"],
        &["threshold", "--model", "x", "--fpr", "150%"],
        &["fit", "--manifest", "m", "--model", "d", "--compression", "pca:1.5"],
    ] {
        let o = gauss_ad(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with("gauss-ad: error[usage]: "), "{err}");
        assert_eq!(err.lines().count(), 1, "{err}");
    }
}

#[test]
fn help_documents_every_subcommand() {
    for sub in ["fit", "score", "threshold", "evaluate", "kfold"] {
        let o = gauss_ad(&[sub, "--help"]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("--"), "{sub}");
    }
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gauss_ad(&["fit", "--manifest", p(&dir.path().join("nope.json")), "--model", p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("gauss-ad: error[data]: "));
}

#[test]
fn anomalous_train_sample_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..20).map(|i| format!("train/good/{i}")).collect();
    let mut labels = LabelTable::new();
    for (i, id) in ids.iter().enumerate() {
        let l = if i == 13 { Label::Anomalous } else { Label::Normal };
        labels.insert(id.clone(), l, "good").unwrap();
    }
    let x = DMatrix::from_fn(20, 2, |i, j| ((i * 3 + j) as f64).sin());
    let set = FeatureSet::new("f", x, ids).unwrap();
    let manifest = write_dataset(dir.path(), "m", &[set], &labels).unwrap();
    let o = gauss_ad(&["fit", "--manifest", p(&manifest), "--model", p(&dir.path().join("model"))]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("train/good/13"), "{}", stderr(&o));
}

#[test]
fn fitting_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![5, 9],
        ..Default::default()
    }
    .write(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fit_default(&manifest, &a, &[]);
    fit_default(&manifest, &b, &[]);
    for rel in ["models.json", "level0/meta.json", "level0/chol.adfv", "level0/mean.adfv", "level1/chol.adfv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    let text = fs::read_to_string(a.join("models.json")).unwrap();
    assert!(!text.contains(p(dir.path())), "model index must not embed paths");
}

#[test]
fn npca_fit_writes_basis_and_reduced_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![12],
        ..Default::default()
    }
    .write(dir.path());
    let model = dir.path().join("model");
    fit_default(&manifest, &model, &["--compression", "npca:0.01"]);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(model.join("level0/meta.json")).unwrap()).unwrap();
    let d = meta["dim"].as_u64().unwrap() as usize;
    assert!((1..12).contains(&d), "kept {d}");
    assert_eq!(meta["input_dim"], 12);
    assert_eq!(meta["compression"], "npca:0.01");
    let basis = gauss_ad::feature_store::read_matrix(&model.join("level0/basis.adfv")).unwrap();
    assert_eq!(basis.shape(), (12, d));
    let chol = gauss_ad::feature_store::read_matrix(&model.join("level0/chol.adfv")).unwrap();
    assert_eq!(chol.shape(), (d, d));
}

#[test]
fn score_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![4, 6],
        ..Default::default()
    }
    .write(dir.path());
    let model = dir.path().join("model");
    let scores = dir.path().join("scores.csv");
    fit_default(&manifest, &model, &[]);
    let o = gauss_ad(&["score", "--manifest", p(&manifest), "--model", p(&model), "--out", p(&scores)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&scores).unwrap();
    assert!(csv.starts_with("sample_id,level0,level1,sum\n"));
    assert_eq!(csv.lines().count(), 201);

    let o = gauss_ad(&[
        "evaluate", "--scores", p(&scores), "--manifest", p(&manifest), "--column", "level1", "--fpr", "5%", "--model", p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(m["auroc"].as_f64().unwrap() > 0.95);
    let fpr = m["working_point"]["achieved_fpr"].as_f64().unwrap();
    assert!(fpr < 0.2, "achieved FPR {fpr}");

    let o = gauss_ad(&["evaluate", "--scores", p(&scores), "--manifest", p(&manifest), "--fpr", "5%", "--model", p(&model)]);
    assert_eq!(o.status.code(), Some(1), "sum column has no working point");
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Synthetic {
        dims: vec![5, 7, 3],
        ..Default::default()
    }
    .write(dir.path());
    let report = |threads: &str| {
        let out = dir.path().join(format!("r{threads}.json"));
        let o = std::process::Command::new(env!("CARGO_BIN_EXE_gauss-ad"))
            .env("GAUSS_AD_THREADS", threads)
            .args(["kfold", "--manifest", p(&manifest), "--k", "4", "--out-json", p(&out)])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    assert_eq!(report("1"), report("3"));
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_gauss-ad"))
        .env("GAUSS_AD_THREADS", "zero")
        .args(["kfold", "--manifest", p(&manifest)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
