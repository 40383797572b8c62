//! Variance-based component selection.
//!
//! `PCA(q)` keeps the leading eigenvectors that together explain at least a
//! fraction `q` of the total variance. `NPCA(q)` (negated PCA) keeps the
//! trailing eigenvectors whose combined variance stays at or below `q` of the
//! total; directions that barely vary in normal data are the ones anomalies
//! tend to disturb. Both modes keep at least one component.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::fit_empirical;
use crate::linalg::{center_rows, max_asymmetry};

/// Relative slack for cumulative-variance comparisons, so selections do not
/// flip on rounding when the cut lands exactly on a boundary.
const CUT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "q")]
pub enum SelectionMode {
    Pca(f64),
    Npca(f64),
}

impl SelectionMode {
    pub fn fraction(self) -> f64 {
        match self {
            SelectionMode::Pca(q) | SelectionMode::Npca(q) => q,
        }
    }

    fn validate(self) -> Result<()> {
        let q = self.fraction();
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "variance fraction must lie in (0, 1), got {q}"
            )));
        }
        Ok(())
    }
}

/// Optional compression applied to a level before Gaussian fitting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Compression {
    #[default]
    None,
    Select(SelectionMode),
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compression::None => write!(f, "none"),
            Compression::Select(SelectionMode::Pca(q)) => write!(f, "pca:{q}"),
            Compression::Select(SelectionMode::Npca(q)) => write!(f, "npca:{q}"),
        }
    }
}

impl FromStr for Compression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Compression::None);
        }
        let (kind, q) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("compression must be none, pca:q or npca:q, got {s:?}")))?;
        let q: f64 = q
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid variance fraction {q:?}")))?;
        let mode = match kind.to_ascii_lowercase().as_str() {
            "pca" => SelectionMode::Pca(q),
            "npca" => SelectionMode::Npca(q),
            _ => return Err(Error::InvalidArgument(format!("unknown compression {kind:?}"))),
        };
        mode.validate()?;
        Ok(Compression::Select(mode))
    }
}

impl Serialize for Compression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Compression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// (as columns). Rounding-level negative eigenvalues are clipped to zero and
/// each eigenvector's largest-magnitude entry is made positive.
pub fn eigendecompose(cov: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cov.ncols(),
        });
    }
    let scale = cov.amax().max(1.0);
    let asym = max_asymmetry(cov);
    if asym > 1e-10 * scale {
        return Err(Error::Asymmetric(asym));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep the solver's order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let values = DVector::from_iterator(
        n,
        order.iter().map(|&i| {
            let v = eig.eigenvalues[i];
            if v < 0.0 && v >= -1e-12 * top {
                0.0
            } else {
                v
            }
        }),
    );
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    Ok((values, vectors))
}

/// Indices of the selected components for descending `eigenvalues`.
pub fn select_components(eigenvalues: &[f64], mode: SelectionMode) -> Result<Vec<usize>> {
    mode.validate()?;
    if eigenvalues.is_empty() {
        return Err(Error::ZeroSpectrum);
    }
    if let Some(&neg) = eigenvalues.iter().find(|v| **v < 0.0) {
        return Err(Error::NegativeEigenvalue(neg));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("eigenvalues must be sorted descending".into()));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroSpectrum);
    }
    let n = eigenvalues.len();
    match mode {
        SelectionMode::Pca(q) => {
            let goal = q * total - CUT_SLACK * total;
            let mut acc = 0.0;
            for (i, v) in eigenvalues.iter().enumerate() {
                acc += v;
                if acc >= goal {
                    return Ok((0..=i).collect());
                }
            }
            Ok((0..n).collect())
        }
        SelectionMode::Npca(q) => {
            let limit = q * total + CUT_SLACK * total;
            let mut acc = 0.0;
            let mut start = n;
            for i in (0..n).rev() {
                acc += eigenvalues[i];
                if acc > limit {
                    break;
                }
                start = i;
            }
            Ok((start.min(n - 1)..n).collect())
        }
    }
}

/// Projection onto a subset of principal directions of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub mode: SelectionMode,
    pub total_variance: f64,
    pub center: DVector<f64>,
}

impl Projection {
    /// Selects components of the unshrunk sample covariance of `x`.
    pub fn fit(x: &DMatrix<f64>, mode: SelectionMode) -> Result<Self> {
        mode.validate()?;
        let (center, cov) = fit_empirical(x)?;
        let (values, vectors) = eigendecompose(&cov)?;
        let keep = select_components(values.as_slice(), mode)?;
        let basis = vectors.select_columns(&keep);
        let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i]));
        Ok(Self {
            basis,
            eigenvalues,
            mode,
            total_variance: values.sum(),
            center,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `(x - center) · basis` for every row of `x`.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(center_rows(x, &self.center) * &self.basis)
    }

    pub fn project_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(self.center.iter()).map(|(a, c)| a - c).collect();
        Ok((0..self.output_dim())
            .map(|j| {
                self.basis
                    .column(j)
                    .iter()
                    .zip(&centered)
                    .map(|(b, v)| b * v)
                    .sum()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg_matrix(rows: usize, cols: usize, mut state: u64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 4.0, 2.0]));
        let (vals, vecs) = eigendecompose(&cov).unwrap();
        assert_eq!(vals.as_slice(), &[4.0, 2.0, 1.0]);
        assert_eq!(vecs.column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_matrix_spectrum() {
        let (vals, _) = eigendecompose(&DMatrix::zeros(4, 4)).unwrap();
        assert!(vals.iter().all(|&v| v == 0.0));
        assert!(matches!(select_components(vals.as_slice(), SelectionMode::Pca(0.5)), Err(Error::ZeroSpectrum)));
    }

    #[test]
    fn random_symmetric_reconstruction() {
        let m = lcg_matrix(6, 6, 99);
        let a = (&m + m.transpose()) * 0.5;
        let (vals, vecs) = eigendecompose(&a).unwrap();
        // dense reconstruction V Λ Vᵀ
        let mut rec = DMatrix::zeros(6, 6);
        for k in 0..6 {
            for i in 0..6 {
                for j in 0..6 {
                    rec[(i, j)] += vecs[(i, k)] * vals[k] * vecs[(j, k)];
                }
            }
        }
        assert!((rec - &a).norm() <= 1e-8 * a.norm());
        assert!((vecs.transpose() * &vecs - DMatrix::identity(6, 6)).norm() < 1e-10);
        assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn asymmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(eigendecompose(&a), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_components(&[9.0, 1.0], SelectionMode::Pca(0.9)).unwrap(), vec![0]);
        assert_eq!(select_components(&[9.0, 1.0], SelectionMode::Npca(0.1)).unwrap(), vec![1]);
        assert_eq!(select_components(&[4.0, 1.0], SelectionMode::Npca(1e-9)).unwrap(), vec![1]);
        assert_eq!(select_components(&[4.0, 1.0], SelectionMode::Pca(0.81)).unwrap(), vec![0, 1]);
        assert_eq!(select_components(&[3.0, 1.0, 1.0, 1.0], SelectionMode::Npca(0.5)).unwrap(), vec![1, 2, 3]);
        assert!(select_components(&[1.0, 2.0], SelectionMode::Pca(0.5)).is_err());
        assert!(select_components(&[2.0, -1.0], SelectionMode::Pca(0.5)).is_err());
        assert!(select_components(&[2.0, 1.0], SelectionMode::Pca(1.0)).is_err());
    }

    #[test]
    fn compression_parsing() {
        assert_eq!("none".parse::<Compression>().unwrap(), Compression::None);
        assert_eq!(
            "npca:0.01".parse::<Compression>().unwrap(),
            Compression::Select(SelectionMode::Npca(0.01))
        );
        assert_eq!("PCA:0.99".parse::<Compression>().unwrap().to_string(), "pca:0.99");
        assert!("pca:1.5".parse::<Compression>().is_err());
        assert!("pca".parse::<Compression>().is_err());
        assert!("svd:0.5".parse::<Compression>().is_err());
    }

    #[test]
    fn full_rank_projection_is_a_rotation() {
        let x = lcg_matrix(50, 4, 3);
        // q close to 1 keeps everything
        let p = Projection::fit(&x, SelectionMode::Pca(1.0 - 1e-15)).unwrap();
        assert_eq!(p.output_dim(), 4);
        let y = p.project(&x).unwrap();
        let centered = center_rows(&x, &p.center);
        // norms are preserved row by row
        for i in 0..50 {
            assert!((y.row(i).norm() - centered.row(i).norm()).abs() < 1e-12);
        }
        let center: Vec<f64> = p.center.iter().copied().collect();
        assert!(p.project_vec(&center).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn identity_basis_only_centers() {
        let x = lcg_matrix(5, 3, 8);
        let p = Projection {
            basis: DMatrix::identity(3, 3),
            eigenvalues: DVector::from_element(3, 1.0),
            mode: SelectionMode::Pca(0.99),
            total_variance: 3.0,
            center: DVector::from_row_slice(&[0.5, -1.0, 2.0]),
        };
        let y = p.project(&x).unwrap();
        assert_eq!(y, center_rows(&x, &p.center));
        assert!(p.project(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn projected_variance_equals_eigenvalue() {
        let mut x = lcg_matrix(200, 6, 17);
        for i in 0..200 {
            let v = x[(i, 0)];
            x[(i, 2)] += 2.0 * v;
            x[(i, 5)] *= 0.01;
        }
        for mode in [SelectionMode::Pca(0.9), SelectionMode::Npca(0.05)] {
            let p = Projection::fit(&x, mode).unwrap();
            assert!((p.basis.transpose() * &p.basis - DMatrix::identity(p.output_dim(), p.output_dim())).norm() < 1e-10);
            let y = p.project(&x).unwrap();
            for j in 0..p.output_dim() {
                let col = y.column(j);
                let mean = col.sum() / 200.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0;
                assert!((var - p.eigenvalues[j]).abs() <= 1e-8 * p.eigenvalues[j], "{mode:?} j={j}");
            }
        }
    }

    proptest! {
        #[test]
        fn selection_is_scale_invariant(
            mut vals in proptest::collection::vec(0.0f64..100.0, 1..20),
            scale in 1e-6f64..1e6,
            q in 0.001f64..0.999,
        ) {
            vals.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(vals.iter().sum::<f64>() > 0.0);
            let scaled: Vec<f64> = vals.iter().map(|v| v * scale).collect();
            for mode in [SelectionMode::Pca(q), SelectionMode::Npca(q)] {
                prop_assert_eq!(
                    select_components(&vals, mode).unwrap(),
                    select_components(&scaled, mode).unwrap()
                );
            }
        }

        #[test]
        fn pca_and_npca_partition_at_exact_cuts(
            mut vals in proptest::collection::btree_set(1u32..1000, 2..15),
            cut_frac in 0.0f64..1.0,
        ) {
            let mut v: Vec<f64> = std::mem::take(&mut vals).into_iter().map(f64::from).collect();
            v.reverse();
            let cut = 1 + ((v.len() - 1) as f64 * cut_frac) as usize;
            let cut = cut.min(v.len() - 1);
            let total: f64 = v.iter().sum();
            let head: f64 = v[..cut].iter().sum();
            let q = head / total;
            let pca = select_components(&v, SelectionMode::Pca(q)).unwrap();
            let npca = select_components(&v, SelectionMode::Npca(1.0 - q)).unwrap();
            prop_assert_eq!(pca, (0..cut).collect::<Vec<_>>());
            prop_assert_eq!(npca, (cut..v.len()).collect::<Vec<_>>());
        }
    }
}
