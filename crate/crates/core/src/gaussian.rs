//! Multivariate Gaussian fitting and distance scores.
//!
//! The sample covariance uses the unbiased `1/(n-1)` divisor. The Ledoit–Wolf
//! intensity is computed on the `1/n` (maximum-likelihood) covariance, as in
//! the original derivation, and then applied to the unbiased estimate:
//!
//! ```text
//! Σ_shrunk = (1 - ρ) Σ̂ + ρ · tr(Σ̂)/D · I
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::check_finite;
use crate::linalg::{center_rows, cholesky, column_means, solve_lower_in_place, symmetrize};
use crate::par::Exec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "rho")]
pub enum Shrinkage {
    /// Ledoit–Wolf closed-form intensity.
    Auto,
    Fixed(f64),
    None,
}

fn check_samples(x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() == 0 {
        return Err(Error::Empty);
    }
    if x.nrows() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: x.nrows(),
        });
    }
    check_finite(x)
}

/// Column mean and unbiased sample covariance of the rows of `x`.
pub fn fit_empirical(x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_samples(x)?;
    let mean = column_means(x);
    let centered = center_rows(x, &mean);
    let mut cov = centered.tr_mul(&centered) / (x.nrows() - 1) as f64;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Ledoit–Wolf shrinkage intensity toward the scaled identity.
///
/// With `S` the `1/n` covariance, `m = tr(S)/D`, `d² = ‖S - mI‖²_F / D` and
/// `b̄² = Σᵢ ‖xᵢxᵢᵀ - S‖²_F / (n² D)` over centered rows, the intensity is
/// `min(b̄², d²) / d²`. Constant data (`d² = 0`) gives `ρ = 1`.
pub fn ledoit_wolf_rho(x: &DMatrix<f64>) -> Result<f64> {
    check_samples(x)?;
    let mean = column_means(x);
    let centered = center_rows(x, &mean);
    Ok(ledoit_wolf_centered(&centered))
}

fn ledoit_wolf_centered(centered: &DMatrix<f64>) -> f64 {
    let (n, dim) = centered.shape();
    let nf = n as f64;
    let df = dim as f64;
    let s = centered.tr_mul(centered) / nf;
    let m = s.trace() / df;
    let s_norm2 = s.norm_squared();
    // ‖S - mI‖² = ‖S‖² - 2m tr(S) + m² D
    let d2 = ((s_norm2 - 2.0 * m * s.trace() + m * m * df) / df).max(0.0);
    if d2 <= 0.0 {
        return 1.0;
    }
    // Σᵢ ‖xᵢxᵢᵀ - S‖² = Σᵢ ‖xᵢ‖⁴ - n ‖S‖², since Σᵢ xᵢᵀ S xᵢ = n ‖S‖²
    let fourth: f64 = centered
        .row_iter()
        .map(|r| {
            let q = r.norm_squared();
            q * q
        })
        .sum();
    let b_bar2 = ((fourth - nf * s_norm2) / (nf * nf * df)).max(0.0);
    (b_bar2.min(d2) / d2).clamp(0.0, 1.0)
}

/// Fitted Gaussian with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    shrinkage: f64,
    n_fit: usize,
}

impl GaussianModel {
    /// Rebuilds a model from a persisted mean and lower Cholesky factor.
    pub fn from_factor(mean: DVector<f64>, chol: DMatrix<f64>, shrinkage: f64, n_fit: usize) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Empty);
        }
        if chol.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: chol.nrows(),
            });
        }
        for j in 0..d {
            if !(chol[(j, j)] > 0.0) {
                return Err(Error::SingularCovariance);
            }
            for i in 0..j {
                if chol[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument("Cholesky factor is not lower-triangular".into()));
                }
            }
        }
        let mut covariance = &chol * chol.transpose();
        symmetrize(&mut covariance);
        Ok(Self {
            mean,
            covariance,
            chol,
            shrinkage,
            n_fit,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Squared Mahalanobis distance via a forward solve with the Cholesky factor.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut z: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect();
        solve_lower_in_place(&self.chol, &mut z);
        Ok(z.iter().map(|v| v * v).sum())
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        self.mahalanobis_sq(x).map(f64::sqrt)
    }

    /// `ln det Σ = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let m2 = self.mahalanobis_sq(x)?;
        Ok(-0.5 * m2 - 0.5 * (self.dim() as f64 * LN_2PI + self.log_det()))
    }

    /// Mahalanobis distance of every row of `x`, in row order.
    pub fn mahalanobis_rows(&self, x: &DMatrix<f64>, exec: Exec) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        exec.try_map_range(x.nrows(), |i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            self.mahalanobis(&row)
        })
    }

    /// Maps a standard-normal vector `z` to `μ + L z`, a draw from this model.
    pub fn transform_standard(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let lz = &self.chol * DVector::from_row_slice(z);
        Ok((lz + &self.mean).iter().copied().collect())
    }
}

/// Fits a Gaussian to the rows of `x` with the requested shrinkage.
pub fn fit_gaussian(x: &DMatrix<f64>, shrinkage: Shrinkage) -> Result<GaussianModel> {
    check_samples(x)?;
    let n = x.nrows();
    let dim = x.ncols();
    let mean = column_means(x);
    let centered = center_rows(x, &mean);
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    symmetrize(&mut cov);

    let rho = match shrinkage {
        Shrinkage::Auto => ledoit_wolf_centered(&centered),
        Shrinkage::Fixed(r) if (0.0..=1.0).contains(&r) => r,
        Shrinkage::Fixed(r) => {
            return Err(Error::InvalidArgument(format!("shrinkage must lie in [0, 1], got {r}")))
        }
        Shrinkage::None => 0.0,
    };

    let scale = cov.trace() / dim as f64;
    let mut shrunk = if rho > 0.0 && scale == 0.0 {
        // constant data: the only positive-definite completion is the unit model
        DMatrix::identity(dim, dim)
    } else if rho == 0.0 {
        cov
    } else {
        let mut s = cov * (1.0 - rho);
        for i in 0..dim {
            s[(i, i)] += rho * scale;
        }
        s
    };
    symmetrize(&mut shrunk);

    let chol = match cholesky(&shrunk) {
        Some(l) => l,
        None if rho > 0.0 || shrinkage == Shrinkage::Auto => {
            let jitter = JITTER * if scale > 0.0 { scale } else { 1.0 };
            for i in 0..dim {
                shrunk[(i, i)] += jitter;
            }
            cholesky(&shrunk).ok_or(Error::SingularCovariance)?
        }
        None => return Err(Error::SingularCovariance),
    };

    Ok(GaussianModel {
        mean,
        covariance: shrunk,
        chol,
        shrinkage: rho,
        n_fit: n,
    })
}

/// Independent per-feature Gaussians: means and standard deviations (`n - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalModel {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// Optional floor `s_d ← max(s_d, ε)` applied when scoring.
    pub floor: Option<f64>,
}

pub fn fit_diagonal(x: &DMatrix<f64>) -> Result<DiagonalModel> {
    check_samples(x)?;
    let mean = column_means(x);
    let centered = center_rows(x, &mean);
    let denom = (x.nrows() - 1) as f64;
    let std = DVector::from_iterator(
        x.ncols(),
        centered.column_iter().map(|c| (c.norm_squared() / denom).sqrt()),
    );
    Ok(DiagonalModel {
        mean,
        std,
        floor: None,
    })
}

impl DiagonalModel {
    pub fn with_floor(mut self, eps: Option<f64>) -> Self {
        self.floor = eps;
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn effective_std(&self, d: usize) -> f64 {
        match self.floor {
            Some(eps) => self.std[d].max(eps),
            None => self.std[d],
        }
    }

    /// Indices whose (floored) standard deviation is zero.
    pub fn zero_variance_features(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&d| !(self.effective_std(d) > 0.0)).collect()
    }

    /// Standardized Euclidean distance to the mean.
    pub fn sed(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let zeros = self.zero_variance_features();
        if !zeros.is_empty() {
            return Err(Error::ZeroVariance(zeros));
        }
        let sum: f64 = (0..self.dim())
            .map(|d| {
                let z = (x[d] - self.mean[d]) / self.effective_std(d);
                z * z
            })
            .sum();
        Ok(sum.sqrt())
    }
}

/// Euclidean distance between `x` and `mean`.
pub fn l2(mean: &[f64], x: &[f64]) -> Result<f64> {
    if mean.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            got: x.len(),
        });
    }
    Ok(mean.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum::<f64>().sqrt())
}
