//! Special functions behind analytic working-point calibration: log-gamma,
//! regularized incomplete gamma functions, and the chi-square distribution
//! with its inverse.
//!
//! If `x` is drawn from a D-dimensional Gaussian then its squared Mahalanobis
//! distance is chi-square distributed with D degrees of freedom, so a target
//! false-positive rate `fpr` maps to the threshold `t = sqrt(F_D^-1(1 - fpr))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tail of Stirling's series, `ln Γ(s) - [(s - ½) ln s - s + ½ ln 2π]`, for s ≥ 10.
fn stirling_tail(s: f64) -> f64 {
    let r = 1.0 / s;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0
                - r2 * (1.0 / 1680.0
                    - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360_360.0 - r2 / 156.0))))))
}

/// Natural log of the gamma function for `s > 0`.
///
/// Stirling's series with seven correction terms for `s ≥ 10`; smaller
/// arguments are shifted up with the recurrence `Γ(s+1) = s Γ(s)`.
pub fn log_gamma(s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires s > 0, got {s}")));
    }
    Ok(log_gamma_unchecked(s))
}

fn log_gamma_unchecked(s: f64) -> f64 {
    if s >= 10.0 {
        return (s - 0.5) * (s.ln() - 1.0) - 0.5 + 0.5 * LN_2PI + stirling_tail(s);
    }
    let mut prod = 1.0;
    let mut t = s;
    while t < 10.0 {
        prod *= t;
        t += 1.0;
    }
    log_gamma_unchecked(t) - prod.ln()
}

/// `u - ln(1 + u)`, accurate near zero.
fn log1pmx_neg(u: f64) -> f64 {
    if u.abs() < 0.3 {
        // Σ_{k≥2} (-1)^k u^k / k
        let mut sum = 0.0;
        let mut pow = u * u;
        let mut k = 2.0;
        loop {
            let term = pow / k;
            let signed = if (k as u64).is_multiple_of(2) { term } else { -term };
            sum += signed;
            if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() {
                break;
            }
            pow *= u;
            k += 1.0;
        }
        sum
    } else {
        u - u.ln_1p()
    }
}

/// `ln(x^s e^{-x} / Γ(s))`, the common prefactor of both incomplete gamma
/// expansions. For large `s` it is rewritten around `x = s` to avoid the
/// cancellation between `s ln x`, `x` and `ln Γ(s)`.
fn log_gamma_prefactor(s: f64, x: f64) -> f64 {
    if s >= 10.0 {
        let u = (x - s) / s;
        -s * log1pmx_neg(u) + 0.5 * (s.ln() - LN_2PI) - stirling_tail(s)
    } else {
        s * x.ln() - x - log_gamma_unchecked(s)
    }
}

const MAX_ITER: usize = 100_000;

/// Series for P(s, x); converges quickly for x < s + 1.
fn lower_series(s: f64, x: f64) -> f64 {
    let mut ap = s;
    let mut term = 1.0 / s;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON * 0.5 {
            break;
        }
    }
    (sum.ln() + log_gamma_prefactor(s, x)).exp()
}

/// Continued fraction (modified Lentz) for Q(s, x); used for x ≥ s + 1.
fn upper_continued_fraction(s: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON * 0.5 {
            break;
        }
    }
    (h.ln() + log_gamma_prefactor(s, x)).exp()
}

fn check_gamma_domain(s: f64, x: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() || !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "incomplete gamma requires s > 0 and x >= 0, got s = {s}, x = {x}"
        )));
    }
    Ok(())
}

/// Returns (P, Q) without domain checks.
fn inc_gamma_pair(s: f64, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    if x < s + 1.0 {
        let p = lower_series(s, x).min(1.0);
        (p, 1.0 - p)
    } else {
        let q = upper_continued_fraction(s, x).min(1.0);
        (1.0 - q, q)
    }
}

/// Regularized lower incomplete gamma function `P(s, x) = γ(s, x) / Γ(s)`.
pub fn reg_lower_inc_gamma(s: f64, x: f64) -> Result<f64> {
    check_gamma_domain(s, x)?;
    Ok(inc_gamma_pair(s, x).0)
}

/// Regularized upper incomplete gamma function `Q(s, x) = 1 - P(s, x)`,
/// computed directly so small tails keep their relative precision.
pub fn reg_upper_inc_gamma(s: f64, x: f64) -> Result<f64> {
    check_gamma_domain(s, x)?;
    Ok(inc_gamma_pair(s, x).1)
}

fn check_dof(k: u32) -> Result<()> {
    if k == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be >= 1".into()));
    }
    Ok(())
}

/// Chi-square density `f_k(x)`; zero for `x <= 0`.
pub fn chi2_pdf(k: u32, x: f64) -> Result<f64> {
    check_dof(k)?;
    Ok(chi2_pdf_unchecked(k, x))
}

fn chi2_pdf_unchecked(k: u32, x: f64) -> f64 {
    if !(x > 0.0) || x.is_infinite() {
        return 0.0;
    }
    // f_k(x) = ½ · (x/2)^{s-1} e^{-x/2} / Γ(s) with s = k/2
    let s = 0.5 * k as f64;
    let y = 0.5 * x;
    0.5 * (log_gamma_prefactor(s, y) - y.ln()).exp()
}

/// Chi-square CDF `F_k(x) = P(k/2, x/2)`.
pub fn chi2_cdf(k: u32, x: f64) -> Result<f64> {
    check_dof(k)?;
    reg_lower_inc_gamma(0.5 * k as f64, 0.5 * x)
}

/// Chi-square survival function `1 - F_k(x)`.
pub fn chi2_sf(k: u32, x: f64) -> Result<f64> {
    check_dof(k)?;
    reg_upper_inc_gamma(0.5 * k as f64, 0.5 * x)
}

/// Standard normal quantile (Acklam's rational approximation, ~1e-9
/// relative). Only used to seed Newton iterations.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        let q = (-2.0 * q.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail(p)
    } else if p > 1.0 - 0.02425 {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[derive(Clone, Copy)]
enum Tail {
    Lower,
    Upper,
}

/// Solves `F_k(x) = target` (lower tail) or `1 - F_k(x) = target` (upper
/// tail) by safeguarded Newton iteration on a shrinking bracket.
fn chi2_quantile(k: u32, target: f64, tail: Tail) -> Result<f64> {
    let s = 0.5 * k as f64;
    let kf = k as f64;
    // err is increasing in x for both tails
    let err = |x: f64| match tail {
        Tail::Lower => inc_gamma_pair(s, 0.5 * x).0 - target,
        Tail::Upper => target - inc_gamma_pair(s, 0.5 * x).1,
    };

    let mut lo = 0.0;
    let mut hi = kf.max(1.0) * 2.0;
    while err(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Unbounded);
        }
    }

    let mut x = if k > 1000 {
        // Wilson–Hilferty: (X/k)^{1/3} ≈ N(1 - 2/(9k), 2/(9k))
        let p = match tail {
            Tail::Lower => target,
            Tail::Upper => 1.0 - target,
        };
        let v = 2.0 / (9.0 * kf);
        let z = normal_quantile(p.clamp(1e-300, 1.0 - 1e-16));
        kf * (1.0 - v + z * v.sqrt()).max(0.0).powi(3)
    } else {
        kf
    };
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }

    let tol = 4.0 * f64::EPSILON * target.min(1.0 - target).max(f64::MIN_POSITIVE);
    for _ in 0..2000 {
        let e = err(x);
        if e == 0.0 || e.abs() <= tol {
            return Ok(x);
        }
        if e < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
        let d = chi2_pdf_unchecked(k, x);
        let newton = x - e / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Inverse chi-square CDF: the `x ≥ 0` with `F_k(x) = p`, for `p ∈ [0, 1)`.
pub fn chi2_inverse_cdf(k: u32, p: f64) -> Result<f64> {
    check_dof(k)?;
    if p == 1.0 {
        return Err(Error::Unbounded);
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("probability must lie in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p <= 0.5 {
        chi2_quantile(k, p, Tail::Lower)
    } else {
        chi2_quantile(k, 1.0 - p, Tail::Upper)
    }
}

/// Inverse survival function: the `x` with `1 - F_k(x) = q`, for `q ∈ (0, 1]`.
pub fn chi2_inverse_sf(k: u32, q: f64) -> Result<f64> {
    check_dof(k)?;
    if q == 0.0 {
        return Err(Error::Unbounded);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("tail probability must lie in (0, 1], got {q}")));
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    if q < 0.5 {
        chi2_quantile(k, q, Tail::Upper)
    } else {
        chi2_quantile(k, 1.0 - q, Tail::Lower)
    }
}

/// A decision threshold on the Mahalanobis distance for a `dim`-dimensional
/// model, chosen so normal samples exceed it with probability `target_fpr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingPoint {
    pub dim: u32,
    pub target_fpr: f64,
    pub threshold: f64,
}

pub fn threshold_for_fpr(dim: u32, fpr: f64) -> Result<WorkingPoint> {
    check_dof(dim)?;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::Domain(format!("target FPR must lie in (0, 1), got {fpr}")));
    }
    let t2 = chi2_inverse_sf(dim, fpr)?;
    Ok(WorkingPoint {
        dim,
        target_fpr: fpr,
        threshold: t2.sqrt(),
    })
}

/// `1 - F_1(n²)`: the two-sided Gaussian tail mass beyond `n` standard deviations.
pub fn sigma_tail(n: f64) -> f64 {
    inc_gamma_pair(0.5, 0.5 * n * n).1
}
