//! Dense Cholesky factorization and triangular solves on column-major storage.

use nalgebra::{DMatrix, DVector};

/// Lower Cholesky factor `L` with `L Lᵀ = a`, or `None` if `a` is not
/// numerically positive definite. Only the lower triangle of `a` is read;
/// the strict upper triangle of the result is zero.
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut l = a.clone();
    // left-looking, column by column
    {
        let buf = l.as_mut_slice();
        for j in 0..n {
            for k in 0..j {
                let ljk = buf[k * n + j];
                if ljk == 0.0 {
                    continue;
                }
                let (head, tail) = buf.split_at_mut(j * n);
                let col_k = &head[k * n + j..k * n + n];
                let col_j = &mut tail[j..n];
                for (dst, src) in col_j.iter_mut().zip(col_k) {
                    *dst -= ljk * src;
                }
            }
            let diag = buf[j * n + j];
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let d = diag.sqrt();
            buf[j * n + j] = d;
            for v in &mut buf[j * n + j + 1..j * n + n] {
                *v /= d;
            }
            for v in &mut buf[j * n..j * n + j] {
                *v = 0.0;
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let buf = l.as_slice();
    for j in 0..n {
        let col = &buf[j * n..j * n + n];
        let z = b[j] / col[j];
        b[j] = z;
        if z != 0.0 {
            for (dst, lij) in b[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *dst -= z * lij;
            }
        }
    }
}

/// `(a + aᵀ) / 2`, exactly symmetric.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Column means of an `n × d` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `x` with `mean` subtracted from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, m) in out.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    out
}

/// Row `i` of `x` as an owned vector.
pub fn row_vec(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}
