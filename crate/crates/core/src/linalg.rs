//! Small dense linear-algebra helpers shared by the fitting code.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Condition number above which a Gram matrix is treated as singular.
pub const GRAM_COND_LIMIT: f64 = 1e12;

/// Least-squares solution `X` of `A X ≈ B` with optional ridge penalty
/// `ridge · ‖X‖²` (relative to the largest scaled Gram diagonal).
///
/// Columns of `A` are equilibrated first. When the scaled Gram matrix is
/// worse conditioned than [`GRAM_COND_LIMIT`] and no ridge was requested, a
/// ridge of `1e-8` is applied with a warning.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let (n, m) = a.shape();
    if n != b.nrows() {
        return Err(Error::Validation(format!("{n} samples but {} targets", b.nrows())));
    }
    if n < m {
        return Err(Error::Validation(format!("{n} samples cannot determine {m} unknowns")));
    }
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut a_s = a.clone();
    for (j, s) in scale.iter().enumerate() {
        a_s.column_mut(j).unscale_mut(*s);
    }

    let cond = {
        let sv = (a_s.transpose() * &a_s).singular_values();
        sv.max() / sv.min()
    };
    let ridge = if ridge == 0.0 && !(cond <= GRAM_COND_LIMIT) {
        log::warn!("ill-conditioned regression (Gram condition {cond:.2e}); adding ridge 1e-8");
        1e-8
    } else {
        ridge
    };

    let x_s = if ridge == 0.0 {
        let qr = a_s.qr();
        let qtb = qr.q().transpose() * b;
        qr.r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numeric("singular triangular factor in least squares".into()))?
    } else {
        let mut gram = a_s.transpose() * &a_s;
        for i in 0..m {
            gram[(i, i)] += ridge;
        }
        let rhs = a_s.transpose() * b;
        let c = gram.clone().cholesky().ok_or_else(|| {
            Error::Numeric(format!(
                "regression Gram matrix not positive definite (condition {cond:.2e}); lower the order or rescale"
            ))
        })?;
        let sv = gram.singular_values();
        let rcond = sv.max() / sv.min();
        if !(rcond <= GRAM_COND_LIMIT) {
            return Err(Error::Numeric(format!(
                "regression Gram condition {rcond:.2e} even with ridge; lower the order or rescale the data"
            )));
        }
        c.solve(&rhs)
    };
    let mut x = x_s;
    for (j, s) in scale.iter().enumerate() {
        x.row_mut(j).unscale_mut(*s);
    }
    Ok(x)
}

/// Top `d` left singular vectors of `a` (as columns), sign-fixed so the
/// largest-magnitude entry of each is positive.
pub fn leading_left_singular(a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    // eigenvectors of A Aᵀ (k × k, small) avoid an SVD of the long dimension
    let gram = a * a.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    if d > order.len() {
        return Err(Error::Validation(format!("cannot extract {d} directions from dimension {}", order.len())));
    }
    let mut v = DMatrix::zeros(a.nrows(), d);
    for (c, &i) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        v.set_column(c, &col);
    }
    Ok(v)
}

/// Orthogonal polar factor `U Wᵀ` of `m = U Σ Wᵀ`.
pub fn polar_orthogonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

/// Gram–Schmidt (via QR) with column signs matched to the input.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            let neg = -q.column(j);
            q.set_column(j, &neg);
        }
    }
    q
}

#[derive(Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serde adapter storing matrices as `{rows, cols, data}` in row-major order.
pub mod row_major {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        RowMajor { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let r = RowMajor::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom("matrix data length does not match its shape"));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}
