//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Fails with `RankDeficient` when the smallest singular value of `x` is below
/// `rows · ε · σ_max`.
pub fn check_rank(x: &DMatrix<f64>, context: &str) -> Result<()> {
    if x.ncols() == 0 || x.nrows() < x.ncols() {
        return Err(Error::RankDeficient { context: context.to_string(), min_sv: 0.0 });
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    let tol = x.nrows() as f64 * f64::EPSILON * max;
    if !(min > tol) {
        return Err(Error::RankDeficient { context: context.to_string(), min_sv: min });
    }
    Ok(())
}

/// Thin-QR factor `R` and `Q'y` for a full-column-rank `x`.
fn qr_parts(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    (r, q.transpose() * y)
}

/// Least squares via Householder QR, after a rank check.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    check_rank(x, context)?;
    let (r, qty) = qr_parts(x, y);
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { context: context.to_string(), min_sv: 0.0 })
}

/// `(X'X)⁻¹` computed from the QR factor of `X`.
pub fn gram_inverse(x: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    check_rank(x, context)?;
    let r = x.clone().qr().r();
    let k = r.ncols();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient { context: context.to_string(), min_sv: 0.0 })?;
    Ok(&r_inv * r_inv.transpose())
}

/// Inverse of a small square matrix, rank-checked.
pub fn inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    check_rank(a, context)?;
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient { context: context.to_string(), min_sv: 0.0 })
}

/// A factor `L` with `L L' = a` for a symmetric positive semi-definite `a`.
/// Negative eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut l = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Sandwich `bread · (Σ eᵢ² aᵢ aᵢ') · bread'` with rows `aᵢ` of `design`.
pub fn sandwich(bread: &DMatrix<f64>, design: &DMatrix<f64>, resid: &[f64]) -> DMatrix<f64> {
    let k = design.ncols();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for (i, &e) in resid.iter().enumerate() {
        let row = design.row(i);
        let w = e * e;
        for a in 0..k {
            let ra = row[a] * w;
            for b in a..k {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    bread * meat * bread.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let b = lstsq(&x, &y, "t").unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(check_rank(&x, "t"), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn psd_sqrt_reconstructs_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let l = psd_sqrt(&a);
        assert!((&l * l.transpose() - a).abs().max() < 1e-12);
    }

    #[test]
    fn gram_inverse_matches_direct_inverse() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, 1.5, 1.0, -2.0, 1.0, 3.0]);
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((gram_inverse(&x, "t").unwrap() - direct).abs().max() < 1e-12);
    }
}
