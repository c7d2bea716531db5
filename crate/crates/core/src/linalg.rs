//! Least-squares solver shared by the normal-return models and the
//! cross-sectional regressions.

use nalgebra::{DMatrix, DVector};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch: design has {rows} rows, response has {response}")]
    DimensionMismatch { rows: usize, response: usize },

    #[error("need more rows than columns: {rows} rows, {columns} columns")]
    Underdetermined { rows: usize, columns: usize },

    #[error("rank deficient design matrix: rank {rank} < columns {columns}")]
    RankDeficient { rank: usize, columns: usize },

    #[error("design matrix contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Sum of squared residuals.
    pub ssr: f64,
    /// `(XᵀX)⁻¹`, assembled from the SVD factors.
    pub xtx_inv: DMatrix<f64>,
}

/// Numerical rank of `x` under [`RANK_TOLERANCE`].
pub fn rank(x: &DMatrix<f64>) -> usize {
    if x.is_empty() {
        return 0;
    }
    let sv = x.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count()
}

/// Ordinary least squares through a thin SVD, refusing rank-deficient designs.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares, LinalgError> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(LinalgError::DimensionMismatch { rows: n, response: y.len() });
    }
    if n < p || p == 0 {
        return Err(LinalgError::Underdetermined { rows: n, columns: p });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let max = s.max();
    let rank = s.iter().filter(|v| **v > RANK_TOLERANCE * max).count();
    if max == 0.0 || rank < p {
        return Err(LinalgError::RankDeficient { rank: if max == 0.0 { 0 } else { rank }, columns: p });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut uty = u.transpose() * y;
    for (i, val) in uty.iter_mut().enumerate() {
        *val /= s[i];
    }
    let coefficients = v_t.transpose() * uty;

    let mut scaled = v_t.transpose();
    for j in 0..p {
        let inv = 1.0 / s[j];
        scaled.column_mut(j).scale_mut(inv);
    }
    let xtx_inv = &scaled * scaled.transpose();

    let residuals = y - x * &coefficients;
    let ssr = residuals.norm_squared();
    Ok(LeastSquares {
        coefficients,
        residuals,
        ssr,
        xtx_inv,
    })
}

/// Solves a symmetric positive definite system, `None` if the factorisation fails.
pub fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.cholesky().map(|c| c.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let ls = least_squares(&x, &y).unwrap();
        assert!((ls.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((ls.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(ls.ssr < 1e-20);
        // (XᵀX)⁻¹ for this design, by hand: XᵀX = [[4,6],[6,14]], det 20
        let expected = DMatrix::from_row_slice(2, 2, &[0.7, -0.3, -0.3, 0.2]);
        assert!((ls.xtx_inv - expected).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(
            least_squares(&x, &y).unwrap_err(),
            LinalgError::RankDeficient { rank: 1, columns: 2 }
        );
        assert_eq!(rank(&x), 1);
        let zero = DMatrix::zeros(3, 2);
        assert!(matches!(least_squares(&zero, &y), Err(LinalgError::RankDeficient { rank: 0, .. })));
    }

    #[test]
    fn shape_errors() {
        let x = DMatrix::from_element(2, 3, 1.0);
        assert!(matches!(
            least_squares(&x, &DVector::zeros(2)),
            Err(LinalgError::Underdetermined { .. })
        ));
        assert!(matches!(
            least_squares(&x, &DVector::zeros(3)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }
}
