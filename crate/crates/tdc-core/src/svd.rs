//! Truncated singular value decomposition with a deterministic sign convention.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Result of a rank-`k` truncated SVD: `u` is `rows x k`, `v` is `cols x k`,
/// singular values are descending and nonnegative.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// Best rank-`k` factorization of `m` in the Frobenius sense.
///
/// Sign convention: the first component of each left singular vector whose
/// magnitude exceeds 1e-12 is made nonnegative (the matching right singular
/// vector is negated along with it), so factors are deterministic up to
/// degenerate spectra.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<TruncatedSvd> {
    let (rows, cols) = (m.rows(), m.cols());
    let max_rank = rows.min(cols);
    if k == 0 || k > max_rank {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} out of range 1..={max_rank} for a {rows}x{cols} matrix"
        )));
    }
    let dm = DMatrix::from_row_slice(rows, cols, m.data());
    let svd = dm
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(Error::SvdFailed)?;
    let u_full = svd.u.ok_or(Error::SvdFailed)?;
    let v_t_full = svd.v_t.ok_or(Error::SvdFailed)?;
    // nalgebra returns singular values sorted descending for `try_svd`.
    let mut u = Matrix::zeros(rows, k);
    let mut v = Matrix::zeros(cols, k);
    let mut s = Vec::with_capacity(k);
    for j in 0..k {
        s.push(svd.singular_values[j]);
        let mut flip = 1.0;
        for i in 0..rows {
            let val = u_full[(i, j)];
            if val.abs() > 1e-12 {
                if val < 0.0 {
                    flip = -1.0;
                }
                break;
            }
        }
        for i in 0..rows {
            u.set(i, j, flip * u_full[(i, j)]);
        }
        for i in 0..cols {
            v.set(i, j, flip * v_t_full[(j, i)]);
        }
    }
    Ok(TruncatedSvd {
        u,
        singular_values: s,
        v,
    })
}

impl TruncatedSvd {
    /// `u * diag(s) * v^T`, the rank-`k` approximation this decomposition encodes.
    pub fn reconstruct(&self) -> Matrix {
        let rows = self.u.rows();
        let cols = self.v.rows();
        let k = self.singular_values.len();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += self.u.get(i, l) * self.singular_values[l] * self.v.get(j, l);
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_singular_values() {
        let mut m = Matrix::zeros(3, 3);
        for i in 0..3 {
            m.set(i, i, 1.0);
        }
        let svd = truncated_svd(&m, 3).unwrap();
        for s in &svd.singular_values {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(svd.u.orthonormality_defect() < 1e-10);
        assert!(svd.v.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn rank_one_outer_product() {
        // a * b^T with |a| = 2, |b| = 3: single singular value 6, zero residual.
        let a = [0.0, 2.0, 0.0];
        let b = [1.8, 2.4, 0.0, 0.0];
        let mut m = Matrix::zeros(3, 4);
        for i in 0..3 {
            for j in 0..4 {
                m.set(i, j, a[i] * b[j]);
            }
        }
        let svd = truncated_svd(&m, 1).unwrap();
        assert!((svd.singular_values[0] - 6.0).abs() < 1e-10);
        let rec = svd.reconstruct();
        let resid: f64 = m
            .data()
            .iter()
            .zip(rec.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-10);
    }

    #[test]
    fn singular_values_descend() {
        let data: Vec<f64> = (0..20).map(|v| ((v * 7919) % 13) as f64 - 6.0).collect();
        let m = Matrix::from_vec(4, 5, data).unwrap();
        let svd = truncated_svd(&m, 4).unwrap();
        for pair in svd.singular_values.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
        assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let data: Vec<f64> = (0..12).map(|v| -(v as f64) - 1.0).collect();
        let m = Matrix::from_vec(3, 4, data).unwrap();
        let svd = truncated_svd(&m, 2).unwrap();
        for j in 0..2 {
            let first = (0..3)
                .map(|i| svd.u.get(i, j))
                .find(|v| v.abs() > 1e-12)
                .unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn rank_out_of_range() {
        let m = Matrix::zeros(3, 5);
        assert!(truncated_svd(&m, 0).is_err());
        assert!(truncated_svd(&m, 4).is_err());
    }
}
