//! Tucker-2 decomposition of convolution kernels via truncated HOSVD.
//!
//! A kernel `K` of shape `(C, N, R, S)` factors into `u1 (C x D1)`, `u2 (N x D2)`
//! and a core tensor of shape `(D1, D2, R, S)`. The filter modes are never
//! decomposed; only the channel modes carry ranks.

use crate::error::{Error, Result};
use crate::svd::truncated_svd;
use crate::tensor::{mode_n_matricize, Matrix, Tensor4};

/// Tucker-2 factors of a `(C, N, R, S)` kernel.
#[derive(Debug, Clone)]
pub struct TuckerFactors {
    /// Input-channel factor, `C x D1`, orthonormal columns.
    pub u1: Matrix,
    /// Output-channel factor, `N x D2`, orthonormal columns.
    pub u2: Matrix,
    /// Core tensor, `(D1, D2, R, S)`.
    pub core: Tensor4,
}

impl TuckerFactors {
    /// Assemble factors from parts, validating shapes and (loosely) column
    /// orthonormality.
    pub fn from_parts(u1: Matrix, u2: Matrix, core: Tensor4) -> Result<Self> {
        let [d1, d2, _, _] = core.dims();
        if u1.cols() != d1 || u2.cols() != d2 {
            return Err(Error::ShapeMismatch(format!(
                "factor columns ({}, {}) do not match core channel dims ({d1}, {d2})",
                u1.cols(),
                u2.cols()
            )));
        }
        if u1.cols() > u1.rows() || u2.cols() > u2.rows() {
            return Err(Error::InvalidArgument(
                "factor rank exceeds the matching kernel dimension".into(),
            ));
        }
        if u1.orthonormality_defect() > 1e-6 || u2.orthonormality_defect() > 1e-6 {
            return Err(Error::InvalidArgument(
                "factor columns are not orthonormal within 1e-6".into(),
            ));
        }
        Ok(Self { u1, u2, core })
    }

    pub fn d1(&self) -> usize {
        self.u1.cols()
    }

    pub fn d2(&self) -> usize {
        self.u2.cols()
    }

    /// `(C, N, R, S)` of the kernel these factors reconstruct.
    pub fn kernel_dims(&self) -> [usize; 4] {
        let [_, _, r, s] = self.core.dims();
        [self.u1.rows(), self.u2.rows(), r, s]
    }
}

/// Truncated-HOSVD Tucker-2 decomposition: `u1`/`u2` are the top `d1`/`d2` left
/// singular vectors of the mode-0/mode-1 matricizations, and the core is the
/// kernel contracted with both factor transposes.
pub fn tucker2_decompose(k: &Tensor4, d1: usize, d2: usize) -> Result<TuckerFactors> {
    let [c, n, r, s] = k.dims();
    if d1 == 0 || d1 > c {
        return Err(Error::InvalidArgument(format!(
            "rank d1={d1} out of range 1..={c}"
        )));
    }
    if d2 == 0 || d2 > n {
        return Err(Error::InvalidArgument(format!(
            "rank d2={d2} out of range 1..={n}"
        )));
    }
    let m1 = mode_n_matricize(k, 0)?;
    let m2 = mode_n_matricize(k, 1)?;
    let u1 = truncated_svd(&m1, d1)?.u;
    let u2 = truncated_svd(&m2, d2)?.u;

    // core[a,b,rr,ss] = sum_{cc,nn} u1[cc,a] * u2[nn,b] * k[cc,nn,rr,ss],
    // contracted one mode at a time.
    let mut tmp = Tensor4::zeros([d1, n, r, s]);
    for a in 0..d1 {
        for nn in 0..n {
            for rr in 0..r {
                for ss in 0..s {
                    let mut acc = 0.0;
                    for cc in 0..c {
                        acc += u1.get(cc, a) * k.get(cc, nn, rr, ss);
                    }
                    tmp.set(a, nn, rr, ss, acc);
                }
            }
        }
    }
    let mut core = Tensor4::zeros([d1, d2, r, s]);
    for a in 0..d1 {
        for b in 0..d2 {
            for rr in 0..r {
                for ss in 0..s {
                    let mut acc = 0.0;
                    for nn in 0..n {
                        acc += u2.get(nn, b) * tmp.get(a, nn, rr, ss);
                    }
                    core.set(a, b, rr, ss, acc);
                }
            }
        }
    }
    Ok(TuckerFactors { u1, u2, core })
}

/// Expand factors back to a full `(C, N, R, S)` kernel:
/// `k[c,n,r,s] = sum_{a,b} core[a,b,r,s] * u1[c,a] * u2[n,b]`.
pub fn tucker2_reconstruct(f: &TuckerFactors) -> Tensor4 {
    let [d1, d2, r, s] = f.core.dims();
    let c = f.u1.rows();
    let n = f.u2.rows();
    let mut tmp = Tensor4::zeros([c, d2, r, s]);
    for cc in 0..c {
        for b in 0..d2 {
            for rr in 0..r {
                for ss in 0..s {
                    let mut acc = 0.0;
                    for a in 0..d1 {
                        acc += f.u1.get(cc, a) * f.core.get(a, b, rr, ss);
                    }
                    tmp.set(cc, b, rr, ss, acc);
                }
            }
        }
    }
    let mut out = Tensor4::zeros([c, n, r, s]);
    for cc in 0..c {
        for nn in 0..n {
            for rr in 0..r {
                for ss in 0..s {
                    let mut acc = 0.0;
                    for b in 0..d2 {
                        acc += f.u2.get(nn, b) * tmp.get(cc, b, rr, ss);
                    }
                    out.set(cc, nn, rr, ss, acc);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;

    fn separable_kernel(c: usize, n: usize, r: usize, s: usize) -> Tensor4 {
        // k[cc,nn,rr,ss] = a[cc] * b[nn] * g[rr,ss]
        let a: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
        let mut k = Tensor4::zeros([c, n, r, s]);
        for cc in 0..c {
            for nn in 0..n {
                for rr in 0..r {
                    for ss in 0..s {
                        let g = (rr * s + ss) as f64 * 0.25 + 1.0;
                        k.set(cc, nn, rr, ss, a[cc] * b[nn] * g);
                    }
                }
            }
        }
        k
    }

    fn pseudo_random_kernel(dims: [usize; 4], seed: u64) -> Tensor4 {
        let len: usize = dims.iter().product();
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).max(1);
        let data: Vec<f64> = (0..len)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 10_000) as f64 / 5_000.0 - 1.0
            })
            .collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    #[test]
    fn separable_kernel_is_rank_one() {
        let k = separable_kernel(4, 3, 2, 2);
        let f = tucker2_decompose(&k, 1, 1).unwrap();
        let rec = tucker2_reconstruct(&f);
        assert!(relative_error(&k, &rec).unwrap() < 1e-6);
    }

    #[test]
    fn full_rank_round_trip_is_identity() {
        let k = pseudo_random_kernel([5, 4, 3, 3], 7);
        let f = tucker2_decompose(&k, 5, 4).unwrap();
        let rec = tucker2_reconstruct(&f);
        assert!(relative_error(&k, &rec).unwrap() < 1e-5);
        assert!(f.u1.orthonormality_defect() < 1e-6);
        assert!(f.u2.orthonormality_defect() < 1e-6);
    }

    #[test]
    fn zero_core_reconstructs_zero() {
        let k = pseudo_random_kernel([3, 3, 2, 2], 11);
        let mut f = tucker2_decompose(&k, 2, 2).unwrap();
        f.core = Tensor4::zeros(f.core.dims());
        let rec = tucker2_reconstruct(&f);
        assert!(rec.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_enumerated_reconstruction() {
        // 2x2x1x1: k[c,n] = sum_{a,b} core[a,b] * u1[c,a] * u2[n,b] with
        // u1 = [[1,0],[0,1]], u2 = [[0,1],[1,0]], core = [[1,2],[3,4]].
        let u1 = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let u2 = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let core = Tensor4::from_vec([2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = TuckerFactors::from_parts(u1, u2, core).unwrap();
        let rec = tucker2_reconstruct(&f);
        // k[0,0] = core[0,1] = 2, k[0,1] = core[0,0] = 1,
        // k[1,0] = core[1,1] = 4, k[1,1] = core[1,0] = 3.
        assert_eq!(rec.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let k = Tensor4::zeros([4, 3, 2, 2]);
        assert!(tucker2_decompose(&k, 0, 1).is_err());
        assert!(tucker2_decompose(&k, 5, 1).is_err());
        assert!(tucker2_decompose(&k, 1, 4).is_err());
    }

    #[test]
    fn from_parts_rejects_non_orthonormal_factor() {
        let u1 = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let u2 = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let core = Tensor4::zeros([2, 2, 1, 1]);
        assert!(TuckerFactors::from_parts(u1, u2, core).is_err());
    }
}
