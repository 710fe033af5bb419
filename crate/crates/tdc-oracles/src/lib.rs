//! Independent reference oracles for the test suites.
//!
//! Everything in this crate is written against plain `&[f64]` slices and has no
//! dependency on `tdc-core`, so the oracles cannot accidentally share a code path
//! with the implementations they are meant to check.

/// Naive direct 2-D convolution (cross-correlation convention), batch size 1.
///
/// * `x` is a `C x H x W` feature map, row-major (`x[c][i][j]` at `c*H*W + i*W + j`).
/// * `k` is a `C x N x R x S` kernel, row-major.
/// * Returns an `N x H' x W'` map with `H' = (H + 2*pad - R) / stride + 1` and
///   `W' = (W + 2*pad - S) / stride + 1`.
///
/// Out-of-bounds input positions contribute zero (no multiply is performed, unlike
/// the production engine which multiplies by an explicit zero; results agree).
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    k: &[f64],
    h: usize,
    w: usize,
    c: usize,
    n: usize,
    r: usize,
    s: usize,
    pad: usize,
    stride: usize,
) -> Vec<f64> {
    assert_eq!(x.len(), c * h * w, "input length mismatch");
    assert_eq!(k.len(), c * n * r * s, "kernel length mismatch");
    assert!(stride >= 1);
    let h_out = (h + 2 * pad - r) / stride + 1;
    let w_out = (w + 2 * pad - s) / stride + 1;
    let mut y = vec![0.0; n * h_out * w_out];
    for oc in 0..n {
        for i in 0..h_out {
            for j in 0..w_out {
                let mut acc = 0.0;
                for ic in 0..c {
                    for rr in 0..r {
                        let ii = (i * stride + rr) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for ss in 0..s {
                            let jj = (j * stride + ss) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xv = x[ic * h * w + ii as usize * w + jj as usize];
                            let kv = k[((ic * n + oc) * r + rr) * s + ss];
                            acc += xv * kv;
                        }
                    }
                }
                y[oc * h_out * w_out + i * w_out + j] = acc;
            }
        }
    }
    y
}

/// Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// `a` is `n x n` row-major and must be symmetric. Returns `(eigenvalues, eigenvectors)`
/// with eigenvalues sorted descending and eigenvectors as columns of the returned
/// row-major `n x n` matrix (column `j` pairs with eigenvalue `j`).
pub fn jacobi_eigen_symmetric(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 * frobenius(&m, n).max(1.0) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                // Rotate rows/columns p and q of m.
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = cos * mip - sin * miq;
                    m[i * n + q] = sin * mip + cos * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = cos * mpj - sin * mqj;
                    m[q * n + j] = sin * mpj + cos * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = cos * vip - sin * viq;
                    v[i * n + q] = sin * vip + cos * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigvecs = vec![0.0; n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            eigvecs[i * n + new_j] = v[i * n + old_j];
        }
    }
    (eigvals, eigvecs)
}

fn frobenius(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n * n {
        s += m[i] * m[i];
    }
    s.sqrt()
}

/// All singular values of a `rows x cols` row-major matrix, descending, computed
/// from the Jacobi eigen-decomposition of the Gram matrix on the smaller side.
pub fn singular_values(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(m.len(), rows * cols);
    let k = rows.min(cols);
    // Gram matrix on the smaller side keeps the eigenproblem as small as possible.
    let (gram, dim) = if rows <= cols {
        // M * M^T, rows x rows
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in i..rows {
                let mut acc = 0.0;
                for l in 0..cols {
                    acc += m[i * cols + l] * m[j * cols + l];
                }
                g[i * rows + j] = acc;
                g[j * rows + i] = acc;
            }
        }
        (g, rows)
    } else {
        // M^T * M, cols x cols
        let mut g = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in i..cols {
                let mut acc = 0.0;
                for l in 0..rows {
                    acc += m[l * cols + i] * m[l * cols + j];
                }
                g[i * cols + j] = acc;
                g[j * cols + i] = acc;
            }
        }
        (g, cols)
    };
    let (eigvals, _) = jacobi_eigen_symmetric(&gram, dim);
    eigvals.iter().take(k).map(|&l| l.max(0.0).sqrt()).collect()
}

/// Sum of squared singular values with index >= `keep` (0-based), i.e. the squared
/// Frobenius error of the best rank-`keep` approximation.
pub fn tail_energy(m: &[f64], rows: usize, cols: usize, keep: usize) -> f64 {
    let sv = singular_values(m, rows, cols);
    sv.iter().skip(keep).map(|&s| s * s).sum()
}
