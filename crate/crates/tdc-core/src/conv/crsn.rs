//! Channel-major CRSN kernel layout used by the tiled engine.
//!
//! Offset of element `(c, r, s, n)` is `((c * R + r) * S + s) * N + n`: the
//! output-channel index is fastest so that consecutive lanes of a thread
//! block read consecutive addresses. Conversion happens offline, once per
//! kernel, before entering the tiled path.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Flatten a `[C, N, R, S]` kernel tensor into the CRSN order.
pub fn kernel_to_crsn(k: &Tensor4) -> Vec<f64> {
    let [c, n, r, s] = k.dims();
    let mut out = vec![0.0; c * n * r * s];
    for ic in 0..c {
        for oc in 0..n {
            for rr in 0..r {
                for ss in 0..s {
                    out[((ic * r + rr) * s + ss) * n + oc] = k.get(ic, oc, rr, ss);
                }
            }
        }
    }
    out
}

/// Rebuild a `[C, N, R, S]` kernel tensor from a CRSN buffer.
pub fn crsn_to_kernel(data: &[f64], dims: [usize; 4]) -> Result<Tensor4> {
    let [c, n, r, s] = dims;
    if data.len() != c * n * r * s {
        return Err(Error::ShapeMismatch(format!(
            "CRSN buffer length {} does not match dims {:?}",
            data.len(),
            dims
        )));
    }
    let mut t = Tensor4::zeros(dims);
    for ic in 0..c {
        for oc in 0..n {
            for rr in 0..r {
                for ss in 0..s {
                    t.set(ic, oc, rr, ss, data[((ic * r + rr) * s + ss) * n + oc]);
                }
            }
        }
    }
    Ok(t)
}
