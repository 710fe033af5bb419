//! Direct reference convolution and the three-stage Tucker-format pipeline.
//!
//! Both engines are plain nested loops in f64, used as semantic ground truth
//! and as multiplication counters for work accounting. The reference fetch
//! zero-pads out-of-bounds taps but still performs the multiply, so the
//! counted multiplications match the dense work formula
//! `2 * H' * W' * C * N * R * S / 2` regardless of padding.

use crate::conv::{ConvShape, FeatureMap, Layout};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;
use crate::tucker::TuckerFactors;

fn check_input(x: &FeatureMap, shape: &ConvShape) -> Result<FeatureMap> {
    if (x.channels(), x.height(), x.width()) != (shape.c, shape.h, shape.w) {
        return Err(Error::ShapeMismatch(format!(
            "input map ({},{},{}) does not match conv shape ({},{},{})",
            x.channels(),
            x.height(),
            x.width(),
            shape.c,
            shape.h,
            shape.w
        )));
    }
    Ok(x.convert(Layout::Chw))
}

/// Direct convolution, sliding-window form. Returns a CHW map with
/// `N x out_h x out_w` extent and adds every executed multiplication to
/// `mults`.
pub fn conv2d_ref_counted(
    x: &FeatureMap,
    k: &Tensor4,
    shape: &ConvShape,
    mults: &mut u64,
) -> Result<FeatureMap> {
    let x = check_input(x, shape)?;
    if k.dims() != [shape.c, shape.n, shape.r, shape.s] {
        return Err(Error::ShapeMismatch(format!(
            "kernel dims {:?} do not match conv shape {:?}",
            k.dims(),
            shape
        )));
    }
    let (oh, ow) = (shape.out_h(), shape.out_w());
    let mut y = FeatureMap::zeros(Layout::Chw, shape.n, oh, ow);
    for oc in 0..shape.n {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ic in 0..shape.c {
                    for rr in 0..shape.r {
                        for ss in 0..shape.s {
                            let gi = (i * shape.stride + rr) as isize - shape.pad as isize;
                            let gj = (j * shape.stride + ss) as isize - shape.pad as isize;
                            let v = if gi >= 0
                                && gj >= 0
                                && (gi as usize) < shape.h
                                && (gj as usize) < shape.w
                            {
                                x.get(ic, gi as usize, gj as usize)
                            } else {
                                0.0
                            };
                            acc += v * k.get(ic, oc, rr, ss);
                            *mults += 1;
                        }
                    }
                }
                y.set(oc, i, j, acc);
            }
        }
    }
    Ok(y)
}

pub fn conv2d_ref(x: &FeatureMap, k: &Tensor4, shape: &ConvShape) -> Result<FeatureMap> {
    let mut mults = 0;
    conv2d_ref_counted(x, k, shape, &mut mults)
}

/// Three-stage convolution in Tucker format: a 1x1 channel projection onto
/// `d1` channels, the small `d1 -> d2` core convolution, and a 1x1 expansion
/// back to `N` channels. Multiplications of all three stages accumulate into
/// `mults`.
pub fn tucker_conv_counted(
    x: &FeatureMap,
    f: &TuckerFactors,
    shape: &ConvShape,
    mults: &mut u64,
) -> Result<FeatureMap> {
    let x = check_input(x, shape)?;
    let [c, n, r, s] = f.kernel_dims();
    if (c, n, r, s) != (shape.c, shape.n, shape.r, shape.s) {
        return Err(Error::ShapeMismatch(format!(
            "factor kernel dims {:?} do not match conv shape {:?}",
            f.kernel_dims(),
            shape
        )));
    }
    let (d1, d2) = (f.d1(), f.d2());

    // Stage 1: z1[a,i,j] = sum_c u1[c,a] x[c,i,j]  (a 1x1 convolution).
    let mut z1 = FeatureMap::zeros(Layout::Chw, d1, shape.h, shape.w);
    for a in 0..d1 {
        for i in 0..shape.h {
            for j in 0..shape.w {
                let mut acc = 0.0;
                for ic in 0..c {
                    acc += f.u1.get(ic, a) * x.get(ic, i, j);
                    *mults += 1;
                }
                z1.set(a, i, j, acc);
            }
        }
    }

    // Stage 2: the core convolution, d1 -> d2 channels with the RxS core.
    let core_shape = ConvShape {
        c: d1,
        n: d2,
        ..*shape
    };
    let z2 = conv2d_ref_counted(&z1, &f.core, &core_shape, mults)?;

    // Stage 3: y[n,i,j] = sum_b u2[n,b] z2[b,i,j]  (a 1x1 expansion).
    let (oh, ow) = (shape.out_h(), shape.out_w());
    let mut y = FeatureMap::zeros(Layout::Chw, n, oh, ow);
    for oc in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for b in 0..d2 {
                    acc += f.u2.get(oc, b) * z2.get(b, i, j);
                    *mults += 1;
                }
                y.set(oc, i, j, acc);
            }
        }
    }
    Ok(y)
}

pub fn tucker_conv(x: &FeatureMap, f: &TuckerFactors, shape: &ConvShape) -> Result<FeatureMap> {
    let mut mults = 0;
    tucker_conv_counted(x, f, shape, &mut mults)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tucker::{tucker2_decompose, tucker2_reconstruct};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::from_vec(Layout::Chw, c, h, w, data).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
        let len = dims.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let shape = ConvShape::same(5, 4, 1, 1, 3).unwrap();
        let mut k = Tensor4::zeros([1, 1, 3, 3]);
        k.set(0, 0, 1, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 1, 5, 4);
        let y = conv2d_ref(&x, &k, &shape).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn mult_count_is_dense_work() {
        let shape = ConvShape::new(6, 5, 3, 4, 3, 3, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_map(&mut rng, 3, 6, 5);
        let k = random_kernel(&mut rng, [3, 4, 3, 3]);
        let mut mults = 0;
        conv2d_ref_counted(&x, &k, &shape, &mut mults).unwrap();
        let expect = (shape.out_h() * shape.out_w() * 3 * 4 * 3 * 3) as u64;
        assert_eq!(mults, expect);
    }

    #[test]
    fn tucker_conv_matches_direct_conv_with_reconstructed_kernel() {
        let shape = ConvShape::same(6, 6, 6, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(&mut rng, 6, 6, 6);
        let k = random_kernel(&mut rng, [6, 5, 3, 3]);
        let f = tucker2_decompose(&k, 3, 3).unwrap();
        let khat = tucker2_reconstruct(&f);
        let via_stages = tucker_conv(&x, &f, &shape).unwrap();
        let via_direct = conv2d_ref(&x, &khat, &shape).unwrap();
        assert!(via_stages.max_abs_diff(&via_direct).unwrap() < 1e-10);
    }

    #[test]
    fn tucker_conv_at_full_rank_matches_original_kernel() {
        let shape = ConvShape::same(5, 5, 4, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_map(&mut rng, 4, 5, 5);
        let k = random_kernel(&mut rng, [4, 4, 3, 3]);
        let f = tucker2_decompose(&k, 4, 4).unwrap();
        let via_stages = tucker_conv(&x, &f, &shape).unwrap();
        let via_direct = conv2d_ref(&x, &k, &shape).unwrap();
        assert!(via_stages.max_abs_diff(&via_direct).unwrap() < 1e-9);
    }

    #[test]
    fn tucker_mult_count_matches_three_stage_formula() {
        let shape = ConvShape::same(7, 6, 6, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_map(&mut rng, 6, 7, 6);
        let k = random_kernel(&mut rng, [6, 5, 3, 3]);
        let f = tucker2_decompose(&k, 2, 3).unwrap();
        let mut mults = 0;
        tucker_conv_counted(&x, &f, &shape, &mut mults).unwrap();
        let (h, w, oh, ow) = (7u64, 6u64, 7u64, 6u64);
        let expect = h * w * 6 * 2 + oh * ow * 2 * 3 * 9 + oh * ow * 3 * 5;
        assert_eq!(mults, expect);
    }
}
