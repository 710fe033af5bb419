//! A two-conv CNN for the synthetic bar task with hand-derived
//! backpropagation: conv(1->8, 3x3, same) -> rectifier -> 2x2 average pool
//! -> conv(8->16, 3x3, same) -> rectifier -> 2x2 average pool ->
//! linear(64->4). Loss is mean softmax cross-entropy over the batch.
//!
//! Everything is f64 and strictly sequential, so identical inputs always
//! produce bit-identical losses and gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{ToyDataset, CLASSES, IMG};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};
use crate::tucker::{tucker2_reconstruct, TuckerFactors};

pub const C1_OUT: usize = 8;
pub const C2_OUT: usize = 16;
pub const KSIZE: usize = 3;
const PAD: usize = 1;
const P1: usize = IMG / 2;
const P2: usize = IMG / 4;
pub const FLAT: usize = C2_OUT * P2 * P2;

#[derive(Debug, Clone)]
pub struct ConvParams {
    /// Kernel indexed (input channel, output channel, row, col).
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyCnn {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    /// CLASSES x FLAT.
    pub linear_w: Matrix,
    pub linear_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub conv1_k: Tensor4,
    pub conv1_b: Vec<f64>,
    pub conv2_k: Tensor4,
    pub conv2_b: Vec<f64>,
    pub linear_w: Matrix,
    pub linear_b: Vec<f64>,
}

impl ToyCnn {
    /// Seeded uniform init scaled by fan-in; biases start at zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |dims: [usize; 4], fan_in: usize| {
            let a = (1.0 / fan_in as f64).sqrt();
            let len: usize = dims.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-a..a)).collect();
            Tensor4::from_vec(dims, data).expect("init tensor")
        };
        let conv1_k = draw([1, C1_OUT, KSIZE, KSIZE], KSIZE * KSIZE);
        let conv2_k = draw([C1_OUT, C2_OUT, KSIZE, KSIZE], C1_OUT * KSIZE * KSIZE);
        let a = (1.0 / FLAT as f64).sqrt();
        let w: Vec<f64> = (0..CLASSES * FLAT).map(|_| rng.gen_range(-a..a)).collect();
        ToyCnn {
            conv1: ConvParams {
                kernel: conv1_k,
                bias: vec![0.0; C1_OUT],
            },
            conv2: ConvParams {
                kernel: conv2_k,
                bias: vec![0.0; C2_OUT],
            },
            linear_w: Matrix::from_vec(CLASSES, FLAT, w).expect("init linear"),
            linear_b: vec![0.0; CLASSES],
        }
    }

    /// Copy with the named kernels replaced by their Tucker reconstructions.
    pub fn with_projected(
        &self,
        factors: &std::collections::BTreeMap<String, TuckerFactors>,
    ) -> Result<ToyCnn> {
        let mut out = self.clone();
        for (name, f) in factors {
            let target = match name.as_str() {
                "conv1" => &mut out.conv1.kernel,
                "conv2" => &mut out.conv2.kernel,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown layer '{other}' (have conv1, conv2)"
                    )))
                }
            };
            let rebuilt = tucker2_reconstruct(f);
            if rebuilt.dims() != target.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "factors for {name} rebuild {:?}, kernel is {:?}",
                    rebuilt.dims(),
                    target.dims()
                )));
            }
            *target = rebuilt;
        }
        Ok(out)
    }
}

fn at(ch: usize, i: usize, j: usize, h: usize, w: usize) -> usize {
    (ch * h + i) * w + j
}

/// Same-padded stride-1 correlation of a multi-channel map.
fn conv_fwd(x: &[f64], cin: usize, h: usize, w: usize, p: &ConvParams) -> Vec<f64> {
    let cout = p.bias.len();
    let mut y = vec![0.0; cout * h * w];
    for n in 0..cout {
        for i in 0..h {
            for j in 0..w {
                let mut acc = p.bias[n];
                for c in 0..cin {
                    for r in 0..KSIZE {
                        let ii = i + r;
                        if ii < PAD || ii - PAD >= h {
                            continue;
                        }
                        for s in 0..KSIZE {
                            let jj = j + s;
                            if jj < PAD || jj - PAD >= w {
                                continue;
                            }
                            acc += x[at(c, ii - PAD, jj - PAD, h, w)] * p.kernel.get(c, n, r, s);
                        }
                    }
                }
                y[at(n, i, j, h, w)] = acc;
            }
        }
    }
    y
}

/// 2x2 average pool with stride 2.
fn pool_fwd(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let sum = x[at(ch, 2 * i, 2 * j, h, w)]
                    + x[at(ch, 2 * i, 2 * j + 1, h, w)]
                    + x[at(ch, 2 * i + 1, 2 * j, h, w)]
                    + x[at(ch, 2 * i + 1, 2 * j + 1, h, w)];
                y[at(ch, i, j, oh, ow)] = sum / 4.0;
            }
        }
    }
    y
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

struct SampleCache {
    z1: Vec<f64>,
    p1: Vec<f64>,
    z2: Vec<f64>,
    flat: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_sample(model: &ToyCnn, img: &[f64]) -> SampleCache {
    let z1 = conv_fwd(img, 1, IMG, IMG, &model.conv1);
    let p1 = pool_fwd(&relu(&z1), C1_OUT, IMG, IMG);
    let z2 = conv_fwd(&p1, C1_OUT, P1, P1, &model.conv2);
    let flat = pool_fwd(&relu(&z2), C2_OUT, P1, P1);
    let mut logits = model.linear_b.clone();
    for (k, logit) in logits.iter_mut().enumerate() {
        for (f, &v) in flat.iter().enumerate() {
            *logit += model.linear_w.get(k, f) * v;
        }
    }
    SampleCache {
        z1,
        p1,
        z2,
        flat,
        logits,
    }
}

/// Stable softmax probabilities.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

fn check_batch(images: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    for img in images {
        if img.len() != IMG * IMG {
            return Err(Error::ShapeMismatch(format!(
                "image has {} pixels, expected {}",
                img.len(),
                IMG * IMG
            )));
        }
    }
    for &l in labels {
        if l >= CLASSES {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range (classes {CLASSES})"
            )));
        }
    }
    Ok(())
}

/// Negative log-probability of the label, floored away from -ln(0) but
/// preserving NaN so a diverged run is detectable.
fn nll(p: &[f64], label: usize) -> f64 {
    let pl = p[label];
    if pl.is_nan() {
        return f64::NAN;
    }
    -pl.max(1e-300).ln()
}

/// Mean cross-entropy over the batch, forward pass only.
pub fn batch_loss(model: &ToyCnn, images: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_batch(images, labels)?;
    let mut loss = 0.0;
    for (img, &label) in images.iter().zip(labels) {
        let cache = forward_sample(model, img);
        let p = softmax(&cache.logits);
        loss += nll(&p, label);
    }
    Ok(loss / images.len() as f64)
}

fn zero_grads() -> Grads {
    Grads {
        conv1_k: Tensor4::zeros([1, C1_OUT, KSIZE, KSIZE]),
        conv1_b: vec![0.0; C1_OUT],
        conv2_k: Tensor4::zeros([C1_OUT, C2_OUT, KSIZE, KSIZE]),
        conv2_b: vec![0.0; C2_OUT],
        linear_w: Matrix::zeros(CLASSES, FLAT),
        linear_b: vec![0.0; CLASSES],
    }
}

/// Loss and parameter gradients of a single sample.
fn backward_sample(model: &ToyCnn, img: &[f64], label: usize) -> (f64, Grads) {
    let mut g = zero_grads();
    let cache = forward_sample(model, img);
    let p = softmax(&cache.logits);
    let loss = nll(&p, label);

    // d loss_sample / d logits.
    let mut dlog = p;
    dlog[label] -= 1.0;

        // Linear layer.
        let mut dflat = vec![0.0; FLAT];
        for k in 0..CLASSES {
            g.linear_b[k] += dlog[k];
            for f in 0..FLAT {
                g.linear_w
                    .set(k, f, g.linear_w.get(k, f) + dlog[k] * cache.flat[f]);
                dflat[f] += dlog[k] * model.linear_w.get(k, f);
            }
        }

        // Second pool + rectifier: spread quarters, mask by pre-activation.
        let mut dz2 = vec![0.0; C2_OUT * P1 * P1];
        for ch in 0..C2_OUT {
            for i in 0..P2 {
                for j in 0..P2 {
                    let q = dflat[at(ch, i, j, P2, P2)] / 4.0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = at(ch, 2 * i + di, 2 * j + dj, P1, P1);
                        if cache.z2[idx] > 0.0 {
                            dz2[idx] += q;
                        }
                    }
                }
            }
        }

        // Second conv: kernel/bias grads plus gradient w.r.t. its input.
        let mut dp1 = vec![0.0; C1_OUT * P1 * P1];
        for n in 0..C2_OUT {
            for i in 0..P1 {
                for j in 0..P1 {
                    let gy = dz2[at(n, i, j, P1, P1)];
                    if gy == 0.0 {
                        continue;
                    }
                    g.conv2_b[n] += gy;
                    for c in 0..C1_OUT {
                        for r in 0..KSIZE {
                            let ii = i + r;
                            if ii < PAD || ii - PAD >= P1 {
                                continue;
                            }
                            for s in 0..KSIZE {
                                let jj = j + s;
                                if jj < PAD || jj - PAD >= P1 {
                                    continue;
                                }
                                let xi = at(c, ii - PAD, jj - PAD, P1, P1);
                                g.conv2_k.set(
                                    c,
                                    n,
                                    r,
                                    s,
                                    g.conv2_k.get(c, n, r, s) + gy * cache.p1[xi],
                                );
                                dp1[xi] += gy * model.conv2.kernel.get(c, n, r, s);
                            }
                        }
                    }
                }
            }
        }

        // First pool + rectifier.
        let mut dz1 = vec![0.0; C1_OUT * IMG * IMG];
        for ch in 0..C1_OUT {
            for i in 0..P1 {
                for j in 0..P1 {
                    let q = dp1[at(ch, i, j, P1, P1)] / 4.0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = at(ch, 2 * i + di, 2 * j + dj, IMG, IMG);
                        if cache.z1[idx] > 0.0 {
                            dz1[idx] += q;
                        }
                    }
                }
            }
        }

        // First conv (input gradient not needed).
        for n in 0..C1_OUT {
            for i in 0..IMG {
                for j in 0..IMG {
                    let gy = dz1[at(n, i, j, IMG, IMG)];
                    if gy == 0.0 {
                        continue;
                    }
                    g.conv1_b[n] += gy;
                    for r in 0..KSIZE {
                        let ii = i + r;
                        if ii < PAD || ii - PAD >= IMG {
                            continue;
                        }
                        for s in 0..KSIZE {
                            let jj = j + s;
                            if jj < PAD || jj - PAD >= IMG {
                                continue;
                            }
                            g.conv1_k.set(
                                0,
                                n,
                                r,
                                s,
                                g.conv1_k.get(0, n, r, s)
                                    + gy * img[at(0, ii - PAD, jj - PAD, IMG, IMG)],
                            );
                        }
                    }
                }
            }
        }
    (loss, g)
}

fn scaled_add(dst: &mut Grads, src: &Grads, factor: f64) {
    for (d, &s) in dst.conv1_k.data_mut().iter_mut().zip(src.conv1_k.data()) {
        *d += factor * s;
    }
    for (d, &s) in dst.conv1_b.iter_mut().zip(&src.conv1_b) {
        *d += factor * s;
    }
    for (d, &s) in dst.conv2_k.data_mut().iter_mut().zip(src.conv2_k.data()) {
        *d += factor * s;
    }
    for (d, &s) in dst.conv2_b.iter_mut().zip(&src.conv2_b) {
        *d += factor * s;
    }
    for k in 0..CLASSES {
        for f in 0..FLAT {
            dst.linear_w
                .set(k, f, dst.linear_w.get(k, f) + factor * src.linear_w.get(k, f));
        }
    }
    for (d, &s) in dst.linear_b.iter_mut().zip(&src.linear_b) {
        *d += factor * s;
    }
}

/// Mean loss and its gradient for every parameter tensor, by hand-derived
/// backpropagation through linear, pooling, rectifier, and both convs.
/// Each sample's gradient is computed in isolation and averaged with weight
/// 1/batch, so the mean-loss convention holds bit-exactly.
pub fn forward_backward(
    model: &ToyCnn,
    images: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Grads)> {
    check_batch(images, labels)?;
    let inv = 1.0 / images.len() as f64;
    let mut loss = 0.0;
    let mut g = zero_grads();
    for (img, &label) in images.iter().zip(labels) {
        let (l, gs) = backward_sample(model, img, label);
        loss += l;
        scaled_add(&mut g, &gs, inv);
    }
    Ok((loss * inv, g))
}

/// Argmax class; ties resolve to the lowest index.
pub fn predict(model: &ToyCnn, img: &[f64]) -> usize {
    let cache = forward_sample(model, img);
    let mut best = 0;
    for k in 1..CLASSES {
        if cache.logits[k] > cache.logits[best] {
            best = k;
        }
    }
    best
}

/// Fraction of a dataset classified correctly.
pub fn accuracy(model: &ToyCnn, ds: &ToyDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if predict(model, img) == label {
            hits += 1;
        }
    }
    hits as f64 / ds.len() as f64
}


#[cfg(test)]
impl ToyCnn {
    fn conv1_k_entry(&self, idx: usize) -> f64 {
        self.conv1.kernel.data()[idx]
    }
    fn set_conv1_k_entry(&mut self, idx: usize, v: f64) {
        self.conv1.kernel.data_mut()[idx] = v;
    }
    fn conv2_k_entry(&self, idx: usize) -> f64 {
        self.conv2.kernel.data()[idx]
    }
    fn set_conv2_k_entry(&mut self, idx: usize, v: f64) {
        self.conv2.kernel.data_mut()[idx] = v;
    }
}
