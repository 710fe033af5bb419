//! Alternating-direction training that steers chosen kernels toward low
//! Tucker rank while the network trains: each step applies the regularized
//! gradient update to the live kernel K, and periodically K̂ is refreshed by
//! projecting K+M onto the low-rank set (truncated HOSVD) and the dual
//! tensor M absorbs the remaining constraint violation.

pub mod data;
pub mod model;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;
use crate::tucker::{tucker2_decompose, tucker2_reconstruct, TuckerFactors};
use data::ToyDataset;
use model::{accuracy, forward_backward, Grads, ToyCnn};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub rho: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Refresh K̂/M every this many mini-batch steps; 0 means once per epoch.
    pub admm_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            rho: 0.01,
            epochs: 30,
            batch: 32,
            admm_period: 0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha and rho must be positive, got {} and {}",
                self.alpha, self.rho
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step size for a 1-based epoch: halves for the final third of training.
    fn alpha_at(&self, epoch: usize) -> f64 {
        if epoch > (2 * self.epochs).div_ceil(3) {
            self.alpha * 0.5
        } else {
            self.alpha
        }
    }
}

/// Per-kernel constraint state: the projected copy, the dual tensor, and the
/// target Tucker ranks.
#[derive(Debug, Clone)]
pub struct AdmmLayerState {
    pub k_hat: Tensor4,
    pub m: Tensor4,
    pub d1: usize,
    pub d2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub residual: f64,
}

/// Regularized gradient step: K ← K − α·(grad + ρ·(K − K̂ + M)).
pub fn admm_k_update(
    k: &mut Tensor4,
    grad: &Tensor4,
    k_hat: &Tensor4,
    m: &Tensor4,
    rho: f64,
    alpha: f64,
) -> Result<()> {
    if grad.dims() != k.dims() || k_hat.dims() != k.dims() || m.dims() != k.dims() {
        return Err(Error::ShapeMismatch(format!(
            "K {:?}, grad {:?}, K̂ {:?}, M {:?} must share dims",
            k.dims(),
            grad.dims(),
            k_hat.dims(),
            m.dims()
        )));
    }
    let (gd, hd, md) = (grad.data(), k_hat.data(), m.data());
    for (i, v) in k.data_mut().iter_mut().enumerate() {
        *v -= alpha * (gd[i] + rho * (*v - hd[i] + md[i]));
    }
    Ok(())
}

/// Projection onto the rank-(d1, d2) set: K̂ ← reconstruct(decompose(K+M)).
pub fn admm_project(
    k: &Tensor4,
    m: &Tensor4,
    d1: usize,
    d2: usize,
) -> Result<(TuckerFactors, Tensor4)> {
    let target = k.add(m)?;
    let factors = tucker2_decompose(&target, d1, d2)?;
    let k_hat = tucker2_reconstruct(&factors);
    Ok((factors, k_hat))
}

/// Dual ascent with unit scaled step: M ← M + K − K̂.
pub fn admm_dual_update(m: &mut Tensor4, k: &Tensor4, k_hat: &Tensor4) -> Result<()> {
    if k.dims() != m.dims() || k_hat.dims() != m.dims() {
        return Err(Error::ShapeMismatch(format!(
            "M {:?}, K {:?}, K̂ {:?} must share dims",
            m.dims(),
            k.dims(),
            k_hat.dims()
        )));
    }
    let (kd, hd) = (k.data(), k_hat.data());
    for (i, v) in m.data_mut().iter_mut().enumerate() {
        *v += kd[i] - hd[i];
    }
    Ok(())
}

fn layer_kernel<'a>(model: &'a ToyCnn, name: &str) -> Result<&'a Tensor4> {
    match name {
        "conv1" => Ok(&model.conv1.kernel),
        "conv2" => Ok(&model.conv2.kernel),
        other => Err(Error::InvalidArgument(format!(
            "unknown layer '{other}' (have conv1, conv2)"
        ))),
    }
}

fn layer_kernel_mut<'a>(model: &'a mut ToyCnn, name: &str) -> Result<&'a mut Tensor4> {
    match name {
        "conv1" => Ok(&mut model.conv1.kernel),
        "conv2" => Ok(&mut model.conv2.kernel),
        other => Err(Error::InvalidArgument(format!(
            "unknown layer '{other}' (have conv1, conv2)"
        ))),
    }
}

fn layer_grad<'a>(grads: &'a Grads, name: &str) -> &'a Tensor4 {
    match name {
        "conv1" => &grads.conv1_k,
        "conv2" => &grads.conv2_k,
        _ => unreachable!("state keys are validated at construction"),
    }
}

fn sgd_tensor(t: &mut Tensor4, g: &Tensor4, alpha: f64) {
    for (v, &gv) in t.data_mut().iter_mut().zip(g.data()) {
        *v -= alpha * gv;
    }
}

fn sgd_slice(t: &mut [f64], g: &[f64], alpha: f64) {
    for (v, &gv) in t.iter_mut().zip(g) {
        *v -= alpha * gv;
    }
}

/// Refresh every layer's K̂ and M from the live kernels (projection followed
/// by the dual step).
fn refresh_states(model: &ToyCnn, states: &mut BTreeMap<String, AdmmLayerState>) -> Result<()> {
    for (name, st) in states.iter_mut() {
        let k = layer_kernel(model, name)?;
        let (_, k_hat) = admm_project(k, &st.m, st.d1, st.d2)?;
        st.k_hat = k_hat;
        admm_dual_update(&mut st.m, k, &st.k_hat)?;
    }
    Ok(())
}

fn residual_norm(model: &ToyCnn, states: &BTreeMap<String, AdmmLayerState>) -> f64 {
    let mut sq = 0.0;
    for (name, st) in states {
        let k = layer_kernel(model, name).expect("validated layer name");
        let diff: f64 = k
            .data()
            .iter()
            .zip(st.k_hat.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sq += diff;
    }
    sq.sqrt()
}

fn run_training(
    mut model: ToyCnn,
    train: &ToyDataset,
    test: &ToyDataset,
    mut states: Option<&mut BTreeMap<String, AdmmLayerState>>,
    cfg: &TrainConfig,
) -> Result<(ToyCnn, Vec<EpochStats>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let alpha = cfg.alpha_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;

        for chunk in order.chunks(cfg.batch) {
            let images: Vec<Vec<f64>> = chunk.iter().map(|&i| train.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = forward_backward(&model, &images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            loss_sum += loss * chunk.len() as f64;

            match states.as_deref_mut() {
                Some(st) => {
                    for name in ["conv1", "conv2"] {
                        match st.get(name) {
                            Some(s) => {
                                // Borrow K̂/M by clone-free split: read the
                                // state first, then update the kernel.
                                let (k_hat, m) = (&s.k_hat, &s.m);
                                let grad = layer_grad(&grads, name);
                                let k = match name {
                                    "conv1" => &mut model.conv1.kernel,
                                    _ => &mut model.conv2.kernel,
                                };
                                admm_k_update(k, grad, k_hat, m, cfg.rho, alpha)?;
                            }
                            None => {
                                let grad = layer_grad(&grads, name);
                                let k = layer_kernel_mut(&mut model, name)?;
                                sgd_tensor(k, grad, alpha);
                            }
                        }
                    }
                }
                None => {
                    sgd_tensor(&mut model.conv1.kernel, &grads.conv1_k, alpha);
                    sgd_tensor(&mut model.conv2.kernel, &grads.conv2_k, alpha);
                }
            }
            sgd_slice(&mut model.conv1.bias, &grads.conv1_b, alpha);
            sgd_slice(&mut model.conv2.bias, &grads.conv2_b, alpha);
            let mut w = model.linear_w.data().to_vec();
            sgd_slice(&mut w, grads.linear_w.data(), alpha);
            model.linear_w = crate::tensor::Matrix::from_vec(
                grads.linear_w.rows(),
                grads.linear_w.cols(),
                w,
            )?;
            sgd_slice(&mut model.linear_b, &grads.linear_b, alpha);

            step += 1;
            if let Some(st) = states.as_deref_mut() {
                if cfg.admm_period > 0 && step % cfg.admm_period == 0 {
                    refresh_states(&model, st)?;
                }
            }
        }

        if let Some(st) = states.as_deref_mut() {
            if cfg.admm_period == 0 {
                refresh_states(&model, st)?;
            }
        }
        let residual = states
            .as_deref()
            .map(|st| residual_norm(&model, st))
            .unwrap_or(0.0);
        history.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: accuracy(&model, train),
            test_acc: accuracy(&model, test),
            residual,
        });
    }
    Ok((model, history))
}

fn validate_ranks(model: &ToyCnn, ranks: &BTreeMap<String, (usize, usize)>) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument(
            "no layers selected for low-rank training".into(),
        ));
    }
    for (name, &(d1, d2)) in ranks {
        let dims = layer_kernel(model, name)?.dims();
        if d1 == 0 || d2 == 0 || d1 > dims[0] || d2 > dims[1] {
            return Err(Error::InvalidArgument(format!(
                "ranks ({d1}, {d2}) out of bounds for {name} with dims {dims:?}"
            )));
        }
    }
    Ok(())
}

/// Train with the low-rank constraint active on the named kernels; returns
/// the trained model, the factors of each constrained kernel decomposed at
/// its target ranks, and per-epoch statistics.
pub fn admm_train(
    model: ToyCnn,
    train: &ToyDataset,
    test: &ToyDataset,
    ranks: &BTreeMap<String, (usize, usize)>,
    cfg: &TrainConfig,
) -> Result<(ToyCnn, BTreeMap<String, TuckerFactors>, Vec<EpochStats>)> {
    cfg.validate()?;
    validate_ranks(&model, ranks)?;
    let mut states = BTreeMap::new();
    for (name, &(d1, d2)) in ranks {
        let k = layer_kernel(&model, name)?;
        let m = Tensor4::zeros(k.dims());
        let (_, k_hat) = admm_project(k, &m, d1, d2)?;
        states.insert(
            name.clone(),
            AdmmLayerState { k_hat, m, d1, d2 },
        );
    }
    let (model, history) = run_training(model, train, test, Some(&mut states), cfg)?;
    let mut factors = BTreeMap::new();
    for (name, st) in &states {
        let k = layer_kernel(&model, name)?;
        factors.insert(name.clone(), tucker2_decompose(k, st.d1, st.d2)?);
    }
    Ok((model, factors, history))
}

/// Ordinary mini-batch training with the identical loop, shuffling, and
/// learning-rate schedule, but no rank constraint.
pub fn train_plain(
    model: ToyCnn,
    train: &ToyDataset,
    test: &ToyDataset,
    cfg: &TrainConfig,
) -> Result<(ToyCnn, Vec<EpochStats>)> {
    run_training(model, train, test, None, cfg)
}
