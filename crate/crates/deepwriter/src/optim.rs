//! Mini-batch SGD with momentum and weight decay, the step learning-rate
//! schedule, and per-layer learning-rate multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{DwError, Result};
use crate::layers::LayerParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_step: u64,
    pub stop_iter: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Training-from-scratch defaults: batch 256, momentum 0.9, weight decay
    /// 5e-4, lr 1e-2 dropped by 10x every 100K iterations, stop at 400K.
    pub fn scratch_defaults() -> Self {
        TrainConfig {
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 5e-4,
            base_lr: 1e-2,
            lr_drop_factor: 0.1,
            lr_step: 100_000,
            stop_iter: 400_000,
            seed: 0,
        }
    }

    /// Finetuning defaults: lr 1e-3 dropped by 10x every 20K, stop at 40K.
    pub fn finetune_defaults() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            lr_step: 20_000,
            stop_iter: 40_000,
            ..Self::scratch_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(DwError::Domain("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DwError::Domain(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(DwError::Domain("weight_decay must be >= 0".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(DwError::Domain("base_lr must be > 0".into()));
        }
        if self.lr_step < 1 || self.stop_iter < 1 {
            return Err(DwError::Domain("lr_step and stop_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate in effect at `iteration`:
/// base_lr * drop_factor^floor(iteration / lr_step).
pub fn lr_at(iteration: u64, config: &TrainConfig) -> Result<f64> {
    if iteration >= config.stop_iter {
        return Err(DwError::Domain(format!(
            "iteration {iteration} >= stop_iter {}",
            config.stop_iter
        )));
    }
    let drops = (iteration / config.lr_step) as i32;
    Ok(config.base_lr * config.lr_drop_factor.powi(drops))
}

/// Momentum velocity buffers, one (weight, bias) pair per parameterized
/// layer, plus the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T: Scalar = f32> {
    pub velocities: Vec<(Tensor<T>, Tensor<T>)>,
    pub iteration: u64,
}

impl<T: Scalar> OptimState<T> {
    /// Zero velocities mirroring each parameter's dims.
    pub fn new(params: &[LayerParams<T>]) -> Self {
        let velocities = params
            .iter()
            .map(|p| {
                (
                    Tensor::zeros(p.weights.dims().to_vec()),
                    Tensor::zeros(p.biases.dims().to_vec()),
                )
            })
            .collect();
        OptimState {
            velocities,
            iteration: 0,
        }
    }
}

fn update_tensor<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    eff_lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.dims() != grad.dims() {
        return Err(DwError::Shape(format!(
            "gradient dims {:?} do not match parameter dims {:?}",
            grad.dims(),
            param.dims()
        )));
    }
    let lr = T::from_f64(eff_lr);
    let m = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    let p = param.as_mut_slice();
    let v = velocity.as_mut_slice();
    let g = grad.as_slice();
    for i in 0..p.len() {
        // weight decay is coupled into the gradient before the momentum buffer
        let g_eff = g[i] + wd * p[i];
        v[i] = m * v[i] + lr * g_eff;
        p[i] = p[i] - v[i];
    }
    Ok(())
}

/// One SGD step over all layers. `grads` pairs are (weight grad, bias grad)
/// in the same order as `params`. Increments the iteration counter once.
pub fn sgd_update<T: Scalar>(
    params: &mut [LayerParams<T>],
    grads: &[(Tensor<T>, Tensor<T>)],
    state: &mut OptimState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let mut refs: Vec<&mut LayerParams<T>> = params.iter_mut().collect();
    sgd_update_refs(&mut refs, grads, state, config)
}

/// Same step over borrowed layers, for callers that keep parameters inside a
/// larger structure.
pub fn sgd_update_refs<T: Scalar>(
    params: &mut [&mut LayerParams<T>],
    grads: &[(Tensor<T>, Tensor<T>)],
    state: &mut OptimState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(DwError::Shape(format!(
            "sgd_update got {} layers, {} gradients, {} velocity pairs",
            params.len(),
            grads.len(),
            state.velocities.len()
        )));
    }
    let lr = lr_at(state.iteration, config)?;
    for (layer, ((gw, gb), (vw, vb))) in params
        .iter_mut()
        .zip(grads.iter().zip(state.velocities.iter_mut()))
    {
        let eff_lr = lr * layer.lr_mult;
        update_tensor(
            &mut layer.weights,
            gw,
            vw,
            eff_lr,
            config.momentum,
            config.weight_decay,
        )?;
        update_tensor(
            &mut layer.biases,
            gb,
            vb,
            eff_lr,
            config.momentum,
            config.weight_decay,
        )?;
    }
    state.iteration += 1;
    Ok(())
}
