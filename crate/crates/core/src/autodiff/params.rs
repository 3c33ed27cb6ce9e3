//! Trainable parameters, non-trainable buffers and the optimizers that update them.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable buffer (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor with its accumulated gradient and optimizer moments.
#[derive(Debug, Clone)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// SGD momentum buffer or Adam first moment.
    pub first_moment: Option<Tensor<T>>,
    /// Adam second moment.
    pub second_moment: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, first_moment: None, second_moment: None }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone)]
pub struct Buffer<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
}

/// All parameters and buffers owned by one worker.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Real> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    /// Number of optimizer steps taken (Adam bias correction).
    step: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), step: 0 }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer { name: name.into(), value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let g = self.params[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), grad.len());
        for (a, &b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }
}

/// Optimizer choice with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }

    /// Update FLOPs per parameter used by the runtime cost model.
    pub fn update_flops_per_param(&self) -> f64 {
        match self {
            Optimizer::Sgd { .. } => 2.0,
            Optimizer::Adam { .. } => 18.0,
        }
    }

    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, lr: f64) -> Result<(), TensorError> {
        match *self {
            Optimizer::Sgd { momentum } => sgd_step(store, lr, momentum),
            Optimizer::Adam { beta1, beta2, eps } => adam_step(store, lr, beta1, beta2, eps),
        }
    }
}

fn check_lr(lr: f64) -> Result<(), TensorError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Hyperparameter(format!("learning rate must be positive, got {lr}")))
    }
}

/// Plain (optionally momentum) SGD: `w -= lr * g`. Zeroes gradients afterwards.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<(), TensorError> {
    check_lr(lr)?;
    if !(0.0..1.0).contains(&momentum) {
        return Err(TensorError::Hyperparameter(format!("momentum must be in [0, 1), got {momentum}")));
    }
    let lr_t = T::from_f64(lr);
    let mom = T::from_f64(momentum);
    for p in store.params.iter_mut() {
        if momentum > 0.0 {
            let buf = p.first_moment.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((w, g), b) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(buf.data_mut()) {
                *b = mom * *b + *g;
                *w -= lr_t * *b;
            }
        } else {
            for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *w -= lr_t * *g;
            }
        }
    }
    store.step += 1;
    store.zero_grad();
    Ok(())
}

/// Adam with bias correction. Zeroes gradients afterwards.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), TensorError> {
    check_lr(lr)?;
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
        return Err(TensorError::Hyperparameter(format!("adam betas ({beta1}, {beta2}) / eps {eps} out of range")));
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let step_size = T::from_f64(lr / bc1);
    let bc2_sqrt = T::from_f64(bc2.sqrt());
    let eps_t = T::from_f64(eps);
    for p in store.params.iter_mut() {
        let shape = p.value.shape().to_vec();
        let m = p.first_moment.get_or_insert_with(|| Tensor::zeros(&shape));
        let v = p.second_moment.get_or_insert_with(|| Tensor::zeros(&shape));
        for (((w, &g), m), v) in
            p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps_t);
        }
    }
    store.zero_grad();
    Ok(())
}

/// `initial_lr · (1 + cos(π·epoch/total_epochs)) / 2`.
pub fn cosine_annealing_lr(initial_lr: f64, epoch: usize, total_epochs: usize) -> Result<f64, TensorError> {
    if epoch > total_epochs || total_epochs == 0 {
        return Err(TensorError::Hyperparameter(format!(
            "epoch {epoch} outside 0..={total_epochs}"
        )));
    }
    let frac = epoch as f64 / total_epochs as f64;
    Ok(initial_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value));
        store.get_mut(id).grad = Tensor::scalar(grad);
        store
    }

    #[test]
    fn sgd_matches_hand_update() {
        let mut s = single(1.0, 0.5);
        sgd_step(&mut s, 0.1, 0.0).unwrap();
        assert!((s.params()[0].value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s.params()[0].grad.data()[0], 0.0);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn sgd_zero_grad_leaves_value() {
        let mut s = single(0.7, 0.0);
        sgd_step(&mut s, 0.3, 0.0).unwrap();
        assert_eq!(s.params()[0].value.data()[0], 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δw = -lr·1/(1+ε)
        let mut s = single(0.0, 1.0);
        adam_step(&mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let w = s.params()[0].value.data()[0];
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-12, "{w}");
    }

    #[test]
    fn nonpositive_lr_rejected() {
        let mut s = single(1.0, 1.0);
        assert!(sgd_step(&mut s, 0.0, 0.0).is_err());
        assert!(adam_step(&mut s, -1.0, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_annealing_lr(0.1, 0, 200).unwrap(), 0.1);
        assert!(cosine_annealing_lr(0.1, 200, 200).unwrap().abs() < 1e-18);
        assert!((cosine_annealing_lr(0.1, 100, 200).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_annealing_lr(0.1, 201, 200).is_err());
    }

    #[test]
    fn beta_follows_optimizer() {
        assert_eq!(Optimizer::sgd().update_flops_per_param(), 2.0);
        assert_eq!(Optimizer::adam().update_flops_per_param(), 18.0);
    }
}
