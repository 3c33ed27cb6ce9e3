//! Instantiated layer sequences bound to a worker's parameter store.

use rand::Rng;

use super::arch::{residual_shortcut, LayerKind, LayerSpec};
use crate::autodiff::{BufferId, ParamId, ParamStore, Tape, Var};
use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvInst {
    weight: ParamId,
    bias: Option<ParamId>,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct BnInst {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
}

#[derive(Debug, Clone)]
enum LayerInst {
    Conv(ConvInst),
    BatchNorm(BnInst),
    Relu,
    MaxPool { kernel: usize, stride: usize },
    AvgPool { kernel: usize, stride: usize },
    Flatten,
    Linear { weight: ParamId, bias: ParamId },
    Residual { conv1: ConvInst, bn1: BnInst, conv2: ConvInst, bn2: BnInst, shortcut: Option<(ConvInst, BnInst)> },
}

/// Kaiming-uniform bound for ReLU networks: `sqrt(6 / fan_in)`.
fn kaiming_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

fn init_conv<T: Real, R: Rng>(kind: &LayerKind, name: &str, store: &mut ParamStore<T>, rng: &mut R) -> ConvInst {
    let LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding, bias } = *kind else {
        unreachable!("init_conv on {kind:?}")
    };
    let fan_in = in_channels * kernel * kernel;
    let weight = store.add(
        format!("{name}.weight"),
        kaiming_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
    );
    let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
    ConvInst { weight, bias, stride, padding }
}

fn init_bn<T: Real>(channels: usize, name: &str, store: &mut ParamStore<T>) -> BnInst {
    BnInst {
        gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
        beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
        running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
        running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
    }
}

impl ConvInst {
    fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

impl BnInst {
    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var, TensorError> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batchnorm2d_train(x, gamma, beta, BN_EPS)?;
                let m = T::from_f64(BN_MOMENTUM);
                let keep = T::one() - m;
                for (r, s) in store.buffer_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + m * *s;
                }
                for (r, s) in store.buffer_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
                    *r = keep * *r + m * *s;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).data().to_vec();
                let var = store.buffer(self.running_var).data().to_vec();
                tape.batchnorm2d_eval(x, gamma, beta, &mean, &var, BN_EPS)
            }
        }
    }
}

/// A sequence of instantiated layers. Parameters live in the worker's store.
#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<LayerInst>,
}

impl Sequential {
    /// Allocates and initializes parameters for `specs` in `store`, naming
    /// them `{prefix}.{index}.*`.
    pub fn build<T: Real, R: Rng>(specs: &[LayerSpec], prefix: &str, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let name = format!("{prefix}.{i}");
                match spec.kind {
                    LayerKind::Conv2d { .. } => LayerInst::Conv(init_conv(&spec.kind, &name, store, rng)),
                    LayerKind::BatchNorm2d { channels } => LayerInst::BatchNorm(init_bn(channels, &name, store)),
                    LayerKind::Relu => LayerInst::Relu,
                    LayerKind::MaxPool2d { kernel, stride } => LayerInst::MaxPool { kernel, stride },
                    LayerKind::AvgPool2d { kernel, stride } => LayerInst::AvgPool { kernel, stride },
                    LayerKind::Flatten => LayerInst::Flatten,
                    LayerKind::Linear { in_features, out_features } => {
                        let weight = store.add(
                            format!("{name}.weight"),
                            kaiming_uniform(&[in_features, out_features], in_features, rng),
                        );
                        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]));
                        LayerInst::Linear { weight, bias }
                    }
                    LayerKind::ResidualBlock { in_channels, out_channels, stride } => {
                        let parts = spec.kind.residual_parts();
                        let conv1 = init_conv(&parts[0], &format!("{name}.conv1"), store, rng);
                        let bn1 = init_bn(out_channels, &format!("{name}.bn1"), store);
                        let conv2 = init_conv(&parts[3], &format!("{name}.conv2"), store, rng);
                        let bn2 = init_bn(out_channels, &format!("{name}.bn2"), store);
                        let shortcut = residual_shortcut(in_channels, out_channels, stride).map(|sc| {
                            (
                                init_conv(&sc[0], &format!("{name}.shortcut"), store, rng),
                                init_bn(out_channels, &format!("{name}.shortcut_bn"), store),
                            )
                        });
                        LayerInst::Residual { conv1, bn1, conv2, bn2, shortcut }
                    }
                }
            })
            .collect();
        Sequential { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Runs the layers on `tape`. In training mode batch-norm running
    /// statistics in `store` are updated.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        mut x: Var,
        mode: Mode,
    ) -> Result<Var, TensorError> {
        for layer in &self.layers {
            x = match layer {
                LayerInst::Conv(c) => c.forward(tape, store, x)?,
                LayerInst::BatchNorm(bn) => bn.forward(tape, store, x, mode)?,
                LayerInst::Relu => tape.relu(x)?,
                LayerInst::MaxPool { kernel, stride } => tape.maxpool2d(x, *kernel, *stride)?,
                LayerInst::AvgPool { kernel, stride } => tape.avgpool2d(x, *kernel, *stride)?,
                LayerInst::Flatten => tape.flatten(x)?,
                LayerInst::Linear { weight, bias } => {
                    let w = tape.param(store, *weight);
                    let b = tape.param(store, *bias);
                    tape.linear(x, w, Some(b))?
                }
                LayerInst::Residual { conv1, bn1, conv2, bn2, shortcut } => {
                    let mut h = conv1.forward(tape, store, x)?;
                    h = bn1.forward(tape, store, h, mode)?;
                    h = tape.relu(h)?;
                    h = conv2.forward(tape, store, h)?;
                    h = bn2.forward(tape, store, h, mode)?;
                    let skip = match shortcut {
                        Some((conv, bn)) => {
                            let s = conv.forward(tape, store, x)?;
                            bn.forward(tape, store, s, mode)?
                        }
                        None => x,
                    };
                    let sum = tape.add(h, skip)?;
                    tape.relu(sum)?
                }
            };
        }
        Ok(x)
    }
}
