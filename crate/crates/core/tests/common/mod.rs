//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use edgesplit_core::autodiff::{Optimizer, ParamStore, Tape};
use edgesplit_core::costmodel::{CostParams, HardwareSpec};
use edgesplit_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use edgesplit_core::model::{build_smallcnn, ArchBuilder, LayerSpec, Mode, Sequential};
use edgesplit_core::netsim::ChannelSpec;
use edgesplit_core::orchestrator::{LrSchedule, TimingModel, TrainMode, TrainingConfig, Transport};
use edgesplit_core::planner::{CandidateInput, CandidateTrainer, Requirements};
use edgesplit_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn random_layers(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, [usize; 3], usize) {
    let c = rng.random_range(1..=3);
    let side = [4, 6, 8][rng.random_range(0..3)];
    let classes = rng.random_range(2..=4);
    let mut b = ArchBuilder::new("random", [c, side, side], classes);
    let ch = rng.random_range(2..=4);
    let k = [1, 3][rng.random_range(0..2)];
    b = b.conv(ch, k, 1, k / 2, rng.random_bool(0.5));
    if rng.random_bool(0.5) {
        b = b.batchnorm();
    }
    b = b.relu();
    match rng.random_range(0..4) {
        0 => b = b.maxpool(2, 2),
        1 => b = b.avgpool(2, 2),
        2 => b = b.residual(rng.random_range(2..=4), [1, 2][rng.random_range(0..2)]),
        _ => b = b.conv(ch, 3, 2, 1, true).relu(),
    }
    b = b.split_here().flatten();
    if rng.random_bool(0.5) {
        b = b.linear(rng.random_range(3..=6)).relu();
    }
    let arch = b.linear(classes).build().expect("valid random network");
    (arch.layers, [c, side, side], classes)
}

pub struct Net {
    pub seq: Sequential,
    pub store: ParamStore<f64>,
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl Net {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layers, [c, h, w], classes) = random_layers(&mut rng);
        let mut store = ParamStore::new();
        let seq = Sequential::build(&layers, "net", &mut store, &mut rng);
        // Shift every parameter so zero-initialized biases are not special.
        for p in store.params_mut() {
            let data = p.value.data().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            p.value = Tensor::new(p.value.shape().to_vec(), data).unwrap();
        }
        let batch = 3;
        let input = Tensor::from_fn(&[batch, c, h, w], |_| rng.random_range(-1.0..1.0));
        let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        Net { seq, store, input, labels }
    }

    pub fn loss(&mut self, backward: bool) -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(self.input.clone());
        let logits = self.seq.forward(&mut tape, &mut self.store, x, Mode::Train).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &self.labels).unwrap();
        let value = tape.value(loss).unwrap().data()[0];
        if backward {
            self.store.zero_grad();
            tape.backward(loss, &mut self.store).unwrap();
        }
        value
    }
}

pub fn max_relative_error(seed: u64) -> (f64, usize) {
    let mut net = Net::new(seed);
    net.loss(true);
    let analytic: Vec<Vec<f64>> = net.store.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.store.params()[pi].value.data()[i];
            let set = |net: &mut Net, v: f64| {
                let p = &mut net.store.params_mut()[pi];
                let mut data = p.value.data().to_vec();
                data[i] = v;
                p.value = Tensor::new(p.value.shape().to_vec(), data).unwrap();
            };
            set(&mut net, orig + EPS);
            let up = net.loss(false);
            set(&mut net, orig - EPS);
            let down = net.loss(false);
            set(&mut net, orig);
            let numeric = (up - down) / (2.0 * EPS);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Small synthetic set: 10 classes, 8×8 inputs, 200 train and 100 test samples.
pub fn small_data() -> (Dataset, Dataset) {
    let spec = SyntheticSpec { train_per_class: 20, test_per_class: 10, input_shape: [3, 8, 8], seed: 11, ..Default::default() };
    generate_synthetic(&spec).unwrap()
}

pub fn small_config(mode: TrainMode) -> TrainingConfig {
    TrainingConfig {
        arch: build_smallcnn(10, [3, 8, 8]).unwrap(),
        position: 2,
        compression_channels: None,
        bit_width: 4,
        mode,
        optimizer: Optimizer::adam(),
        lr: 2e-3,
        schedule: LrSchedule::Cosine,
        epochs: 10,
        batch_size: 16,
        seed: 5,
        channel: ChannelSpec::new(5.85e6),
        timing: TimingModel::Analytic { hardware: HardwareSpec::default(), cost: CostParams { alpha: 2.0, beta: 18.0 } },
        transport: Transport::Sim,
    }
}

/// Table-driven planner trainer: one-epoch time and final accuracy per position.
pub struct TableTrainer {
    pub epoch_time: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub one_epoch_calls: usize,
    pub full_calls: usize,
}

impl TableTrainer {
    pub fn new(epoch_time: Vec<f64>, accuracy: Vec<f64>) -> Self {
        TableTrainer { epoch_time, accuracy, one_epoch_calls: 0, full_calls: 0 }
    }
}

impl CandidateTrainer for TableTrainer {
    fn one_epoch(&mut self, p: usize) -> Result<f64> {
        self.one_epoch_calls += 1;
        Ok(self.epoch_time[p - 1])
    }
    fn full_train(&mut self, p: usize) -> Result<f64> {
        self.full_calls += 1;
        Ok(self.accuracy[p - 1])
    }
}

/// Every position satisfying every given requirement, deepest first.
pub fn exhaustive_feasible(
    inputs: &[CandidateInput],
    epoch_time: &[f64],
    accuracy: &[f64],
    req: &Requirements,
    epochs: usize,
) -> Vec<usize> {
    let e = epochs as f64;
    let mut ok: Vec<usize> = inputs
        .iter()
        .filter(|c| {
            let i = c.position - 1;
            req.edge_memory.is_none_or(|m| c.edge_params < m)
                && req.runtime_s.is_none_or(|r| c.t_calc_epoch * e < r && epoch_time[i] * e < r)
                && req.accuracy.is_none_or(|a| accuracy[i] > a)
        })
        .map(|c| c.position)
        .collect();
    ok.sort_unstable_by(|a, b| b.cmp(a));
    ok
}
