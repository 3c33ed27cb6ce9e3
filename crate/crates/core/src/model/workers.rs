//! Edge, cloud and monolithic models built from a split description.

use rand::Rng;

use super::arch::ArchitectureSpec;
use super::net::{Mode, Sequential};
use super::split::SplitModel;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

fn check_sample_shape(op: &'static str, x: &Tensor<impl Real>, expected: &[usize]) -> Result<(), TensorError> {
    if x.ndim() != expected.len() + 1 || &x.shape()[1..] != expected {
        let mut want = vec![x.shape().first().copied().unwrap_or(1)];
        want.extend_from_slice(expected);
        return Err(TensorError::ShapeMismatch { op, left: x.shape().to_vec(), right: want });
    }
    Ok(())
}

/// Tape handles produced by one edge forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EdgeOutput {
    /// Post-ReLU compressed feature map (N×C×H×W), before quantization.
    pub features: Var,
    /// Early-exit logits (N×classes), computed from `features`.
    pub early_logits: Var,
}

/// Edge worker model: base prefix, compression convolution, early-exit head.
#[derive(Debug, Clone)]
pub struct EdgeModel<T: Real> {
    pub store: ParamStore<T>,
    features: Sequential,
    head: Sequential,
    input_shape: [usize; 3],
}

impl<T: Real> EdgeModel<T> {
    pub fn new<R: Rng>(split: &SplitModel, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut layers = split.edge_layers.clone();
        layers.extend(split.compression.iter().cloned());
        let features = Sequential::build(&layers, "edge", &mut store, rng);
        let head = Sequential::build(&split.exit_head, "exit", &mut store, rng);
        EdgeModel { store, features, head, input_shape: split.arch.input_shape }
    }

    /// Runs the feature extractor and the early exit on `tape`.
    pub fn forward(&mut self, tape: &mut Tape<T>, batch: Tensor<T>, mode: Mode) -> Result<EdgeOutput, TensorError> {
        check_sample_shape("edge_forward", &batch, &self.input_shape)?;
        let x = tape.constant(batch);
        let features = self.features.forward(tape, &mut self.store, x, mode)?;
        let early_logits = self.head.forward(tape, &mut self.store, features, mode)?;
        Ok(EdgeOutput { features, early_logits })
    }
}

/// Cloud worker model: decompression entry and the remaining base layers.
#[derive(Debug, Clone)]
pub struct CloudModel<T: Real> {
    pub store: ParamStore<T>,
    body: Sequential,
    input_shape: [usize; 3],
}

impl<T: Real> CloudModel<T> {
    pub fn new<R: Rng>(split: &SplitModel, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut layers = split.cloud_entry.clone();
        layers.extend(split.cloud_layers.iter().cloned());
        let body = Sequential::build(&layers, "cloud", &mut store, rng);
        CloudModel { store, body, input_shape: split.compressed_shape() }
    }

    /// Final-exit logits for received (dequantized) features. The features
    /// enter the tape as a constant leaf, so no gradient reaches them.
    pub fn forward(&mut self, tape: &mut Tape<T>, features: Tensor<T>, mode: Mode) -> Result<Var, TensorError> {
        check_sample_shape("cloud_forward", &features, &self.input_shape)?;
        let x = tape.constant(features);
        self.body.forward(tape, &mut self.store, x, mode)
    }
}

/// The unsplit architecture on a single worker.
#[derive(Debug, Clone)]
pub struct FullModel<T: Real> {
    pub store: ParamStore<T>,
    body: Sequential,
    input_shape: [usize; 3],
}

impl<T: Real> FullModel<T> {
    pub fn new<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let body = Sequential::build(&arch.layers, "net", &mut store, rng);
        FullModel { store, body, input_shape: arch.input_shape }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, batch: Tensor<T>, mode: Mode) -> Result<Var, TensorError> {
        check_sample_shape("forward", &batch, &self.input_shape)?;
        let x = tape.constant(batch);
        self.body.forward(tape, &mut self.store, x, mode)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::build_smallcnn;

    fn setup() -> (SplitModel, EdgeModel<f32>, CloudModel<f32>) {
        let arch = build_smallcnn(10, [3, 16, 16]).unwrap();
        let split = SplitModel::new(&arch, 2, None, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let edge = EdgeModel::new(&split, &mut rng);
        let cloud = CloudModel::new(&split, &mut rng);
        (split, edge, cloud)
    }

    fn batch(n: usize) -> Tensor<f32> {
        Tensor::from_fn(&[n, 3, 16, 16], |i| ((i * 31 % 97) as f32) / 97.0)
    }

    #[test]
    fn edge_output_shapes() {
        let (split, mut edge, _) = setup();
        let mut tape = Tape::new();
        let out = edge.forward(&mut tape, batch(5), Mode::Train).unwrap();
        let [c, h, w] = split.compressed_shape();
        assert_eq!(tape.value(out.features).unwrap().shape(), [5, c, h, w]);
        assert_eq!(tape.value(out.early_logits).unwrap().shape(), [5, 10]);
        assert!(tape.value(out.early_logits).unwrap().all_finite());
    }

    #[test]
    fn zero_weights_give_uniform_early_exit() {
        let (_, mut edge, _) = setup();
        for p in edge.store.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut tape = Tape::new();
        let out = edge.forward(&mut tape, batch(4), Mode::Train).unwrap();
        assert!(tape.value(out.early_logits).unwrap().data().iter().all(|&v| v == 0.0));
        let loss = tape.softmax_cross_entropy(out.early_logits, &[0, 1, 2, 3]).unwrap();
        assert!((tape.value(loss).unwrap().data()[0] - 10f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn cloud_consumes_features_as_constants() {
        let (split, mut edge, mut cloud) = setup();
        let mut edge_tape = Tape::new();
        let out = edge.forward(&mut edge_tape, batch(3), Mode::Train).unwrap();
        let feats = edge_tape.value(out.features).unwrap().clone();
        let mut tape = Tape::new();
        let logits = cloud.forward(&mut tape, feats.clone(), Mode::Train).unwrap();
        assert_eq!(tape.value(logits).unwrap().shape(), [3, 10]);
        // the first node is the received features: a constant leaf
        let first = tape.constant(feats.clone());
        assert!(!tape.requires_grad(first).unwrap());

        // deterministic given parameters and input
        let a = tape.value(logits).unwrap().clone();
        let mut tape2 = Tape::new();
        let b = cloud.forward(&mut tape2, feats, Mode::Eval).unwrap();
        let mut tape3 = Tape::new();
        let c = cloud.forward(&mut tape3, tape.value(logits).map(|_| ()).map(|_| edge_tape.value(out.features).unwrap().clone()).unwrap(), Mode::Eval).unwrap();
        assert_eq!(tape2.value(b).unwrap(), tape3.value(c).unwrap());
        assert_eq!(a.shape(), [3, 10]);

        let wrong = Tensor::<f32>::zeros(&[3, split.cut_shape()[0], 4, 4]);
        let mut t = Tape::new();
        if split.cut_shape()[0] != split.compression_channels {
            assert!(matches!(cloud.forward(&mut t, wrong, Mode::Train), Err(TensorError::ShapeMismatch { .. })));
        }
    }

    #[test]
    fn edge_rejects_wrong_input() {
        let (_, mut edge, _) = setup();
        let mut tape = Tape::new();
        let bad = Tensor::<f32>::zeros(&[2, 3, 8, 8]);
        assert!(matches!(edge.forward(&mut tape, bad, Mode::Train), Err(TensorError::ShapeMismatch { .. })));
    }
}
