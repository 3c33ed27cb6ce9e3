//! Training and inference across the edge and cloud workers.
//!
//! Each batch runs edge forward (features and early exit), uploads the
//! quantized features, and then trains both sides independently: the edge
//! from its early-exit loss, the cloud from its final loss. Nothing flows
//! from the cloud back to the edge.

mod checkpoint;
mod metrics;
mod socket;
mod timing;
mod trial;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{metrics_csv, wall_time_csv, EpochMetrics, Event, EventKind, METRICS_COLUMNS, METRICS_PREAMBLE};
pub use socket::SocketBatchTiming;
pub use timing::{TimingModel, FLOPS_PER_MACC};
pub use trial::SimTrainer;

use crate::autodiff::{cosine_annealing_lr, Optimizer, Tape};
use crate::clock::{ps_to_secs, ComponentDurations, VirtualClock};
use crate::data::{pixels_to_tensor, Dataset};
use crate::error::{Error, Result, TransportError};
use crate::model::{ArchitectureSpec, CloudModel, EdgeModel, FullModel, Mode, SplitModel};
use crate::netsim::{ChannelSpec, SimChannel};
use crate::quant::{dequantize_batch, quantize_batch};
use crate::tensor::{Real, Tensor};
use crate::wire::{decode_frame, encode_frame, Frame, FrameKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Edge prefix with early exit plus cloud suffix.
    Hierarchical,
    /// Raw inputs uploaded; the whole network trains on the cloud.
    Fullcloud,
    /// The whole network on a single worker, no channel.
    Monolithic,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Hierarchical => "hierarchical",
            TrainMode::Fullcloud => "fullcloud",
            TrainMode::Monolithic => "monolithic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transport {
    Sim,
    /// Cloud worker on a TCP listener at `address` (port 0 picks a free one).
    Socket { address: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub arch: ArchitectureSpec,
    pub position: usize,
    pub compression_channels: Option<usize>,
    pub bit_width: u8,
    pub mode: TrainMode,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub channel: ChannelSpec,
    pub timing: TimingModel,
    pub transport: Transport,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.channel.validate().map_err(Error::Config)?;
        if let TimingModel::Analytic { hardware, cost } = &self.timing {
            hardware.validate().map_err(Error::Config)?;
            if !(cost.alpha >= 0.0 && cost.beta >= 0.0) {
                return Err(Error::Config("alpha and beta must be non-negative".into()));
            }
        }
        if matches!(self.transport, Transport::Socket { .. }) && self.mode != TrainMode::Hierarchical {
            return Err(Error::Config("socket transport supports hierarchical mode only".into()));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        match self.schedule {
            LrSchedule::Constant => Ok(self.lr),
            LrSchedule::Cosine => Ok(cosine_annealing_lr(self.lr, epoch, self.epochs.max(1))?),
        }
    }
}

/// Shuffle seed for a 0-based epoch, independent of earlier epochs so that
/// resumed runs see the same order.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(crate) enum Workers<T: Real> {
    Split { edge: EdgeModel<T>, cloud: Option<CloudModel<T>> },
    Full(FullModel<T>),
}

/// Accuracies on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub final_acc: f64,
    pub early_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitUsed {
    Final,
    Early,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub predictions: Vec<usize>,
    pub exit_used: ExitUsed,
    /// Simulated time at which the answer is available.
    pub done_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub accuracy: f64,
    pub final_batches: usize,
    pub early_batches: usize,
    pub predictions: Vec<usize>,
}

/// One training run: both workers, the simulated clock and channel.
pub struct Session<T: Real> {
    config: TrainingConfig,
    split: Option<SplitModel>,
    pub(crate) workers: Workers<T>,
    pub(crate) clock: VirtualClock,
    pub(crate) channel: SimChannel,
    pub(crate) epoch: usize,
    pub(crate) next_batch_id: u32,
    events: Vec<Event>,
    downlink_bits: u64,
    socket_timings: Vec<SocketBatchTiming>,
}

#[derive(Default)]
struct EpochTotals {
    edge_loss: f64,
    edge_batches: usize,
    cloud_loss: f64,
    cloud_batches: usize,
    feature_bits: u64,
    overhead_bits: u64,
    skipped: u64,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

fn to_usize(labels: &[u8]) -> Vec<usize> {
    labels.iter().map(|&l| l as usize).collect()
}

fn accuracy(predictions: &[usize], labels: &[u8]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count();
    correct as f64 / labels.len().max(1) as f64
}

impl<T: Real> Session<T> {
    /// Builds and initializes the workers from `config.seed`.
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (split, workers) = match config.mode {
            TrainMode::Hierarchical => {
                let split =
                    SplitModel::new(&config.arch, config.position, config.compression_channels, config.bit_width)?;
                let edge = EdgeModel::new(&split, &mut rng);
                let cloud = CloudModel::new(&split, &mut rng);
                (Some(split), Workers::Split { edge, cloud: Some(cloud) })
            }
            TrainMode::Fullcloud | TrainMode::Monolithic => (None, Workers::Full(FullModel::new(&config.arch, &mut rng))),
        };
        let channel = SimChannel::new(config.channel.clone()).map_err(Error::Config)?;
        Ok(Session {
            config,
            split,
            workers,
            clock: VirtualClock::new(),
            channel,
            epoch: 0,
            next_batch_id: 0,
            events: Vec::new(),
            downlink_bits: 0,
            socket_timings: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn split(&self) -> Option<&SplitModel> {
        self.split.as_ref()
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Payload bits sent from the cloud to the edge. The cloud has no path to
    /// send anything, so this stays zero.
    pub fn downlink_bits(&self) -> u64 {
        self.downlink_bits
    }

    /// Wall-clock batch timings of the last socket-mode epoch.
    pub fn socket_timings(&self) -> &[SocketBatchTiming] {
        &self.socket_timings
    }

    pub fn edge(&self) -> Option<&EdgeModel<T>> {
        match &self.workers {
            Workers::Split { edge, .. } => Some(edge),
            Workers::Full(_) => None,
        }
    }

    pub fn cloud(&self) -> Option<&CloudModel<T>> {
        match &self.workers {
            Workers::Split { cloud, .. } => cloud.as_ref(),
            Workers::Full(_) => None,
        }
    }

    pub fn full(&self) -> Option<&FullModel<T>> {
        match &self.workers {
            Workers::Full(full) => Some(full),
            Workers::Split { .. } => None,
        }
    }

    fn log_event(&mut self, kind: EventKind, batch_id: u32, time_ps: u64, detail: String) {
        let event = Event { epoch: self.epoch + 1, batch_id, time_ps, kind, detail };
        log::warn!("{event}");
        self.events.push(event);
    }

    fn take_batch_id(&mut self) -> u32 {
        let id = self.next_batch_id;
        self.next_batch_id = self.next_batch_id.wrapping_add(1);
        id
    }

    /// Batches of one epoch in shuffled order; the last may be short.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch)));
        order.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Trains one epoch and evaluates on `test`.
    pub fn train_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        if train.sample_shape() != self.config.arch.input_shape {
            return Err(Error::Data(format!(
                "dataset samples {:?} do not match architecture input {:?}",
                train.sample_shape(),
                self.config.arch.input_shape
            )));
        }
        if let Transport::Socket { address } = &self.config.transport {
            let address = address.clone();
            return self.train_epoch_socket(train, test, &address);
        }
        let wall = Instant::now();
        let start = self.clock.now();
        let lr = self.config.lr_at(self.epoch)?;
        let mut totals = EpochTotals::default();
        for indices in self.epoch_batches(train.len(), self.epoch) {
            match self.config.mode {
                TrainMode::Hierarchical => self.step_hierarchical(train, &indices, lr, &mut totals)?,
                TrainMode::Fullcloud => self.step_fullcloud(train, &indices, lr, &mut totals)?,
                TrainMode::Monolithic => self.step_monolithic(train, &indices, lr, &mut totals)?,
            }
        }
        let sim_time_ps = self.clock.now() - start;
        let eval = self.evaluate(test)?;
        self.epoch += 1;
        Ok(self.epoch_metrics(totals, eval, sim_time_ps, wall.elapsed().as_secs_f64()))
    }

    fn epoch_metrics(&self, t: EpochTotals, eval: Evaluation, sim_time_ps: u64, wall: f64) -> EpochMetrics {
        EpochMetrics {
            epoch: self.epoch,
            edge_loss: mean(t.edge_loss, t.edge_batches),
            cloud_loss: mean(t.cloud_loss, t.cloud_batches),
            final_acc: eval.final_acc,
            early_acc: eval.early_acc,
            feature_bits: t.feature_bits,
            overhead_bits: t.overhead_bits,
            sim_time_ps,
            skipped_batches: t.skipped,
            wall_time_s: wall,
        }
    }

    /// Every uplink frame in split mode must carry compressed features only.
    fn check_uplink(split: &SplitModel, frame: &Frame) -> Result<()> {
        let [_, c, h, w] = frame.batch.shape;
        if frame.kind != FrameKind::Features || [c, h, w] != split.compressed_shape() {
            return Err(TransportError::Protocol(format!(
                "refusing to upload {:?} frame of shape {:?}; only compressed features may leave the edge",
                frame.kind, frame.batch.shape
            ))
            .into());
        }
        Ok(())
    }

    fn step_hierarchical(&mut self, data: &Dataset, indices: &[usize], lr: f64, totals: &mut EpochTotals) -> Result<()> {
        let split = self.split.clone().expect("hierarchical session has a split");
        let batch_id = self.take_batch_id();
        let Workers::Split { edge, cloud } = &mut self.workers else { unreachable!() };
        let cloud = cloud.as_mut().expect("cloud worker present");
        let labels_u8 = data.batch_labels(indices);
        let labels = to_usize(&labels_u8);

        // Step 1: edge forward with early exit.
        let mut edge_tape = Tape::new();
        let out = edge.forward(&mut edge_tape, data.batch_tensor(indices), Mode::Train)?;
        let early_loss = edge_tape.softmax_cross_entropy(out.early_logits, &labels)?;
        let q = quantize_batch(edge_tape.value(out.features)?, split.bit_width, batch_id)?;
        let frame = Frame::features(q, labels_u8);
        Self::check_uplink(&split, &frame)?;
        let bytes = encode_frame(&frame)?;
        let bits = bytes.len() as u64 * 8;

        // Step 2: upload; edge backward and update run alongside the cloud.
        let d = self.config.timing.hierarchical(&split, indices.len(), bits, &self.channel);
        let depart = self.clock.now() + d.edge_fwd;
        let sent = self.channel.send_for(bits, d.comm, depart);
        totals.edge_loss += edge_tape.value(early_loss)?.data()[0].as_f64();
        totals.edge_batches += 1;
        edge_tape.backward(early_loss, &mut edge.store)?;
        self.config.optimizer.step(&mut edge.store, lr)?;

        match sent {
            Ok(delivery) => {
                // Cloud side: decode, forward, backward, update.
                let received = decode_frame(&bytes)?;
                let features = dequantize_batch::<T>(&received.batch);
                let mut cloud_tape = Tape::new();
                let logits = cloud.forward(&mut cloud_tape, features, Mode::Train)?;
                let loss = cloud_tape.softmax_cross_entropy(logits, &to_usize(&received.labels))?;
                totals.cloud_loss += cloud_tape.value(loss)?.data()[0].as_f64();
                totals.cloud_batches += 1;
                cloud_tape.backward(loss, &mut cloud.store)?;
                self.config.optimizer.step(&mut cloud.store, lr)?;
                totals.feature_bits += frame.feature_bits();
                totals.overhead_bits += frame.overhead_bits();
                let comm = delivery.arrival - depart;
                self.clock.advance(ComponentDurations { comm, ..d }.hierarchical());
            }
            Err(TransportError::ChannelDown { depart, arrival }) => {
                totals.skipped += 1;
                let now = self.clock.now();
                self.log_event(
                    EventKind::CloudSkipped,
                    batch_id,
                    now,
                    format!("upload failed [{depart:.9}, {arrival:.9}] s; edge-only step"),
                );
                self.clock.advance(d.edge_only());
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn step_fullcloud(&mut self, data: &Dataset, indices: &[usize], lr: f64, totals: &mut EpochTotals) -> Result<()> {
        let batch_id = self.take_batch_id();
        let frame = Frame::raw_input(
            data.batch_pixels(indices),
            data.batch_shape(indices.len()),
            data.batch_labels(indices),
            batch_id,
        );
        let bytes = encode_frame(&frame)?;
        let bits = bytes.len() as u64 * 8;
        let d = self.config.timing.fullcloud(&self.config.arch, indices.len(), bits, &self.channel);
        let depart = self.clock.now();
        match self.channel.send_for(bits, d.comm, depart) {
            Ok(delivery) => {
                let received = decode_frame(&bytes)?;
                let x = pixels_to_tensor::<T>(&received.batch.codes, received.batch.shape);
                let loss = self.full_step(x, &to_usize(&received.labels), lr)?;
                totals.cloud_loss += loss;
                totals.cloud_batches += 1;
                totals.feature_bits += frame.feature_bits();
                totals.overhead_bits += frame.overhead_bits();
                let comm = delivery.arrival - depart;
                self.clock.advance(ComponentDurations { comm, ..d }.fullcloud());
            }
            Err(TransportError::ChannelDown { depart: s, arrival: e }) => {
                totals.skipped += 1;
                self.log_event(EventKind::BatchLost, batch_id, depart, format!("upload failed [{s:.9}, {e:.9}] s"));
                let busy = self.channel.link_free_at() - depart;
                self.clock.advance(busy);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn step_monolithic(&mut self, data: &Dataset, indices: &[usize], lr: f64, totals: &mut EpochTotals) -> Result<()> {
        self.take_batch_id();
        let d = self.config.timing.fullcloud(&self.config.arch, indices.len(), 0, &self.channel);
        let loss = self.full_step(data.batch_tensor(indices), &to_usize(&data.batch_labels(indices)), lr)?;
        totals.cloud_loss += loss;
        totals.cloud_batches += 1;
        self.clock.advance(d.cloud_fwd + d.cloud_bwd);
        Ok(())
    }

    fn full_step(&mut self, x: Tensor<T>, labels: &[usize], lr: f64) -> Result<f64> {
        let Workers::Full(full) = &mut self.workers else { unreachable!() };
        let mut tape = Tape::new();
        let logits = full.forward(&mut tape, x, Mode::Train)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let value = tape.value(loss)?.data()[0].as_f64();
        tape.backward(loss, &mut full.store)?;
        self.config.optimizer.step(&mut full.store, lr)?;
        Ok(value)
    }

    fn eval_batches(&self, n: usize) -> Vec<Vec<usize>> {
        let idx: Vec<usize> = (0..n).collect();
        idx.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Final- and early-exit predictions for one batch, in eval mode. The
    /// final exit sees the same quantized features the uplink would carry.
    fn predict_both(&mut self, x: Tensor<T>) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
        match &mut self.workers {
            Workers::Split { edge, cloud } => {
                let bit_width = self.split.as_ref().expect("split").bit_width;
                let mut tape = Tape::new();
                let out = edge.forward(&mut tape, x, Mode::Eval)?;
                let early = tape.value(out.early_logits)?.argmax_rows()?;
                let q = quantize_batch(tape.value(out.features)?, bit_width, 0)?;
                let cloud = cloud.as_mut().expect("cloud worker present");
                let mut cloud_tape = Tape::new();
                let logits = cloud.forward(&mut cloud_tape, dequantize_batch(&q), Mode::Eval)?;
                Ok((cloud_tape.value(logits)?.argmax_rows()?, Some(early)))
            }
            Workers::Full(full) => {
                let mut tape = Tape::new();
                let logits = full.forward(&mut tape, x, Mode::Eval)?;
                Ok((tape.value(logits)?.argmax_rows()?, None))
            }
        }
    }

    /// Final-exit accuracy and, in split mode, early-exit accuracy.
    pub fn evaluate(&mut self, test: &Dataset) -> Result<Evaluation> {
        if test.is_empty() {
            return Ok(Evaluation { final_acc: 0.0, early_acc: None });
        }
        let mut final_pred = Vec::with_capacity(test.len());
        let mut early_pred = Vec::with_capacity(test.len());
        let mut has_early = false;
        for indices in self.eval_batches(test.len()) {
            let (f, e) = self.predict_both(test.batch_tensor(&indices))?;
            final_pred.extend(f);
            if let Some(e) = e {
                has_early = true;
                early_pred.extend(e);
            }
        }
        Ok(Evaluation {
            final_acc: accuracy(&final_pred, test.labels()),
            early_acc: has_early.then(|| accuracy(&early_pred, test.labels())),
        })
    }

    /// Classifies one batch whose upload departs after the edge forward pass
    /// starting at `start`. When the channel is down during the upload, the
    /// early exit answers if `fallback` is set; otherwise the failure is
    /// returned. Split mode only.
    pub fn infer(&mut self, images: Tensor<T>, start: u64, fallback: bool) -> Result<Inference> {
        let split = self.split.clone().ok_or_else(|| Error::Config("inference with fallback needs a split model".into()))?;
        let Workers::Split { edge, cloud } = &mut self.workers else { unreachable!() };
        let n = images.shape()[0];
        let mut tape = Tape::new();
        let out = edge.forward(&mut tape, images, Mode::Eval)?;
        let q = quantize_batch(tape.value(out.features)?, split.bit_width, 0)?;
        let frame = Frame::features(q, Vec::new());
        Self::check_uplink(&split, &frame)?;
        let bits = encode_frame(&frame)?.len() as u64 * 8;
        let d = self.config.timing.hierarchical(&split, n, bits, &self.channel);
        let depart = start + d.edge_fwd;
        let arrival = depart + d.comm;
        if self.channel.fails_during(depart, arrival) {
            if !fallback {
                return Err(TransportError::ChannelDown { depart: ps_to_secs(depart), arrival: ps_to_secs(arrival) }.into());
            }
            let predictions = tape.value(out.early_logits)?.argmax_rows()?;
            self.log_event(EventKind::EarlyExitFallback, 0, depart, "channel down during inference upload".into());
            return Ok(Inference { predictions, exit_used: ExitUsed::Early, done_at: depart });
        }
        let cloud = cloud.as_mut().expect("cloud worker present");
        let mut cloud_tape = Tape::new();
        let logits = cloud.forward(&mut cloud_tape, dequantize_batch(&frame.batch), Mode::Eval)?;
        let predictions = cloud_tape.value(logits)?.argmax_rows()?;
        Ok(Inference { predictions, exit_used: ExitUsed::Final, done_at: arrival + d.cloud_fwd })
    }

    /// Runs [`infer`](Self::infer) over `test` in batches, back to back in
    /// simulated time from `start_s` seconds.
    pub fn infer_dataset(&mut self, test: &Dataset, start_s: f64, fallback: bool) -> Result<InferenceReport> {
        let mut t = crate::clock::secs_to_ps(start_s);
        let mut predictions = Vec::with_capacity(test.len());
        let (mut final_batches, mut early_batches) = (0, 0);
        for indices in self.eval_batches(test.len()) {
            let inf = self.infer(test.batch_tensor(&indices), t, fallback)?;
            match inf.exit_used {
                ExitUsed::Final => final_batches += 1,
                ExitUsed::Early => early_batches += 1,
            }
            t = inf.done_at;
            predictions.extend(inf.predictions);
        }
        Ok(InferenceReport { accuracy: accuracy(&predictions, test.labels()), final_batches, early_batches, predictions })
    }

    /// Forward-only time of one epoch over `data` on the edge and on the
    /// cloud, in seconds. Simulated: sums of the timing model's forward
    /// durations. Wall clock: measured by running the forward passes.
    pub fn measure_forward_epoch(&mut self, data: &Dataset, wall_clock: bool) -> Result<(f64, f64)> {
        let mut edge_ps = 0u64;
        let mut cloud_ps = 0u64;
        let (mut edge_s, mut cloud_s) = (0.0, 0.0);
        for indices in self.eval_batches(data.len()) {
            let n = indices.len();
            match &self.split {
                Some(split) => {
                    let bits = self.uplink_bits(n);
                    let d = self.config.timing.hierarchical(split, n, bits, &self.channel);
                    edge_ps += d.edge_fwd;
                    cloud_ps += d.cloud_fwd;
                }
                None => {
                    let d = self.config.timing.fullcloud(&self.config.arch, n, data.sample_bits() * n as u64, &self.channel);
                    cloud_ps += d.cloud_fwd;
                }
            }
            if wall_clock {
                let (e, c) = self.time_forward(data.batch_tensor(&indices))?;
                edge_s += e;
                cloud_s += c;
            }
        }
        if wall_clock {
            Ok((edge_s, cloud_s))
        } else {
            Ok((ps_to_secs(edge_ps), ps_to_secs(cloud_ps)))
        }
    }

    /// Encoded size in bits of a feature frame for `n` samples.
    pub fn uplink_bits(&self, n: usize) -> u64 {
        match &self.split {
            Some(split) => {
                let count = n * split.compressed_elements();
                let code_bytes = crate::wire::packed_len(count, split.bit_width);
                (crate::wire::HEADER_BYTES + code_bytes + n) as u64 * 8
            }
            None => (crate::wire::HEADER_BYTES + n * self.config.arch.input_shape.iter().product::<usize>() + n) as u64 * 8,
        }
    }

    fn time_forward(&mut self, x: Tensor<T>) -> Result<(f64, f64)> {
        match &mut self.workers {
            Workers::Split { edge, cloud } => {
                let bit_width = self.split.as_ref().expect("split").bit_width;
                let started = Instant::now();
                let mut tape = Tape::new();
                let out = edge.forward(&mut tape, x, Mode::Eval)?;
                let q = quantize_batch(tape.value(out.features)?, bit_width, 0)?;
                let edge_s = started.elapsed().as_secs_f64();
                let features = dequantize_batch(&q);
                let started = Instant::now();
                let mut cloud_tape = Tape::new();
                cloud.as_mut().expect("cloud worker present").forward(&mut cloud_tape, features, Mode::Eval)?;
                Ok((edge_s, started.elapsed().as_secs_f64()))
            }
            Workers::Full(full) => {
                let started = Instant::now();
                let mut tape = Tape::new();
                full.forward(&mut tape, x, Mode::Eval)?;
                Ok((0.0, started.elapsed().as_secs_f64()))
            }
        }
    }
}

/// Metrics of a full run and the final session state.
pub struct TrainOutcome<T: Real> {
    pub metrics: Vec<EpochMetrics>,
    pub session: Session<T>,
}

/// Trains `config.epochs` epochs from scratch.
pub fn train<T: Real>(config: TrainingConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome<T>> {
    let mut session = Session::new(config)?;
    let metrics = session.train_until(session.config.epochs, train, test)?;
    Ok(TrainOutcome { metrics, session })
}

impl<T: Real> Session<T> {
    /// Trains until `epochs` epochs are complete.
    pub fn train_until(&mut self, epochs: usize, train: &Dataset, test: &Dataset) -> Result<Vec<EpochMetrics>> {
        let mut metrics = Vec::new();
        while self.epoch < epochs {
            let m = self.train_epoch(train, test)?;
            log::info!(
                "epoch {} final_acc={:.4} early_acc={} sim_time={:.6}s",
                m.epoch,
                m.final_acc,
                m.early_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                m.sim_time_s()
            );
            metrics.push(m);
        }
        Ok(metrics)
    }
}
