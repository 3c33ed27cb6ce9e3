//! Hierarchical training with the cloud worker on its own thread behind a
//! TCP socket. The edge uploads a frame, then runs its backward pass and
//! update while the cloud trains; the cloud answers each frame with a
//! one-byte acknowledgment, which carries no payload.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::{EpochTotals, EventKind, Session, Workers};
use crate::autodiff::{Optimizer, Tape};
use crate::clock::ComponentDurations;
use crate::error::{Error, Result, TransportError};
use crate::model::{CloudModel, Mode};
use crate::netsim::{read_frame, write_frame};
use crate::orchestrator::EpochMetrics;
use crate::quant::{dequantize_batch, quantize_batch};
use crate::tensor::Real;
use crate::data::Dataset;
use crate::wire::{decode_frame, encode_frame, Frame, FrameKind};

const ACK: u8 = 0x06;

/// Measured wall-clock durations of one socket-mode batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocketBatchTiming {
    pub edge_fwd: Duration,
    pub comm: Duration,
    pub edge_bwd: Duration,
    pub cloud_fwd: Duration,
    pub cloud_bwd: Duration,
    /// From the start of the edge forward pass until both branches finished.
    pub total: Duration,
}

impl SocketBatchTiming {
    pub fn sequential_bound(&self) -> Duration {
        self.edge_fwd + self.comm + self.edge_bwd + self.cloud_fwd + self.cloud_bwd
    }
}

struct CloudReport {
    loss: f64,
    received_at: Instant,
    fwd: Duration,
    bwd: Duration,
}

fn serve_cloud<T: Real>(
    stream: &mut TcpStream,
    cloud: &mut CloudModel<T>,
    optimizer: &Optimizer,
    lr: f64,
    reports: &mpsc::Sender<CloudReport>,
) -> Result<()> {
    loop {
        let bytes = read_frame(stream)?.ok_or_else(|| TransportError::Protocol("uplink closed without end frame".into()))?;
        let received_at = Instant::now();
        let frame = decode_frame(&bytes)?;
        match frame.kind {
            FrameKind::End => return Ok(()),
            FrameKind::RawInput => return Err(TransportError::Protocol("raw input frame on the split uplink".into()).into()),
            FrameKind::Features => {}
        }
        let started = Instant::now();
        let mut tape = Tape::new();
        let logits = cloud.forward(&mut tape, dequantize_batch(&frame.batch), Mode::Train)?;
        let labels: Vec<usize> = frame.labels.iter().map(|&l| l as usize).collect();
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        let value = tape.value(loss)?.data()[0].as_f64();
        let fwd = started.elapsed();
        let started = Instant::now();
        tape.backward(loss, &mut cloud.store)?;
        optimizer.step(&mut cloud.store, lr)?;
        let bwd = started.elapsed();
        reports
            .send(CloudReport { loss: value, received_at, fwd, bwd })
            .map_err(|_| TransportError::Protocol("edge stopped listening".into()))?;
        stream.write_all(&[ACK]).map_err(TransportError::from)?;
    }
}

impl<T: Real> Session<T> {
    pub(crate) fn train_epoch_socket(&mut self, train: &Dataset, test: &Dataset, address: &str) -> Result<EpochMetrics> {
        let wall = Instant::now();
        let start = self.clock.now();
        let lr = self.config.lr_at(self.epoch)?;
        let listener = TcpListener::bind(address).map_err(TransportError::from)?;
        let addr = listener.local_addr().map_err(TransportError::from)?;
        let Workers::Split { cloud, .. } = &mut self.workers else {
            return Err(Error::Config("socket transport needs a split model".into()));
        };
        let mut cloud_model = cloud.take().expect("cloud worker present");
        let optimizer = self.config.optimizer;
        let (tx, rx) = mpsc::channel();
        let server = thread::spawn(move || {
            let result = listener
                .accept()
                .map_err(|e| Error::from(TransportError::from(e)))
                .and_then(|(mut stream, _)| serve_cloud(&mut stream, &mut cloud_model, &optimizer, lr, &tx));
            (cloud_model, result)
        });

        let mut totals = EpochTotals::default();
        let edge_result = TcpStream::connect(addr).map_err(|e| Error::from(TransportError::from(e))).and_then(|mut stream| {
            stream.set_nodelay(true).map_err(TransportError::from)?;
            let result = self.socket_batches(&mut stream, train, lr, &rx, &mut totals);
            // Always close the stream so the cloud thread finishes.
            let end = encode_frame(&Frame::end(self.next_batch_id))?;
            let _ = write_frame(&mut stream, &end);
            result
        });
        let (cloud_model, cloud_result) =
            server.join().map_err(|_| TransportError::Protocol("cloud worker panicked".into()))?;
        if let Workers::Split { cloud, .. } = &mut self.workers {
            *cloud = Some(cloud_model);
        }
        edge_result?;
        cloud_result?;

        let sim_time_ps = self.clock.now() - start;
        let eval = self.evaluate(test)?;
        self.epoch += 1;
        Ok(self.epoch_metrics(totals, eval, sim_time_ps, wall.elapsed().as_secs_f64()))
    }

    fn socket_batches(
        &mut self,
        stream: &mut TcpStream,
        train: &Dataset,
        lr: f64,
        reports: &mpsc::Receiver<CloudReport>,
        totals: &mut EpochTotals,
    ) -> Result<()> {
        let split = self.split.clone().expect("split");
        self.socket_timings.clear();
        for indices in self.epoch_batches(train.len(), self.epoch) {
            let batch_id = self.take_batch_id();
            let Workers::Split { edge, .. } = &mut self.workers else { unreachable!() };
            let labels_u8 = train.batch_labels(&indices);
            let labels: Vec<usize> = labels_u8.iter().map(|&l| l as usize).collect();

            let t0 = Instant::now();
            let mut tape = Tape::new();
            let out = edge.forward(&mut tape, train.batch_tensor(&indices), Mode::Train)?;
            let early_loss = tape.softmax_cross_entropy(out.early_logits, &labels)?;
            let q = quantize_batch(tape.value(out.features)?, split.bit_width, batch_id)?;
            let frame = Frame::features(q, labels_u8);
            Self::check_uplink(&split, &frame)?;
            let bytes = encode_frame(&frame)?;
            let edge_fwd = t0.elapsed();

            let bits = bytes.len() as u64 * 8;
            let d = self.config.timing.hierarchical(&split, indices.len(), bits, &self.channel);
            let depart = self.clock.now() + d.edge_fwd;
            let sent = self.channel.send_for(bits, d.comm, depart);

            let upload_start = Instant::now();
            if sent.is_ok() {
                write_frame(stream, &bytes)?;
            }
            let t1 = Instant::now();
            totals.edge_loss += tape.value(early_loss)?.data()[0].as_f64();
            totals.edge_batches += 1;
            let Workers::Split { edge, .. } = &mut self.workers else { unreachable!() };
            tape.backward(early_loss, &mut edge.store)?;
            self.config.optimizer.step(&mut edge.store, lr)?;
            let edge_bwd = t1.elapsed();

            match sent {
                Ok(delivery) => {
                    let mut ack = [0u8; 1];
                    stream.read_exact(&mut ack).map_err(TransportError::from)?;
                    if ack[0] != ACK {
                        return Err(TransportError::Protocol(format!("unexpected acknowledgment byte {:#04x}", ack[0])).into());
                    }
                    let total = t0.elapsed();
                    let report = reports.recv().map_err(|_| TransportError::Protocol("cloud report missing".into()))?;
                    totals.cloud_loss += report.loss;
                    totals.cloud_batches += 1;
                    totals.feature_bits += frame.feature_bits();
                    totals.overhead_bits += frame.overhead_bits();
                    self.socket_timings.push(SocketBatchTiming {
                        edge_fwd,
                        comm: report.received_at.saturating_duration_since(upload_start),
                        edge_bwd,
                        cloud_fwd: report.fwd,
                        cloud_bwd: report.bwd,
                        total,
                    });
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
        }
        Ok(())
    }
}
