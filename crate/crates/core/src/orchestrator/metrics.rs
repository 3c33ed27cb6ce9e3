use std::fmt;

use serde::Serialize;

use crate::clock::ps_to_secs;

/// Column order of `metrics.csv`. Wall-clock time is kept out of this file so
/// that simulated runs are reproducible byte for byte.
pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "edge_loss",
    "cloud_loss",
    "final_acc",
    "early_acc",
    "feature_bits",
    "overhead_bits",
    "sim_time_s",
    "skipped_batches",
];

/// First line of `metrics.csv`.
pub const METRICS_PREAMBLE: &str = "# edgesplit metrics v1; input = pixel/255";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean early-exit training loss; absent without an edge worker.
    pub edge_loss: Option<f64>,
    /// Mean final-exit training loss over delivered batches.
    pub cloud_loss: Option<f64>,
    pub final_acc: f64,
    pub early_acc: Option<f64>,
    /// Code bits of delivered uplink frames.
    pub feature_bits: u64,
    /// Header, label and padding bits of delivered uplink frames.
    pub overhead_bits: u64,
    /// Simulated duration of this epoch, in picoseconds.
    pub sim_time_ps: u64,
    /// Batches without a cloud step because delivery failed.
    pub skipped_batches: u64,
    pub wall_time_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

impl EpochMetrics {
    pub fn sim_time_s(&self) -> f64 {
        ps_to_secs(self.sim_time_ps)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{},{},{:.12},{}",
            self.epoch,
            opt(self.edge_loss),
            opt(self.cloud_loss),
            self.final_acc,
            self.early_acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
            self.feature_bits,
            self.overhead_bits,
            self.sim_time_s(),
            self.skipped_batches,
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_PREAMBLE}\n{}\n", METRICS_COLUMNS.join(","));
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn wall_time_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,wall_time_s\n");
    for r in rows {
        out.push_str(&format!("{},{:.6}\n", r.epoch, r.wall_time_s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Upload failed; the edge trained alone on this batch.
    CloudSkipped,
    /// Upload failed in full-cloud mode; the batch was not trained on.
    BatchLost,
    /// Inference answered from the early exit.
    EarlyExitFallback,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::CloudSkipped => "cloud_skipped",
            EventKind::BatchLost => "batch_lost",
            EventKind::EarlyExitFallback => "early_exit_fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub epoch: usize,
    pub batch_id: u32,
    pub time_ps: u64,
    pub kind: EventKind,
    pub detail: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} batch={} t={:.9}s kind={} detail=\"{}\"",
            self.epoch,
            self.batch_id,
            ps_to_secs(self.time_ps),
            self.kind.name(),
            self.detail
        )
    }
}
