use serde::{Deserialize, Serialize};

use crate::clock::{secs_to_ps, ComponentDurations};
use crate::costmodel::{backward_time_cloud, backward_time_edge, CostParams, HardwareSpec};
use crate::model::{ArchitectureSpec, SplitModel};
use crate::netsim::SimChannel;

/// FLOPs counted per multiply-accumulate.
pub const FLOPS_PER_MACC: f64 = 2.0;

/// Source of simulated per-batch component durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimingModel {
    /// Forward time = MACCs × 2 × batch / device FLOP/s; backward from the
    /// cost model; communication from the channel.
    Analytic { hardware: HardwareSpec, cost: CostParams },
    /// The same configured durations for every batch, communication included.
    Fixed(ComponentDurations),
}

fn forward_secs(maccs: u64, batch: usize, flops: f64) -> f64 {
    maccs as f64 * FLOPS_PER_MACC * batch as f64 / flops
}

impl TimingModel {
    pub fn hierarchical(&self, split: &SplitModel, batch: usize, frame_bits: u64, channel: &SimChannel) -> ComponentDurations {
        match self {
            TimingModel::Analytic { hardware, cost } => {
                let ef = forward_secs(split.edge_forward_maccs(), batch, hardware.edge_flops);
                let cf = forward_secs(split.cloud_forward_maccs(), batch, hardware.cloud_flops);
                ComponentDurations {
                    edge_fwd: secs_to_ps(ef),
                    edge_bwd: secs_to_ps(backward_time_edge(ef, split.edge_params(), hardware, cost)),
                    comm: channel.transfer_ps(frame_bits),
                    cloud_fwd: secs_to_ps(cf),
                    cloud_bwd: secs_to_ps(backward_time_cloud(cf, split.cloud_params(), hardware, cost)),
                }
            }
            TimingModel::Fixed(d) => *d,
        }
    }

    /// The whole network on the cloud; the edge terms are zero.
    pub fn fullcloud(&self, arch: &ArchitectureSpec, batch: usize, frame_bits: u64, channel: &SimChannel) -> ComponentDurations {
        match self {
            TimingModel::Analytic { hardware, cost } => {
                let cf = forward_secs(arch.total_maccs(), batch, hardware.cloud_flops);
                ComponentDurations {
                    comm: channel.transfer_ps(frame_bits),
                    cloud_fwd: secs_to_ps(cf),
                    cloud_bwd: secs_to_ps(backward_time_cloud(cf, arch.total_params(), hardware, cost)),
                    ..Default::default()
                }
            }
            TimingModel::Fixed(d) => ComponentDurations { edge_fwd: 0, edge_bwd: 0, ..*d },
        }
    }
}
