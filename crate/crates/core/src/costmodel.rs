//! Training-runtime estimates for split and full-cloud training from one
//! forward-pass duration, device speeds, optimizer cost and bandwidth.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::autodiff::Optimizer;

/// Quadro K620, FLOP/s.
pub const K620_FLOPS: f64 = 863.2e9;
/// GeForce RTX 2080 Ti, FLOP/s.
pub const RTX2080TI_FLOPS: f64 = 13.45e12;
pub const DEFAULT_ALPHA: f64 = 2.0;

/// Theoretical compute speed of each worker in FLOP/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    pub edge_flops: f64,
    pub cloud_flops: f64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec { edge_flops: K620_FLOPS, cloud_flops: RTX2080TI_FLOPS }
    }
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("edge_flops", self.edge_flops), ("cloud_flops", self.cloud_flops)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// `alpha`: backward/forward compute ratio. `beta`: update FLOPs per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
}

impl CostParams {
    pub fn for_optimizer(optimizer: &Optimizer) -> Self {
        CostParams { alpha: DEFAULT_ALPHA, beta: optimizer.update_flops_per_param() }
    }
}

/// `alpha · t_fwd + beta · params / flops`.
pub fn backward_time(t_fwd: f64, params: u64, flops: f64, cost: &CostParams) -> f64 {
    cost.alpha * t_fwd + cost.beta * params as f64 / flops
}

pub fn backward_time_edge(t_edge_fwd: f64, params_edge: u64, hw: &HardwareSpec, cost: &CostParams) -> f64 {
    backward_time(t_edge_fwd, params_edge, hw.edge_flops, cost)
}

/// Cloud counterpart of [`backward_time_edge`], scaling the cloud's own
/// forward time by alpha.
pub fn backward_time_cloud(t_cloud_fwd: f64, params_cloud: u64, hw: &HardwareSpec, cost: &CostParams) -> f64 {
    backward_time(t_cloud_fwd, params_cloud, hw.cloud_flops, cost)
}

pub fn comm_time(bits: f64, bandwidth_bps: f64) -> f64 {
    bits / bandwidth_bps
}

/// `edge_fwd + max(comm + cloud_fwd + cloud_bwd, edge_bwd)`, shared by the
/// estimator (seconds) and the simulator clock (picoseconds).
pub fn hierarchical_total<T: Copy + Add<Output = T> + PartialOrd>(
    edge_fwd: T,
    edge_bwd: T,
    comm: T,
    cloud_fwd: T,
    cloud_bwd: T,
) -> T {
    let cloud_branch = comm + cloud_fwd + cloud_bwd;
    edge_fwd + if cloud_branch >= edge_bwd { cloud_branch } else { edge_bwd }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Hierarchical,
    Fullcloud,
}

/// Parameter counts and uplink volume of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitProfile {
    /// Parameters updated on the edge (zero for full-cloud training).
    pub edge_params: u64,
    pub cloud_params: u64,
}

/// Data volume `D_comm` in bits and the uplink bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommSpec {
    pub bits: f64,
    pub bandwidth_bps: f64,
}

impl CommSpec {
    /// `bits_per_sample × samples`.
    pub fn per_epoch(bits_per_sample: u64, samples: usize, bandwidth_bps: f64) -> Self {
        CommSpec { bits: bits_per_sample as f64 * samples as f64, bandwidth_bps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeEstimate {
    pub mode: EstimateMode,
    pub t_edge_fwd: f64,
    pub t_edge_bwd: f64,
    pub t_cloud_fwd: f64,
    pub t_cloud_bwd: f64,
    pub t_comm: f64,
    pub t_total: f64,
}

impl RuntimeEstimate {
    /// Every component multiplied by `factor` (e.g. an epoch count).
    pub fn scaled(&self, factor: f64) -> Self {
        RuntimeEstimate {
            mode: self.mode,
            t_edge_fwd: self.t_edge_fwd * factor,
            t_edge_bwd: self.t_edge_bwd * factor,
            t_cloud_fwd: self.t_cloud_fwd * factor,
            t_cloud_bwd: self.t_cloud_bwd * factor,
            t_comm: self.t_comm * factor,
            t_total: self.t_total * factor,
        }
    }
}

pub fn estimate_hierarchical(
    t_edge_fwd: f64,
    t_cloud_fwd: f64,
    profile: &SplitProfile,
    hw: &HardwareSpec,
    cost: &CostParams,
    comm: &CommSpec,
) -> RuntimeEstimate {
    let t_edge_bwd = backward_time_edge(t_edge_fwd, profile.edge_params, hw, cost);
    let t_cloud_bwd = backward_time_cloud(t_cloud_fwd, profile.cloud_params, hw, cost);
    let t_comm = comm_time(comm.bits, comm.bandwidth_bps);
    RuntimeEstimate {
        mode: EstimateMode::Hierarchical,
        t_edge_fwd,
        t_edge_bwd,
        t_cloud_fwd,
        t_cloud_bwd,
        t_comm,
        t_total: hierarchical_total(t_edge_fwd, t_edge_bwd, t_comm, t_cloud_fwd, t_cloud_bwd),
    }
}

/// Whole network trained on the cloud; `comm_raw` carries the raw input bits.
pub fn estimate_fullcloud(
    t_cloud_fwd_full: f64,
    params_full: u64,
    hw: &HardwareSpec,
    cost: &CostParams,
    comm_raw: &CommSpec,
) -> RuntimeEstimate {
    let t_cloud_bwd = backward_time_cloud(t_cloud_fwd_full, params_full, hw, cost);
    let t_comm = comm_time(comm_raw.bits, comm_raw.bandwidth_bps);
    RuntimeEstimate {
        mode: EstimateMode::Fullcloud,
        t_edge_fwd: 0.0,
        t_edge_bwd: 0.0,
        t_cloud_fwd: t_cloud_fwd_full,
        t_cloud_bwd,
        t_comm,
        t_total: t_comm + t_cloud_fwd_full + t_cloud_bwd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn edge_backward_spot_value() {
        let hw = HardwareSpec::default();
        let cost = CostParams::for_optimizer(&Optimizer::adam());
        let t = backward_time_edge(1.0, 173_000, &hw, &cost);
        assert!(close(t - 2.0, 18.0 * 173_000.0 / 863.2e9, 1e-6));
        assert!(close(t, 2.000_003_607, 1e-9));
        assert_eq!(backward_time_edge(1.5, 0, &hw, &cost), 3.0);
        let unit = CostParams { alpha: 0.0, beta: 2.0 };
        let hw = HardwareSpec { edge_flops: 5e5, cloud_flops: 7e3 };
        assert_eq!(backward_time_edge(9.0, 500_000, &hw, &unit), 2.0);
        assert_eq!(backward_time_cloud(9.0, 7_000, &hw, &unit), 2.0);
    }

    #[test]
    fn cloud_backward_spot_value() {
        let hw = HardwareSpec::default();
        let cost = CostParams::for_optimizer(&Optimizer::sgd());
        let t = backward_time_cloud(0.5, 15_000_000, &hw, &cost);
        assert!(close(t, 1.0 + 2.0 * 15e6 / 13.45e12, 1e-12));
    }

    #[test]
    fn comm_examples() {
        assert!(close(comm_time(16384.0 * 50000.0, 1.1e6), 744.727_272_7, 1e-9));
        assert!(close(comm_time(16384.0 * 50000.0, 5.85e6), 140.034_188_0, 1e-9));
        assert_eq!(comm_time(0.0, 1.1e6), 0.0);
    }

    #[test]
    fn branches() {
        let hw = HardwareSpec { edge_flops: 1.0, cloud_flops: 1.0 };
        let cost = CostParams { alpha: 2.0, beta: 0.0 };
        let comm = CommSpec { bits: 2.0, bandwidth_bps: 1.0 };
        let profile = SplitProfile { edge_params: 0, cloud_params: 0 };
        // edge_bwd = 2, cloud_bwd = 1
        let est = estimate_hierarchical(1.0, 0.5, &profile, &hw, &cost, &comm);
        assert_eq!(est.t_total, 4.5);
        let cost = CostParams { alpha: 5.0, beta: 0.0 };
        let est = estimate_hierarchical(1.0, 0.1, &profile, &hw, &cost, &comm);
        assert_eq!(est.t_edge_bwd, 5.0);
        assert_eq!(est.t_total, 6.0);
    }

    #[test]
    fn fullcloud_sum() {
        let hw = HardwareSpec::default();
        let cost = CostParams::for_optimizer(&Optimizer::adam());
        let est = estimate_fullcloud(2.0, 0, &hw, &cost, &CommSpec { bits: 0.0, bandwidth_bps: 1.0 });
        assert_eq!(est.t_total, 6.0);
        let doubled = est.scaled(2.0);
        assert_eq!(doubled.t_total, 12.0);
    }
}
