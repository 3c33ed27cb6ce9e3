//! Split-point selection under edge-memory, runtime and accuracy
//! requirements, using as few training runs as possible.
//!
//! Candidates pass four filters in turn: edge parameter count, estimated
//! runtime, measured one-epoch runtime, and (deepest first) accuracy after
//! full training. An absent requirement skips its filter.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{estimate_fullcloud, estimate_hierarchical, CommSpec, CostParams, HardwareSpec, SplitProfile};
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, SplitModel};
use crate::orchestrator::FLOPS_PER_MACC;

/// User criteria; each is optional.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirements {
    /// Maximum edge parameter count (exclusive bound).
    pub edge_memory: Option<u64>,
    /// Maximum training runtime in seconds (exclusive bound).
    pub runtime_s: Option<f64>,
    /// Minimum final accuracy in `(0, 1]` (exclusive bound).
    pub accuracy: Option<f64>,
}

impl Requirements {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.runtime_s {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::Config(format!("runtime requirement must be positive, got {r}")));
            }
        }
        if let Some(a) = self.accuracy {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("accuracy requirement must be in (0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// Expensive measurements the planner asks for.
pub trait CandidateTrainer {
    /// Wall or simulated seconds of one training epoch at `position`.
    fn one_epoch(&mut self, position: usize) -> Result<f64>;
    /// Final-exit accuracy after training `position` for the full run.
    fn full_train(&mut self, position: usize) -> Result<f64>;
}

/// Cheap per-candidate quantities known before any training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateInput {
    pub position: usize,
    /// Edge parameters including the compression convolution and exit head.
    pub edge_params: u64,
    /// Estimated runtime of one epoch, in seconds.
    pub t_calc_epoch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Memory,
    CalcRuntime,
    MeasuredRuntime,
    Accuracy,
    TrainerError,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Memory => "memory",
            Stage::CalcRuntime => "calc_runtime",
            Stage::MeasuredRuntime => "measured_runtime",
            Stage::Accuracy => "accuracy",
            Stage::TrainerError => "trainer_error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub position: usize,
    pub edge_params: u64,
    /// Estimated runtime of the whole run.
    pub t_calc: Option<f64>,
    /// Measured one-epoch runtime scaled to the whole run.
    pub t_exp: Option<f64>,
    pub accuracy: Option<f64>,
    pub rejected_by: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Chosen { position: usize },
    /// No accuracy requirement: every survivor of the runtime filters.
    Candidates { positions: Vec<usize> },
    NoFeasibleSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    /// Deepest first.
    pub s3: Vec<usize>,
    pub records: Vec<CandidateRecord>,
    pub decision: Decision,
    pub one_epoch_calls: usize,
    pub full_train_calls: usize,
}

impl PlanReport {
    pub fn chosen(&self) -> Option<usize> {
        match self.decision {
            Decision::Chosen { position } => Some(position),
            _ => None,
        }
    }

    pub fn records_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("position,edge_params,t_calc_s,t_exp_s,accuracy,rejected_by\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.position,
                r.edge_params,
                f(r.t_calc),
                f(r.t_exp),
                f(r.accuracy),
                r.rejected_by.map(|s| s.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

fn record(records: &mut [CandidateRecord], position: usize) -> &mut CandidateRecord {
    records.iter_mut().find(|r| r.position == position).expect("record for every candidate")
}

/// Positions whose edge parameter count is below the memory bound.
pub fn filter_by_memory(inputs: &[CandidateInput], req: &Requirements) -> Vec<usize> {
    inputs.iter().filter(|c| req.edge_memory.is_none_or(|m| c.edge_params < m)).map(|c| c.position).collect()
}

/// Members of `s1` whose estimated run time (`t_calc_epoch × epochs`) is
/// below the runtime bound.
pub fn filter_by_calc_runtime(s1: &[usize], inputs: &[CandidateInput], req: &Requirements, epochs: usize) -> Vec<usize> {
    s1.iter()
        .copied()
        .filter(|&p| {
            let c = inputs.iter().find(|c| c.position == p).expect("candidate input");
            req.runtime_s.is_none_or(|r| c.t_calc_epoch * (epochs as f64) < r)
        })
        .collect()
}

/// Trains each member of `s2` for one epoch and keeps those whose extrapolated
/// run time is below the bound, deepest first. Without a runtime bound no
/// training happens.
pub fn filter_by_measured_epoch(
    s2: &[usize],
    trainer: &mut dyn CandidateTrainer,
    req: &Requirements,
    epochs: usize,
    records: &mut [CandidateRecord],
    calls: &mut usize,
) -> Vec<usize> {
    let mut s3 = Vec::new();
    for &p in s2 {
        let Some(bound) = req.runtime_s else {
            s3.push(p);
            continue;
        };
        *calls += 1;
        match trainer.one_epoch(p) {
            Ok(t) => {
                let t_exp = t * epochs as f64;
                let rec = record(records, p);
                rec.t_exp = Some(t_exp);
                if t_exp < bound {
                    s3.push(p);
                } else {
                    rec.rejected_by = Some(Stage::MeasuredRuntime);
                }
            }
            Err(e) => {
                log::warn!("split {p}: one-epoch trial failed: {e}");
                record(records, p).rejected_by = Some(Stage::TrainerError);
            }
        }
    }
    s3.sort_unstable_by(|a, b| b.cmp(a));
    s3
}

/// Runs all four filters. `epochs` scales per-epoch runtimes to whole runs.
pub fn plan(
    inputs: &[CandidateInput],
    req: &Requirements,
    trainer: &mut dyn CandidateTrainer,
    epochs: usize,
) -> Result<PlanReport> {
    req.validate()?;
    let mut records: Vec<CandidateRecord> = inputs
        .iter()
        .map(|c| CandidateRecord {
            position: c.position,
            edge_params: c.edge_params,
            t_calc: Some(c.t_calc_epoch * epochs as f64),
            t_exp: None,
            accuracy: None,
            rejected_by: None,
        })
        .collect();

    let s1 = filter_by_memory(inputs, req);
    for r in records.iter_mut().filter(|r| !s1.contains(&r.position)) {
        r.rejected_by = Some(Stage::Memory);
    }
    let s2 = filter_by_calc_runtime(&s1, inputs, req, epochs);
    for &p in s1.iter().filter(|p| !s2.contains(p)) {
        record(&mut records, p).rejected_by = Some(Stage::CalcRuntime);
    }
    let mut one_epoch_calls = 0;
    let s3 = filter_by_measured_epoch(&s2, trainer, req, epochs, &mut records, &mut one_epoch_calls);

    let mut full_train_calls = 0;
    let decision = match req.accuracy {
        _ if s3.is_empty() => Decision::NoFeasibleSplit,
        None => Decision::Candidates { positions: s3.clone() },
        Some(bound) => {
            let mut chosen = None;
            for &p in &s3 {
                full_train_calls += 1;
                match trainer.full_train(p) {
                    Ok(acc) => {
                        let rec = record(&mut records, p);
                        rec.accuracy = Some(acc);
                        if acc > bound {
                            chosen = Some(p);
                            break;
                        }
                        rec.rejected_by = Some(Stage::Accuracy);
                    }
                    Err(e) => {
                        log::warn!("split {p}: full training failed: {e}");
                        record(&mut records, p).rejected_by = Some(Stage::TrainerError);
                    }
                }
            }
            chosen.map_or(Decision::NoFeasibleSplit, |position| Decision::Chosen { position })
        }
    };
    Ok(PlanReport { s1, s2, s3, records, decision, one_epoch_calls, full_train_calls })
}

/// Per-position inputs from the analytic cost model: forward time from MACCs
/// and device speed, backward and communication from the runtime estimate.
pub fn analytic_inputs(
    arch: &ArchitectureSpec,
    bit_width: u8,
    hw: &HardwareSpec,
    cost: &CostParams,
    bandwidth_bps: f64,
    samples: usize,
) -> Result<Vec<CandidateInput>> {
    arch.positions()
        .map(|p| {
            let split = SplitModel::new(arch, p, None, bit_width)?;
            let est = split_estimate(&split, hw, cost, bandwidth_bps, samples);
            Ok(CandidateInput { position: p, edge_params: split.edge_params(), t_calc_epoch: est.t_total })
        })
        .collect()
}

/// One-epoch runtime estimate of a split from its MACC and parameter counts.
pub fn split_estimate(
    split: &SplitModel,
    hw: &HardwareSpec,
    cost: &CostParams,
    bandwidth_bps: f64,
    samples: usize,
) -> crate::costmodel::RuntimeEstimate {
    let t_edge_fwd = split.edge_forward_maccs() as f64 * FLOPS_PER_MACC * samples as f64 / hw.edge_flops;
    let t_cloud_fwd = split.cloud_forward_maccs() as f64 * FLOPS_PER_MACC * samples as f64 / hw.cloud_flops;
    let profile = SplitProfile { edge_params: split.edge_params(), cloud_params: split.cloud_params() };
    let comm = CommSpec::per_epoch(split.comm_bits_per_sample(), samples, bandwidth_bps);
    estimate_hierarchical(t_edge_fwd, t_cloud_fwd, &profile, hw, cost, &comm)
}

/// One-epoch runtime estimate of training the whole network on the cloud
/// from raw 8-bit inputs.
pub fn fullcloud_estimate(
    arch: &ArchitectureSpec,
    hw: &HardwareSpec,
    cost: &CostParams,
    bandwidth_bps: f64,
    samples: usize,
) -> crate::costmodel::RuntimeEstimate {
    let t_cloud_fwd = arch.total_maccs() as f64 * FLOPS_PER_MACC * samples as f64 / hw.cloud_flops;
    let input_bits = arch.input_shape.iter().product::<usize>() as u64 * 8;
    let comm = CommSpec::per_epoch(input_bits, samples, bandwidth_bps);
    estimate_fullcloud(t_cloud_fwd, arch.total_params(), hw, cost, &comm)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        epoch_time: Vec<f64>,
        accuracy: Vec<f64>,
        one_epoch: Vec<usize>,
        full: Vec<usize>,
    }

    impl CandidateTrainer for Scripted {
        fn one_epoch(&mut self, p: usize) -> Result<f64> {
            self.one_epoch.push(p);
            Ok(self.epoch_time[p - 1])
        }
        fn full_train(&mut self, p: usize) -> Result<f64> {
            self.full.push(p);
            Ok(self.accuracy[p - 1])
        }
    }

    fn inputs(calc: &[f64]) -> Vec<CandidateInput> {
        calc.iter()
            .enumerate()
            .map(|(i, &t)| CandidateInput { position: i + 1, edge_params: 1000 * (i as u64 + 1), t_calc_epoch: t })
            .collect()
    }

    #[test]
    fn calc_filter_example() {
        let ins = inputs(&[10.0, 5.0, 7.0]);
        let req = Requirements { runtime_s: Some(8.0), ..Default::default() };
        assert_eq!(filter_by_calc_runtime(&[1, 2, 3], &ins, &req, 1), [2, 3]);
        let req = Requirements { runtime_s: Some(1.0), ..Default::default() };
        assert!(filter_by_calc_runtime(&[1, 2, 3], &ins, &req, 1).is_empty());
    }

    #[test]
    fn memory_filter() {
        let ins = inputs(&[1.0; 4]);
        assert_eq!(filter_by_memory(&ins, &Requirements { edge_memory: Some(2500), ..Default::default() }), [1, 2]);
        assert!(filter_by_memory(&ins, &Requirements { edge_memory: Some(0), ..Default::default() }).is_empty());
        assert_eq!(filter_by_memory(&ins, &Requirements::default()), [1, 2, 3, 4]);
    }

    #[test]
    fn deepest_accurate_split_with_one_full_run() {
        let mut t = Scripted {
            epoch_time: vec![1.0; 5],
            accuracy: vec![0.5, 0.7, 0.91, 0.93, 0.95],
            one_epoch: vec![],
            full: vec![],
        };
        let req = Requirements { runtime_s: Some(100.0), accuracy: Some(0.9), edge_memory: None };
        let report = plan(&inputs(&[1.0; 5]), &req, &mut t, 10).unwrap();
        assert_eq!(report.chosen(), Some(5));
        assert_eq!(report.s3, [5, 4, 3, 2, 1]);
        assert_eq!(t.full, [5]);
        assert_eq!(t.one_epoch.len(), 5);
    }

    #[test]
    fn skipped_loops() {
        let mut t = Scripted { epoch_time: vec![1.0; 3], accuracy: vec![1.0; 3], one_epoch: vec![], full: vec![] };
        let report = plan(&inputs(&[1.0; 3]), &Requirements::default(), &mut t, 1).unwrap();
        assert_eq!(report.decision, Decision::Candidates { positions: vec![3, 2, 1] });
        assert!(t.one_epoch.is_empty() && t.full.is_empty());
    }

    #[test]
    fn measured_order_and_rejection_trace() {
        let mut t = Scripted {
            epoch_time: vec![1.0, 1.0, 50.0, 1.0, 1.0, 1.0, 1.0],
            accuracy: vec![0.0; 7],
            one_epoch: vec![],
            full: vec![],
        };
        let req = Requirements { runtime_s: Some(10.0), accuracy: Some(0.5), edge_memory: Some(6500) };
        let report = plan(&inputs(&[0.5, 0.5, 0.5, 0.5, 20.0, 0.5, 0.5]), &req, &mut t, 1).unwrap();
        assert_eq!(report.s1, [1, 2, 3, 4, 5, 6]);
        assert_eq!(report.s2, [1, 2, 3, 4, 6]);
        assert_eq!(report.s3, [6, 4, 2, 1]);
        assert_eq!(report.decision, Decision::NoFeasibleSplit);
        let stage = |p: usize| report.records[p - 1].rejected_by;
        assert_eq!(stage(7), Some(Stage::Memory));
        assert_eq!(stage(5), Some(Stage::CalcRuntime));
        assert_eq!(stage(3), Some(Stage::MeasuredRuntime));
        assert_eq!(stage(1), Some(Stage::Accuracy));
        assert_eq!(t.full.len(), 4);
    }
}
