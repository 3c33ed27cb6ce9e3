//! Simulated time. Durations are whole picoseconds so that accumulated epoch
//! totals are exact sums.

use serde::{Deserialize, Serialize};

use crate::costmodel::hierarchical_total;

pub const PS_PER_SECOND: f64 = 1e12;

/// Rounds a non-negative duration in seconds to picoseconds.
pub fn secs_to_ps(seconds: f64) -> u64 {
    debug_assert!(seconds >= 0.0, "negative duration {seconds}");
    (seconds * PS_PER_SECOND).round() as u64
}

pub fn ps_to_secs(ps: u64) -> f64 {
    ps as f64 / PS_PER_SECOND
}

/// Per-batch durations of the five pipeline components, in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDurations {
    pub edge_fwd: u64,
    pub edge_bwd: u64,
    pub comm: u64,
    pub cloud_fwd: u64,
    pub cloud_bwd: u64,
}

impl ComponentDurations {
    pub fn from_secs(edge_fwd: f64, edge_bwd: f64, comm: f64, cloud_fwd: f64, cloud_bwd: f64) -> Self {
        ComponentDurations {
            edge_fwd: secs_to_ps(edge_fwd),
            edge_bwd: secs_to_ps(edge_bwd),
            comm: secs_to_ps(comm),
            cloud_fwd: secs_to_ps(cloud_fwd),
            cloud_bwd: secs_to_ps(cloud_bwd),
        }
    }

    /// `edge_fwd + max(comm + cloud_fwd + cloud_bwd, edge_bwd)`.
    pub fn hierarchical(&self) -> u64 {
        hierarchical_total(self.edge_fwd, self.edge_bwd, self.comm, self.cloud_fwd, self.cloud_bwd)
    }

    /// `comm + cloud_fwd + cloud_bwd`.
    pub fn fullcloud(&self) -> u64 {
        self.comm + self.cloud_fwd + self.cloud_bwd
    }

    /// Edge forward and backward only, for batches whose upload failed.
    pub fn edge_only(&self) -> u64 {
        self.edge_fwd + self.edge_bwd
    }
}

/// Accumulated simulated time with pipeline depth one: each batch starts
/// when the previous batch's slower branch has finished.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: u64,
    batches: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn restore(now: u64, batches: u64) -> Self {
        VirtualClock { now, batches }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn now_secs(&self) -> f64 {
        ps_to_secs(self.now)
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    /// Advances by one batch of `elapsed` picoseconds and returns it.
    pub fn advance(&mut self, elapsed: u64) -> u64 {
        self.now += elapsed;
        self.batches += 1;
        elapsed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_branches() {
        let d = ComponentDurations::from_secs(1.0, 2.0, 2.0, 0.5, 1.0);
        assert_eq!(ps_to_secs(d.hierarchical()), 4.5);
        let d = ComponentDurations { edge_bwd: secs_to_ps(5.0), ..d };
        assert_eq!(ps_to_secs(d.hierarchical()), 6.0);
        assert_eq!(ps_to_secs(d.fullcloud()), 3.5);
    }

    #[test]
    fn clock_accumulates_exactly() {
        let d = ComponentDurations { edge_fwd: 3, edge_bwd: 7, comm: 5, cloud_fwd: 1, cloud_bwd: 2 };
        let mut clock = VirtualClock::new();
        for _ in 0..1000 {
            clock.advance(d.hierarchical());
        }
        assert_eq!(clock.now(), 1000 * (3 + 8));
        assert_eq!(clock.batches(), 1000);
    }
}
