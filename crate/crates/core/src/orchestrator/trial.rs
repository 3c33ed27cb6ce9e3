//! Planner trials run as simulated training sessions.

use std::collections::BTreeMap;

use super::{EpochMetrics, Session, TrainMode, TrainingConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::planner::CandidateTrainer;
use crate::tensor::Real;

/// Trains candidate splits on the simulated channel. A full run continues
/// the session left by the one-epoch trial at the same position.
pub struct SimTrainer<'a, T: Real> {
    base: TrainingConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    sessions: BTreeMap<usize, Session<T>>,
    metrics: BTreeMap<usize, Vec<EpochMetrics>>,
}

impl<'a, T: Real> SimTrainer<'a, T> {
    pub fn new(base: TrainingConfig, train: &'a Dataset, test: &'a Dataset) -> Self {
        SimTrainer { base, train, test, sessions: BTreeMap::new(), metrics: BTreeMap::new() }
    }

    /// Per-epoch metrics recorded for each position tried.
    pub fn metrics(&self) -> &BTreeMap<usize, Vec<EpochMetrics>> {
        &self.metrics
    }

    fn session(&mut self, position: usize) -> Result<&mut Session<T>> {
        if !self.sessions.contains_key(&position) {
            let config = TrainingConfig { position, mode: TrainMode::Hierarchical, ..self.base.clone() };
            self.sessions.insert(position, Session::new(config)?);
        }
        Ok(self.sessions.get_mut(&position).expect("inserted above"))
    }

    fn run(&mut self, position: usize, epochs: usize) -> Result<Vec<EpochMetrics>> {
        let (train, test) = (self.train, self.test);
        let m = self.session(position)?.train_until(epochs, train, test)?;
        self.metrics.entry(position).or_default().extend(m.iter().cloned());
        Ok(m)
    }
}

impl<T: Real> CandidateTrainer for SimTrainer<'_, T> {
    fn one_epoch(&mut self, position: usize) -> Result<f64> {
        let m = self.run(position, 1)?;
        Ok(m.first().map_or(0.0, |m| m.sim_time_s()))
    }

    fn full_train(&mut self, position: usize) -> Result<f64> {
        let epochs = self.base.epochs;
        self.run(position, epochs)?;
        let m = self.metrics.get(&position).and_then(|m| m.last());
        Ok(m.map_or(0.0, |m| m.final_acc))
    }
}
