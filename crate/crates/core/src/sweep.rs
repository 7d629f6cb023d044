//! Grid search over temperature, regularization weight, head count and batch size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{self, TrainConfig};

/// Runs per grid point unless overridden.
pub const DEFAULT_SWEEP_RUNS: usize = 3;

/// τ ∈ {0.05, 0.10, …, 0.50}.
pub fn default_taus() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}

/// λ ∈ {0.1, 0.2, …, 1.0}.
pub fn default_lambdas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Batch sizes commonly tried per dataset.
pub const BATCH_SIZE_GRID: [usize; 5] = [8, 16, 32, 64, 96];

/// Divisors of `dim` in increasing order.
pub fn divisors(dim: usize) -> Vec<usize> {
    (1..=dim).filter(|&h| dim.is_multiple_of(h)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub heads: Vec<usize>,
    pub batch_sizes: Vec<usize>,
}

impl SweepGrid {
    /// Full τ and λ axes, every head count dividing `dim`, and the single given batch size.
    pub fn default_for(dim: usize, batch_size: usize) -> Self {
        Self { taus: default_taus(), lambdas: default_lambdas(), heads: divisors(dim), batch_sizes: vec![batch_size] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.lambdas.is_empty() || self.heads.is_empty() || self.batch_sizes.is_empty() {
            return Err(Error::ConfigInvalid("every sweep axis needs at least one value".into()));
        }
        if self.taus.iter().chain(&self.lambdas).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("sweep values must be finite".into()));
        }
        Ok(())
    }

    /// Grid points with τ varying slowest and batch size fastest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.taus.len() * self.lambdas.len() * self.heads.len() * self.batch_sizes.len());
        for &tau in &self.taus {
            for &lambda in &self.lambdas {
                for &heads in &self.heads {
                    for &batch_size in &self.batch_sizes {
                        out.push(SweepPoint { tau, lambda, heads, batch_size });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub lambda: f64,
    pub heads: usize,
    pub batch_size: usize,
}

impl SweepPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.loss.tau = self.tau;
        cfg.loss.lambda_reg = self.lambda;
        cfg.loss.heads = self.heads;
        cfg.batch_size = self.batch_size;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_index: usize,
    pub config: SweepPoint,
    /// Mean and sample standard deviation of the best dev metric across runs.
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub grid_index: usize,
    pub config: SweepPoint,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Successful points, best mean dev metric first; ties keep grid order.
    pub results: Vec<SweepRow>,
    pub winner: Option<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Trains every grid point with `runs` seeds and ranks by mean dev metric.
///
/// A point that fails is recorded in `failures` and does not stop the sweep.
pub fn sweep(grid: &SweepGrid, base: &TrainConfig, runs: usize, train: &Dataset, dev: Option<&Dataset>) -> Result<SweepReport> {
    grid.validate()?;
    if runs == 0 {
        return Err(Error::ConfigInvalid("sweep runs must be at least 1".into()));
    }
    let outcomes: Vec<(usize, SweepPoint, Result<trainer::Summary>)> = grid
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(i, point)| {
            let cfg = TrainConfig { runs, ..point.apply(base) };
            let summary = trainer::train_multi(&cfg, train, dev, None).map(|r| r.summary);
            (i, point, summary)
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (grid_index, config, outcome) in outcomes {
        match outcome {
            Ok(s) => results.push(SweepRow { grid_index, config, mean: s.best_dev.mean, std: s.best_dev.std, runs: s.runs }),
            Err(e) => failures.push(SweepFailure { grid_index, config, error: e.to_string() }),
        }
    }
    results.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    let winner = results.first().cloned();
    Ok(SweepReport { results, winner, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_axes() {
        let taus = default_taus();
        assert_eq!(taus.len(), 10);
        assert_eq!((taus[0], taus[2], taus[9]), (0.05, 0.15, 0.5));
        let lambdas = default_lambdas();
        assert_eq!(lambdas.len(), 10);
        assert_eq!((lambdas[0], lambdas[9]), (0.1, 1.0));
        assert_eq!(divisors(12), vec![1, 2, 3, 4, 6, 12]);
        assert_eq!(SweepGrid::default_for(12, 16).points().len(), 600);
        let grid = SweepGrid { batch_sizes: BATCH_SIZE_GRID.to_vec(), ..SweepGrid::default_for(4, 16) };
        assert_eq!(grid.points().len(), 10 * 10 * 3 * 5);
        assert_eq!(grid.points()[1].apply(&TrainConfig::default()).batch_size, 16);
    }

    #[test]
    fn empty_axis_rejected() {
        let grid = SweepGrid { taus: vec![], lambdas: vec![0.1], heads: vec![1], batch_sizes: vec![16] };
        assert!(matches!(grid.validate(), Err(Error::ConfigInvalid(_))));
    }
}
