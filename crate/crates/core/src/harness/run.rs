use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EstimatorKind, ExperimentConfig};
use crate::covariance::EndogeneityModel;
use crate::error::Result;
use crate::estimators::{min_norm_interpolator, split_sample_lasso_iv, LassoIvOptions};
use crate::metrics::projected_rmse_model;
use crate::sampling::{rep_seed, sample_dataset, InstrumentDist};

/// ChaCha stream offset for the lasso-IV half split, above every data stream (`n`).
const SPLIT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub setup: String,
    pub n: usize,
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub projected_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub setup: String,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub reps: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single repetition).
    pub stdev: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub wall_clock_secs: f64,
}

impl ExperimentResult {
    pub fn aggregate_for(&self, n: usize, estimator: EstimatorKind) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n == n && a.estimator == estimator)
    }

    /// Means across the grid for one estimator, in grid order.
    pub fn means(&self, estimator: EstimatorKind) -> Vec<f64> {
        self.config
            .n_grid
            .iter()
            .filter_map(|&n| self.aggregate_for(n, estimator).map(|a| a.mean))
            .collect()
    }
}

/// Mean and spread per `(setup, n, estimator)`, summing repetitions in `rep` order.
pub fn aggregate(records: &[Record]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, usize, EstimatorKind)> =
        records.iter().map(|r| (r.setup.clone(), r.n, r.estimator)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(setup, n, estimator)| {
            let mut rows: Vec<&Record> = records
                .iter()
                .filter(|r| r.setup == setup && r.n == n && r.estimator == estimator)
                .collect();
            rows.sort_by_key(|r| r.rep);
            let k = rows.len();
            let mean = rows.iter().map(|r| r.projected_rmse).sum::<f64>() / k as f64;
            let stdev = if k > 1 {
                (rows.iter().map(|r| (r.projected_rmse - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            } else {
                0.0
            };
            Aggregate {
                setup,
                n,
                estimator,
                reps: k,
                mean,
                stdev,
                stderr: stdev / (k as f64).sqrt(),
            }
        })
        .collect()
}

/// The model a run uses at sample size `n`, with its endogenous coordinates.
pub fn prepared_model(cfg: &ExperimentConfig, n: usize) -> Result<(EndogeneityModel, Vec<usize>)> {
    let setup = cfg.setup.to_string();
    let spec = cfg.model_spec()?;
    let mut model = spec
        .build(n)
        .map_err(|e| e.context(format!("setup {setup}, n = {n}")))?
        .with_id(format!("{setup}-n{n}"));
    if cfg.estimators.iter().all(|e| *e == EstimatorKind::Ridgeless) {
        model = model.canonical();
    }
    let endo_idx = model.endogenous_indices();
    Ok((model, endo_idx))
}

/// Projected RMSE of every configured estimator on repetition `rep`; depends
/// on nothing but the config, `n` and `rep`.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    model: &EndogeneityModel,
    endo_idx: &[usize],
    n: usize,
    rep: usize,
) -> Result<Vec<(EstimatorKind, f64)>> {
    let seed = rep_seed(cfg.base_seed, rep as u64, n as u64);
    let data = sample_dataset(model, n, seed, cfg.instrument_dist)?;
    cfg.estimators
        .iter()
        .map(|&est| {
            let theta = match est {
                EstimatorKind::Ridgeless => min_norm_interpolator(&data.x, &data.y)?.theta_hat,
                EstimatorKind::LassoIv => {
                    let opts = LassoIvOptions {
                        seed: rep_seed(cfg.base_seed, rep as u64, SPLIT_STREAM + n as u64),
                        ..LassoIvOptions::default()
                    };
                    split_sample_lasso_iv(&data.x, &data.y, &data.w1, endo_idx, &opts)?.theta_hat
                }
            };
            Ok((est, projected_rmse_model(model, &theta)))
        })
        .collect()
}

/// Runs every `(n, repetition, estimator)` cell of the config.
///
/// Repetitions run in parallel; each draws from its own seed
/// `rep_seed(base_seed, rep, n)`, so results do not depend on the thread count.
/// Runs with only the ridgeless estimator work in the model's eigenbasis.
pub fn run_setup(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let setup = cfg.setup.to_string();
    let mut records = Vec::with_capacity(cfg.n_grid.len() * cfg.repetitions * cfg.estimators.len());
    for &n in &cfg.n_grid {
        let (model, endo_idx) = prepared_model(cfg, n)?;
        let cells = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(cfg, &model, &endo_idx, n, rep).map_err(|e| e.context(format!("setup {setup}, n = {n}, rep {rep}"))))
            .collect::<Result<Vec<_>>>()?;
        for (rep, row) in cells.into_iter().enumerate() {
            for (estimator, projected_rmse) in row {
                records.push(Record {
                    setup: setup.clone(),
                    n,
                    rep,
                    estimator,
                    projected_rmse,
                });
            }
        }
    }
    let aggregates = aggregate(&records);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        aggregates,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// The same config with Student-t instruments.
pub fn with_t_instruments(cfg: &ExperimentConfig, dof: f64) -> ExperimentConfig {
    ExperimentConfig {
        instrument_dist: InstrumentDist::StudentT { dof },
        ..cfg.clone()
    }
}
