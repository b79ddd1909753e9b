//! Training of the estimator on the relative predictive coding objective.
//!
//! Positive pairs come from the joint over (context-with-history, next
//! action), negatives from in-batch derangements. The objective is maximized
//! by running Adam on its negation, with global-norm gradient clipping.

mod adam;
mod backward;
mod gradcheck;
mod objective;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, OptimConfig};
pub use backward::{backward, batch_objective, BackwardOutput, Gradients, TextPairBatch};
pub use gradcheck::{finite_difference_check, GradCheck};
pub use objective::{rpc_grad_scores, rpc_objective};

use crate::dataset::{DatasetSplits, PairSampler};
pub use crate::estimator::RpcHyper;
use crate::estimator::{Dims, EstimatorParams, INIT_SCALE};
use crate::par::Exec;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub step_extension: bool,
    pub optim: OptimConfig,
    pub dims: Dims,
    pub shared_embedder: bool,
    pub init_scale: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            seed: 0,
            step_extension: true,
            optim: OptimConfig::default(),
            dims: Dims::default(),
            shared_embedder: true,
            init_scale: INIT_SCALE,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if self.optim.learning_rate.is_nan() || self.optim.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        self.dims.validate()
    }

    /// Fresh parameters for this config, seeded from `seed`.
    pub fn init_params(&self) -> Result<EstimatorParams> {
        EstimatorParams::init(
            self.dims,
            self.shared_embedder,
            self.init_scale,
            seed::derive(self.seed, 0),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_objective: f64,
    pub clamp_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: usize,
    /// Objective on the first batch, before any update.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub epochs: Vec<EpochStats>,
    pub clamp_count: u64,
    /// Number of epoch-to-epoch transitions where the mean objective rose.
    pub improving_transitions: usize,
    /// Reductions run in a fixed order, so reruns are bit-identical.
    pub deterministic: bool,
    pub exec: Exec,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub objective: f64,
    pub grad_norm: f64,
    pub clamped: u64,
}

/// Parameters plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: EstimatorParams,
    pub hyper: RpcHyper,
    pub optim: OptimConfig,
    pub exec: Exec,
    adam: Adam,
}

impl Trainer {
    pub fn new(
        params: EstimatorParams,
        hyper: RpcHyper,
        optim: OptimConfig,
        exec: Exec,
    ) -> Result<Self> {
        hyper.validate()?;
        if !params.all_finite() {
            return Err(Error::Numeric("initial parameters".into()));
        }
        let adam = Adam::new(&params, optim);
        Ok(Trainer {
            params,
            hyper,
            optim,
            exec,
            adam,
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One ascent step. Returns the objective measured before the update.
    pub fn step(&mut self, batch: &TextPairBatch) -> Result<StepStats> {
        let out = backward(&self.params, batch, &self.hyper, self.exec)?;
        let norm = out.grads.norm();
        let clip = self.optim.clip_norm;
        let scale = if clip > 0.0 && norm > clip {
            clip / norm
        } else {
            1.0
        };
        // descend on -J
        let mut dense = out.grads.to_dense(&self.params);
        dense.iter_mut().flatten().for_each(|g| *g = -*g);
        self.adam.update(&mut self.params, &dense, scale);
        if !self.params.all_finite() {
            return Err(Error::Numeric("parameters after update".into()));
        }
        let (lo, hi) = self.hyper.clamp_range();
        let clamped = out
            .s_pos
            .iter()
            .chain(&out.s_neg)
            .filter(|s| **s < lo || **s > hi)
            .count() as u64;
        Ok(StepStats {
            objective: out.objective,
            grad_norm: norm,
            clamped,
        })
    }
}

/// Trains for `epochs × ⌈|train| / batch_size⌉` steps.
pub fn train(
    splits: &DatasetSplits,
    params_init: EstimatorParams,
    hyper: &RpcHyper,
    config: &TrainConfig,
) -> Result<(EstimatorParams, TrainReport)> {
    config.validate()?;
    let records = &splits.train;
    if records.is_empty() {
        return Err(Error::TooFew {
            what: "training records",
            required: 2,
            got: 0,
        });
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(params_init, *hyper, config.optim, config.exec)?;
    let mut sampler = PairSampler::new(seed::derive(config.seed, 1));
    let per_epoch = records.len().div_ceil(config.batch_size);

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut initial = None;
    let mut step_index = 0usize;
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut clamps = 0;
        for _ in 0..per_epoch {
            let wrap = |e: Error| Error::Numeric(format!("training step {step_index}: {e}"));
            let batch = sampler.sample(records, config.batch_size, config.step_extension)?;
            let stats = trainer.step(&TextPairBatch::from(&batch)).map_err(wrap)?;
            initial.get_or_insert(stats.objective);
            sum += stats.objective;
            clamps += stats.clamped;
            step_index += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            steps: per_epoch,
            mean_objective: sum / per_epoch as f64,
            clamp_count: clamps,
        };
        log::info!(
            "epoch {} mean objective {:.6}",
            stats.epoch,
            stats.mean_objective
        );
        epochs.push(stats);
    }

    let improving = epochs
        .windows(2)
        .filter(|w| w[1].mean_objective >= w[0].mean_objective)
        .count();
    let report = TrainReport {
        seed: config.seed,
        steps: step_index,
        initial_objective: initial.unwrap_or(0.0),
        final_objective: epochs.last().map(|e| e.mean_objective).unwrap_or(0.0),
        clamp_count: epochs.iter().map(|e| e.clamp_count).sum(),
        improving_transitions: improving,
        deterministic: true,
        exec: config.exec,
        wall_time_secs: started.elapsed().as_secs_f64(),
        epochs,
    };
    Ok((trainer.params, report))
}
