//! Fitting a neural vector field to trajectory data.
//!
//! Training runs in two phases: Adam over shuffled mini-batches of short
//! overlapping windows, then full-batch L-BFGS with each trajectory as one
//! window. Window losses are independent and evaluated in parallel; their
//! results are always reduced in window order, so a run is reproducible
//! for a fixed thread count.

mod loss;
mod optim;
mod windows;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm2, Vector};
use crate::model::MlpDynamics;
use crate::projection::ConstraintSpec;

pub use loss::{window_loss, window_loss_grad, LossSpec, TrainingMode};
pub use optim::{
    lbfgs_minimize, Adam, AdamConfig, LbfgsConfig, LbfgsIteration, LbfgsOutcome, LbfgsStop,
};
pub use windows::{full_windows, make_windows, window_starts, Window, WindowRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    pub step_size: f64,
    pub soft_weight: f64,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    /// Skip the L-BFGS phase entirely.
    pub skip_lbfgs: bool,
    /// Seeds batch shuffling.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainingMode) -> Self {
        Self {
            mode,
            step_size: 0.01,
            soft_weight: LossSpec::DEFAULT_SOFT_WEIGHT,
            window: 10,
            stride: 5,
            batch_size: 32,
            epochs: 100,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            skip_lbfgs: false,
            seed: 0,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            mode: self.mode,
            step_size: self.step_size,
            soft_weight: self.soft_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.soft_weight >= 0.0) {
            return Err(Error::InvalidArgument(
                "soft weight must be non-negative".into(),
            ));
        }
        window_starts(self.window, self.window, self.stride).map(|_| ())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Adam epoch or L-BFGS iteration, counted from 1.
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Seconds since training started.
    pub wall_time: f64,
    /// Windows whose loss or gradient could not be evaluated.
    pub skipped_windows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpDynamics,
    pub history: Vec<EpochRecord>,
    pub lbfgs_stop: Option<LbfgsStop>,
}

/// Mean loss and gradient over a set of windows.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub loss: f64,
    pub grad: Vector,
    pub used: usize,
    pub skipped: usize,
}

/// Shared data for evaluating losses on one dataset.
pub struct Objective<'a> {
    dataset: &'a Dataset,
    constraints: Vec<ConstraintSpec>,
    spec: LossSpec,
}

impl<'a> Objective<'a> {
    pub fn new(dataset: &'a Dataset, spec: LossSpec) -> Result<Self> {
        let system = dataset.make_system()?;
        let constraints = dataset.constraints(&system)?;
        Ok(Self {
            dataset,
            constraints,
            spec,
        })
    }

    pub fn window(&self, w: &WindowRef) -> Window<'_> {
        w.view(self.dataset, &self.constraints)
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// Averages window losses and gradients, skipping windows whose
    /// rollout or projection fails. Errors only if every window fails.
    pub fn evaluate(&self, model: &MlpDynamics, windows: &[WindowRef]) -> Result<BatchEvaluation> {
        let results: Vec<Result<(f64, Vector)>> = windows
            .par_iter()
            .map(|w| window_loss_grad(model, &self.window(w), &self.spec))
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; model.param_count()];
        let mut used = 0;
        let mut last_error = None;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                    used += 1;
                }
                Err(e @ (Error::DimensionMismatch { .. } | Error::InvalidArgument(_))) => {
                    return Err(e)
                }
                Err(e) => last_error = Some(e),
            }
        }
        let skipped = windows.len() - used;
        if used == 0 {
            return Err(last_error
                .unwrap_or_else(|| Error::InvalidArgument("no windows to evaluate".into())));
        }
        let inv = 1.0 / used as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(BatchEvaluation {
            loss: loss * inv,
            grad,
            used,
            skipped,
        })
    }
}

/// Adam over shuffled mini-batches of windows.
pub fn train_adam(
    model: &MlpDynamics,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpDynamics, Vec<EpochRecord>)> {
    train_adam_timed(model, dataset, cfg, Instant::now())
}

fn train_adam_timed(
    model: &MlpDynamics,
    dataset: &Dataset,
    cfg: &TrainConfig,
    started: Instant,
) -> Result<(MlpDynamics, Vec<EpochRecord>)> {
    cfg.validate()?;
    let objective = Objective::new(dataset, cfg.loss_spec())?;
    let mut windows = make_windows(dataset, cfg.window, cfg.stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = model.clone();
    let mut adam = Adam::new(cfg.adam, model.param_count());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        windows.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut grad_sum = 0.0;
        let mut used = 0;
        let mut batches = 0;
        let mut skipped = 0;
        for batch in windows.chunks(cfg.batch_size) {
            let eval = match objective.evaluate(&model, batch) {
                Ok(e) => e,
                Err(e @ (Error::DimensionMismatch { .. } | Error::InvalidArgument(_))) => {
                    return Err(e)
                }
                Err(_) => {
                    skipped += batch.len();
                    continue;
                }
            };
            adam.step(&mut model.params, &eval.grad)?;
            if !all_finite(&model.params) {
                return Err(Error::TrainingAborted {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
            loss_sum += eval.loss * eval.used as f64;
            grad_sum += norm2(&eval.grad);
            used += eval.used;
            batches += 1;
            skipped += eval.skipped;
        }
        if used == 0 {
            return Err(Error::TrainingAborted {
                epoch,
                reason: "every window failed to evaluate".into(),
            });
        }
        history.push(EpochRecord {
            phase: Phase::Adam,
            epoch,
            loss: loss_sum / used as f64,
            grad_norm: grad_sum / batches as f64,
            wall_time: started.elapsed().as_secs_f64(),
            skipped_windows: skipped,
        });
    }
    Ok((model, history))
}

/// Full-batch L-BFGS with each trajectory treated as one window.
pub fn train_lbfgs(
    model: &MlpDynamics,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpDynamics, Vec<EpochRecord>, LbfgsStop)> {
    train_lbfgs_timed(model, dataset, cfg, Instant::now())
}

fn train_lbfgs_timed(
    model: &MlpDynamics,
    dataset: &Dataset,
    cfg: &TrainConfig,
    started: Instant,
) -> Result<(MlpDynamics, Vec<EpochRecord>, LbfgsStop)> {
    cfg.validate()?;
    let objective = Objective::new(dataset, cfg.loss_spec())?;
    let windows = full_windows(dataset);
    let mut probe = model.clone();
    let mut skipped_log = Vec::new();
    let outcome = lbfgs_minimize(
        |p: &[f64]| {
            probe.params.copy_from_slice(p);
            let eval = objective.evaluate(&probe, &windows)?;
            skipped_log.push(eval.skipped);
            if eval.skipped > 0 {
                // A partial average is a different objective; reject the point.
                return Err(Error::NonFinite("trajectory rollout".into()));
            }
            Ok((eval.loss, eval.grad))
        },
        model.params.clone(),
        &cfg.lbfgs,
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    let history = outcome
        .iterations
        .iter()
        .map(|it| EpochRecord {
            phase: Phase::Lbfgs,
            epoch: it.iteration + 1,
            loss: it.loss,
            grad_norm: it.grad_norm,
            wall_time: elapsed,
            skipped_windows: 0,
        })
        .collect();
    let model = MlpDynamics::from_params(model.arch.clone(), outcome.x)?;
    Ok((model, history, outcome.stop))
}

/// Adam followed by L-BFGS (unless disabled).
pub fn train(model: &MlpDynamics, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    let (model, mut history) = train_adam_timed(model, dataset, cfg, started)?;
    if cfg.skip_lbfgs || cfg.lbfgs.max_iterations == 0 {
        return Ok(TrainOutcome {
            model,
            history,
            lbfgs_stop: None,
        });
    }
    let (model, lbfgs_history, stop) = train_lbfgs_timed(&model, dataset, cfg, started)?;
    history.extend(lbfgs_history);
    Ok(TrainOutcome {
        model,
        history,
        lbfgs_stop: Some(stop),
    })
}

pub const LOSS_CSV_HEADER: &str = "phase,epoch,loss,grad_norm,wall_time";

/// Loss history as CSV. With `include_timing` off the `wall_time` column is
/// written as `0` so the file depends only on the inputs.
pub fn loss_history_csv(history: &[EpochRecord], include_timing: bool) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        let wall = if include_timing { r.wall_time } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?}",
            r.phase.name(),
            r.epoch,
            r.loss,
            r.grad_norm,
            wall
        );
    }
    out
}
