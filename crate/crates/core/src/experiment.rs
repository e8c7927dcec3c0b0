//! Long-horizon evaluation, report schemas and the mode comparison matrix.
//!
//! Evaluation draws fresh initial conditions from the system sampler on a
//! stream disjoint from training data, integrates the true dynamics at the
//! reference step as ground truth, and rolls the model out under the
//! requested mode.
//!
//! Report files:
//!
//! * `EvalReport` JSON, `schema_version` 1. Error fields are `null` when the
//!   run diverged; `inference_seconds_per_batch` is `null` when timing was
//!   disabled. One batch is the full evaluation set.
//! * Trajectory CSV: `trajectory,source,t,u0..u{n-1},g0..g{m-1}` where
//!   `source` is `truth` or `model`. Diverged samples are written as `NaN`.
//! * Comparison CSV: one row per mode, columns [`COMPARE_COLUMNS`]. Missing
//!   values are empty fields.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{trajectory_rng, Dataset, EVAL_STREAM_OFFSET, H_REF};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm2, Vector};
use crate::metrics::{mean_rel_state_error, mean_sq_constraint_error, mean_std};
use crate::model::{Architecture, Dynamics, MlpDynamics};
use crate::odeint::{constrained_step, integrate, step_count, StepMode, StepperConfig, Trajectory};
use crate::projection::ConstraintSpec;
use crate::systems::DynamicalSystem;
use crate::training::{train, EpochRecord, TrainConfig, TrainingMode};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_eval: usize,
    /// End of the evaluation window; the system's inference horizon if unset.
    pub horizon: Option<f64>,
    pub step_size: f64,
    /// Spacing of the compared save points.
    pub save_interval: f64,
    pub seed: u64,
    /// Measure single-threaded inference time after an untimed warm-up.
    pub timing: bool,
    /// State norm beyond which a rollout counts as diverged.
    pub blowup_norm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_eval: 8,
            horizon: None,
            step_size: 0.01,
            save_interval: 0.1,
            seed: 0,
            timing: true,
            blowup_norm: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub system: String,
    pub mode: String,
    pub gamma: Option<f64>,
    pub n_eval: usize,
    pub horizon: f64,
    pub step_size: f64,
    pub save_interval: f64,
    pub seed: u64,
    pub mean_rel_state_error: Option<f64>,
    pub std_rel_state_error: Option<f64>,
    pub mean_sq_constraint_error: Option<f64>,
    pub std_sq_constraint_error: Option<f64>,
    pub inference_seconds_per_batch: Option<f64>,
    pub diverged: bool,
    pub diverged_trajectories: usize,
    /// Earliest time at which any evaluation rollout diverged.
    pub first_divergence_time: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported report schema version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

/// A model or reference rollout that may have stopped early.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Full save grid; samples after a divergence are `NaN`.
    pub trajectory: Trajectory,
    pub diverged_at: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub truths: Vec<Trajectory>,
    pub predictions: Vec<Rollout>,
    pub constraints: Vec<ConstraintSpec>,
}

/// Integrates `model` under `mode`, stopping at the first non-finite state,
/// failed projection, or state norm above `blowup_norm`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<D: Dynamics + ?Sized>(
    model: &D,
    u0: &[f64],
    horizon: f64,
    h: f64,
    save_every: usize,
    mode: &StepMode,
    c: &ConstraintSpec,
    blowup_norm: f64,
) -> Result<Rollout> {
    if save_every == 0 {
        return Err(Error::InvalidArgument(
            "save_every must be at least 1".into(),
        ));
    }
    let steps = step_count(horizon, h)?;
    if steps % save_every != 0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not a whole number of save intervals"
        )));
    }
    let f = |u: &[f64], t: f64| model.rhs(u, t);
    let n_saves = steps / save_every;
    let mut times = Vec::with_capacity(n_saves + 1);
    let mut states = Vec::with_capacity(n_saves + 1);
    times.push(0.0);
    states.push(u0.to_vec());
    let mut u = u0.to_vec();
    let mut diverged_at = None;
    for step in 0..steps {
        let t = step as f64 * h;
        let next = match constrained_step(&f, &u, t, h, mode, Some(c)) {
            Ok(next) => next,
            Err(
                Error::NonFinite(_)
                | Error::BlowUp { .. }
                | Error::NotConverged { .. }
                | Error::ProjectionDiverged { .. }
                | Error::NotPositiveDefinite { .. },
            ) => {
                diverged_at = Some(t + h);
                break;
            }
            Err(e) => return Err(e),
        };
        if !all_finite(&next) || !(norm2(&next) <= blowup_norm) {
            diverged_at = Some(t + h);
            break;
        }
        u = next;
        if (step + 1) % save_every == 0 {
            times.push((step + 1) as f64 * h);
            states.push(u.clone());
        }
    }
    while times.len() < n_saves + 1 {
        times.push((times.len() * save_every) as f64 * h);
        states.push(vec![f64::NAN; u0.len()]);
    }
    Ok(Rollout {
        trajectory: Trajectory::new(times, states)?,
        diverged_at,
    })
}

fn save_every(interval: f64, h: f64) -> Result<usize> {
    let k = step_count(interval, h)?;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "save interval {interval} is shorter than the step {h}"
        )));
    }
    Ok(k)
}

/// Fresh initial conditions for evaluation, on a stream disjoint from the
/// training trajectories of the same seed.
pub fn eval_initial_conditions(system: &DynamicalSystem, n: usize, seed: u64) -> Vec<Vector> {
    (0..n)
        .map(|i| system.sample_ic(&mut trajectory_rng(seed, EVAL_STREAM_OFFSET + i as u64)))
        .collect()
}

pub fn evaluate<D: Dynamics + ?Sized>(
    model: &D,
    system: &DynamicalSystem,
    mode: TrainingMode,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if model.dim() != system.dim() {
        return Err(Error::CheckpointMismatch(format!(
            "model state dimension {} does not match {} ({})",
            model.dim(),
            system.name(),
            system.dim()
        )));
    }
    if cfg.n_eval == 0 {
        return Err(Error::InvalidArgument(
            "need at least one evaluation trajectory".into(),
        ));
    }
    let horizon = cfg.horizon.unwrap_or(system.inference_end);
    let model_every = save_every(cfg.save_interval, cfg.step_size)?;
    let truth_every = save_every(cfg.save_interval, H_REF)?;
    let step_mode = mode.step_mode();

    let ics = eval_initial_conditions(system, cfg.n_eval, cfg.seed);
    let constraints = ics
        .iter()
        .map(|u0| system.constraint(u0, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let truth_rhs = |u: &[f64], t: f64| system.true_rhs(u, t);
    let truths = ics
        .par_iter()
        .map(|u0| {
            integrate(
                &truth_rhs,
                u0,
                0.0,
                horizon,
                &StepperConfig::plain(H_REF),
                None,
                truth_every,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let run = |i: usize| {
        rollout(
            model,
            &ics[i],
            horizon,
            cfg.step_size,
            model_every,
            &step_mode,
            &constraints[i],
            cfg.blowup_norm,
        )
    };
    let predictions = (0..ics.len())
        .into_par_iter()
        .map(run)
        .collect::<Result<Vec<_>>>()?;
    let seconds = if cfg.timing {
        // The parallel pass above doubles as the warm-up.
        let start = Instant::now();
        for i in 0..ics.len() {
            run(i)?;
        }
        Some(start.elapsed().as_secs_f64())
    } else {
        None
    };

    let mut rel = Vec::new();
    let mut cons = Vec::new();
    for ((pred, truth), c) in predictions.iter().zip(&truths).zip(&constraints) {
        if pred.diverged_at.is_some() {
            continue;
        }
        if let (Some(r), Some(g)) = (
            mean_rel_state_error(&pred.trajectory, truth)?,
            mean_sq_constraint_error(&pred.trajectory, c)?,
        ) {
            rel.push(r);
            cons.push(g);
        }
    }
    let diverged_trajectories = cfg.n_eval - rel.len();
    let diverged = diverged_trajectories > 0;
    let first_divergence_time = predictions
        .iter()
        .filter_map(|p| p.diverged_at)
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.min(t)))
        });
    let (rel_stats, cons_stats) = if diverged {
        (None, None)
    } else {
        (mean_std(&rel), mean_std(&cons))
    };
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        system: system.name().to_string(),
        mode: mode.name().to_string(),
        gamma: mode.gamma(),
        n_eval: cfg.n_eval,
        horizon,
        step_size: cfg.step_size,
        save_interval: cfg.save_interval,
        seed: cfg.seed,
        mean_rel_state_error: rel_stats.map(|s| s.0),
        std_rel_state_error: rel_stats.map(|s| s.1),
        mean_sq_constraint_error: cons_stats.map(|s| s.0),
        std_sq_constraint_error: cons_stats.map(|s| s.1),
        inference_seconds_per_batch: seconds,
        diverged,
        diverged_trajectories,
        first_divergence_time,
    };
    Ok(Evaluation {
        report,
        truths,
        predictions,
        constraints,
    })
}

/// One row of the trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub trajectory: usize,
    pub source: String,
    pub t: f64,
    pub u: Vector,
    pub g: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub state_dim: usize,
    pub constraint_count: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn from_evaluation(eval: &Evaluation) -> Self {
        let state_dim = eval.truths.first().map_or(0, Trajectory::dim);
        let constraint_count = eval.constraints.first().map_or(0, ConstraintSpec::count);
        let mut rows = Vec::new();
        for (k, ((truth, pred), c)) in eval
            .truths
            .iter()
            .zip(&eval.predictions)
            .zip(&eval.constraints)
            .enumerate()
        {
            for (source, tr) in [("truth", truth), ("model", &pred.trajectory)] {
                for (t, u) in tr.times.iter().zip(&tr.states) {
                    rows.push(TrajectoryRow {
                        trajectory: k,
                        source: source.to_string(),
                        t: *t,
                        u: u.clone(),
                        g: c.residual(u, *t),
                    });
                }
            }
        }
        Self {
            state_dim,
            constraint_count,
            rows,
        }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("trajectory,source,t");
        for i in 0..self.state_dim {
            let _ = write!(h, ",u{i}");
        }
        for i in 0..self.constraint_count {
            let _ = write!(h, ",g{i}");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{:?}", r.trajectory, r.source, r.t);
            for v in r.u.iter().chain(&r.g) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[..3] != ["trajectory", "source", "t"] {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let state_dim = cols.iter().filter(|c| c.starts_with('u')).count();
        let constraint_count = cols.iter().filter(|c| c.starts_with('g')).count();
        if 3 + state_dim + constraint_count != cols.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    cols.len(),
                    fields.len()
                )));
            }
            let trajectory = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad trajectory index {:?}", fields[0])))?;
            let nums = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| bad(format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(TrajectoryRow {
                trajectory,
                source: fields[1].to_string(),
                t: nums[0],
                u: nums[1..1 + state_dim].to_vec(),
                g: nums[1 + state_dim..].to_vec(),
            });
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "no trajectory rows".into(),
            });
        }
        Ok(Self {
            state_dim,
            constraint_count,
            rows,
        })
    }
}

pub const COMPARE_COLUMNS: [&str; 11] = [
    "system",
    "mode",
    "gamma",
    "train_time_end",
    "inference_time_end",
    "mean_rel_state_error",
    "std_rel_state_error",
    "mean_sq_constraint_error",
    "std_sq_constraint_error",
    "inference_seconds_per_batch",
    "diverged",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub system: String,
    pub mode: String,
    pub gamma: Option<f64>,
    pub train_time_end: f64,
    pub inference_time_end: f64,
    pub mean_rel_state_error: Option<f64>,
    pub std_rel_state_error: Option<f64>,
    pub mean_sq_constraint_error: Option<f64>,
    pub std_sq_constraint_error: Option<f64>,
    pub inference_seconds_per_batch: Option<f64>,
    pub diverged: bool,
}

impl CompareRow {
    pub fn from_report(report: &EvalReport, train_time_end: f64) -> Self {
        Self {
            system: report.system.clone(),
            mode: report.mode.clone(),
            gamma: report.gamma,
            train_time_end,
            inference_time_end: report.horizon,
            mean_rel_state_error: report.mean_rel_state_error,
            std_rel_state_error: report.std_rel_state_error,
            mean_sq_constraint_error: report.mean_sq_constraint_error,
            std_sq_constraint_error: report.std_sq_constraint_error,
            inference_seconds_per_batch: report.inference_seconds_per_batch,
            diverged: report.diverged,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = COMPARE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{},{},{},{},{},{}",
            r.system,
            r.mode,
            opt(r.gamma),
            r.train_time_end,
            r.inference_time_end,
            opt(r.mean_rel_state_error),
            opt(r.std_rel_state_error),
            opt(r.mean_sq_constraint_error),
            opt(r.std_sq_constraint_error),
            opt(r.inference_seconds_per_batch),
            r.diverged
        );
    }
    out
}

pub fn parse_compare_csv(text: &str) -> Result<Vec<CompareRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == COMPARE_COLUMNS.join(",") => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != COMPARE_COLUMNS.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                COMPARE_COLUMNS.len(),
                f.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            f[j].parse()
                .map_err(|_| bad(format!("bad {} value {:?}", COMPARE_COLUMNS[j], f[j])))
        };
        let maybe = |j: usize| -> Result<Option<f64>> {
            if f[j].is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        rows.push(CompareRow {
            system: f[0].to_string(),
            mode: f[1].to_string(),
            gamma: maybe(2)?,
            train_time_end: num(3)?,
            inference_time_end: num(4)?,
            mean_rel_state_error: maybe(5)?,
            std_rel_state_error: maybe(6)?,
            mean_sq_constraint_error: maybe(7)?,
            std_sq_constraint_error: maybe(8)?,
            inference_seconds_per_batch: maybe(9)?,
            diverged: f[10]
                .parse()
                .map_err(|_| bad(format!("bad diverged flag {:?}", f[10])))?,
        });
    }
    Ok(rows)
}

/// The default comparison matrix: one row per constraint treatment.
pub fn default_modes() -> Vec<TrainingMode> {
    vec![
        TrainingMode::Node,
        TrainingMode::NodeSoft,
        TrainingMode::Snode { gamma: 0.5 },
        TrainingMode::PnodeFast,
        TrainingMode::PnodeRobust,
    ]
}

/// Stabilization strengths of the gamma sweep.
pub const SWEEP_GAMMAS: [f64; 3] = [0.5, 2.0, 10.0];

/// Everything needed to train and evaluate one model.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub hidden: Vec<usize>,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: TrainingMode,
    pub model: Option<MlpDynamics>,
    pub history: Vec<EpochRecord>,
    pub row: CompareRow,
}

/// Trains a fresh model under `mode` and evaluates it. A training run that
/// aborts on non-finite parameters is reported as diverged.
pub fn run_mode(plan: &ExperimentPlan, dataset: &Dataset, mode: TrainingMode) -> Result<ModeRun> {
    let system = dataset.make_system()?;
    let arch = Architecture::for_system(&system, &plan.hidden)?;
    let init = MlpDynamics::init(arch, plan.model_seed);
    let cfg = TrainConfig {
        mode,
        ..plan.train.clone()
    };
    let train_end = dataset
        .trajectories
        .first()
        .and_then(|t| t.times.last().copied())
        .unwrap_or(0.0);
    match train(&init, dataset, &cfg) {
        Ok(out) => {
            let eval = evaluate(&out.model, &system, mode, &plan.eval)?;
            Ok(ModeRun {
                mode,
                model: Some(out.model),
                history: out.history,
                row: CompareRow::from_report(&eval.report, train_end),
            })
        }
        Err(Error::TrainingAborted { .. }) => Ok(ModeRun {
            mode,
            model: None,
            history: Vec::new(),
            row: CompareRow {
                system: system.name().to_string(),
                mode: mode.name().to_string(),
                gamma: mode.gamma(),
                train_time_end: train_end,
                inference_time_end: plan.eval.horizon.unwrap_or(system.inference_end),
                mean_rel_state_error: None,
                std_rel_state_error: None,
                mean_sq_constraint_error: None,
                std_sq_constraint_error: None,
                inference_seconds_per_batch: None,
                diverged: true,
            },
        }),
        Err(e) => Err(e),
    }
}

pub fn compare(
    plan: &ExperimentPlan,
    dataset: &Dataset,
    modes: &[TrainingMode],
) -> Result<Vec<ModeRun>> {
    modes.iter().map(|m| run_mode(plan, dataset, *m)).collect()
}
