//! Rollout loss over a window and its parameter gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdjointSeed, NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, matvec_transpose, Vector};
use crate::model::{MlpDynamics, ParamNodes};
use crate::odeint::{constrained_step, step_count, StepMode};
use crate::projection::{
    project, projection_vjp, stabilization_term, stabilization_vjp, ConstraintSpec,
    ProjectionConfig,
};

use super::windows::Window;

/// How constraints enter training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TrainingMode {
    /// Unconstrained neural ODE.
    Node,
    /// Unconstrained rollout with a squared-residual penalty in the loss.
    NodeSoft,
    /// Stabilized right-hand side `f - γ J^T (J J^T)^{-1} g`.
    Snode {
        gamma: f64,
    },
    PnodeFast,
    PnodeRobust,
}

impl TrainingMode {
    pub const NAMES: [&'static str; 5] =
        ["node", "node_soft", "snode", "pnode_fast", "pnode_robust"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Node => "node",
            Self::NodeSoft => "node_soft",
            Self::Snode { .. } => "snode",
            Self::PnodeFast => "pnode_fast",
            Self::PnodeRobust => "pnode_robust",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            Self::Snode { gamma } => Some(*gamma),
            _ => None,
        }
    }

    /// Builds a mode from its name; `gamma` is required for `snode` and
    /// rejected otherwise.
    pub fn parse(name: &str, gamma: Option<f64>) -> Result<Self> {
        let mode = match name {
            "node" => Self::Node,
            "node_soft" => Self::NodeSoft,
            "pnode_fast" => Self::PnodeFast,
            "pnode_robust" => Self::PnodeRobust,
            "snode" => {
                let gamma = gamma.ok_or_else(|| {
                    Error::InvalidArgument("mode snode needs a gamma value".into())
                })?;
                if !(gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "gamma must be finite and non-negative, got {gamma}"
                    )));
                }
                return Ok(Self::Snode { gamma });
            }
            other => return Err(Error::UnknownMode(other.to_string())),
        };
        if gamma.is_some() {
            return Err(Error::InvalidArgument(format!(
                "gamma only applies to mode snode, not {name}"
            )));
        }
        Ok(mode)
    }

    pub fn uses_constraint(&self) -> bool {
        !matches!(self, Self::Node)
    }

    /// Integrator behaviour for this mode. The soft-penalty mode integrates
    /// without constraints.
    pub fn step_mode(&self) -> StepMode {
        match self {
            Self::Node | Self::NodeSoft => StepMode::None,
            Self::Snode { gamma } => StepMode::Stabilized { gamma: *gamma },
            Self::PnodeFast => StepMode::Projected(ProjectionConfig::fast()),
            Self::PnodeRobust => StepMode::Projected(ProjectionConfig::robust()),
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Snode { gamma } => write!(f, "snode(gamma={gamma})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    /// Accepts the plain names plus `snode:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("snode", g)) => {
                let gamma = g
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad gamma in {s:?}")))?;
                Self::parse("snode", Some(gamma))
            }
            _ => Self::parse(s, None),
        }
    }
}

/// Settings shared by every window loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub mode: TrainingMode,
    pub step_size: f64,
    /// Weight of the mean squared residual term in `node_soft`.
    pub soft_weight: f64,
}

impl LossSpec {
    pub const DEFAULT_SOFT_WEIGHT: f64 = 1.0;

    pub fn new(mode: TrainingMode, step_size: f64) -> Self {
        Self {
            mode,
            step_size,
            soft_weight: Self::DEFAULT_SOFT_WEIGHT,
        }
    }
}

fn check_window(model: &MlpDynamics, window: &Window<'_>) -> Result<()> {
    if window.states.len() < 2 || window.times.len() != window.states.len() {
        return Err(Error::InvalidArgument(
            "a window needs at least two aligned samples".into(),
        ));
    }
    if window.states[0].len() != model.arch.state_dim {
        return Err(Error::DimensionMismatch {
            context: "window state",
            expected: model.arch.state_dim,
            found: window.states[0].len(),
        });
    }
    Ok(())
}

/// Window loss evaluated without a tape:
/// `mean_k |û_k - u_k|^2` over the `W - 1` predicted samples, plus
/// `soft_weight * mean_k |g(û_k)|^2` in soft-penalty mode.
pub fn window_loss(model: &MlpDynamics, window: &Window<'_>, spec: &LossSpec) -> Result<f64> {
    check_window(model, window)?;
    let f = |u: &[f64], t: f64| model.forward(u, t);
    let mode = spec.mode.step_mode();
    let c = Some(window.constraint);
    let h = spec.step_size;
    let mut u = window.states[0].clone();
    let mut fit = 0.0;
    let mut soft = 0.0;
    for k in 1..window.states.len() {
        let t0 = window.times[k - 1];
        for s in 0..step_count(window.times[k] - t0, h)? {
            u = constrained_step(&f, &u, t0 + s as f64 * h, h, &mode, c)?;
        }
        if !all_finite(&u) {
            return Err(Error::NonFinite("window rollout".into()));
        }
        let diff: Vector = u
            .iter()
            .zip(&window.states[k])
            .map(|(a, b)| a - b)
            .collect();
        fit += crate::linalg::dot(&diff, &diff);
        if spec.mode == TrainingMode::NodeSoft {
            let g = window.constraint.residual(&u, window.times[k]);
            soft += crate::linalg::dot(&g, &g);
        }
    }
    let inv = 1.0 / (window.states.len() - 1) as f64;
    let mut loss = fit * inv;
    if spec.mode == TrainingMode::NodeSoft {
        loss += soft * inv * spec.soft_weight;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("window loss".into()));
    }
    Ok(loss)
}

/// Window loss and its gradient with respect to `model.params`.
///
/// Records the same arithmetic as [`window_loss`] on a tape, so the two
/// return bit-identical loss values.
pub fn window_loss_grad(
    model: &MlpDynamics,
    window: &Window<'_>,
    spec: &LossSpec,
) -> Result<(f64, Vector)> {
    check_window(model, window)?;
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let mode = spec.mode.step_mode();
    let c = window.constraint;
    let h = spec.step_size;
    let mut u = tape.constant(window.states[0].clone());
    let mut fit: Option<NodeId> = None;
    let mut soft: Option<NodeId> = None;
    for k in 1..window.states.len() {
        let t0 = window.times[k - 1];
        for s in 0..step_count(window.times[k] - t0, h)? {
            u = taped_step(&mut tape, model, &params, u, t0 + s as f64 * h, h, &mode, c)?;
        }
        if !all_finite(tape.value(u)) {
            return Err(Error::NonFinite("window rollout".into()));
        }
        let target = tape.constant(window.states[k].clone());
        let diff = tape.sub(u, target)?;
        let sq = tape.dot(diff, diff)?;
        fit = Some(accumulate(&mut tape, fit, sq)?);
        if spec.mode == TrainingMode::NodeSoft {
            let g = taped_residual(&mut tape, u, c, window.times[k])?;
            let gsq = tape.dot(g, g)?;
            soft = Some(accumulate(&mut tape, soft, gsq)?);
        }
    }
    let inv = 1.0 / (window.states.len() - 1) as f64;
    let fit = fit.expect("window has at least one target");
    let mut loss = tape.scale(fit, inv)?;
    if let Some(soft) = soft {
        let mean = tape.scale(soft, inv)?;
        let weighted = tape.scale(mean, spec.soft_weight)?;
        loss = tape.add(loss, weighted)?;
    }
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("window loss".into()));
    }
    let grads = tape.backward(&AdjointSeed::scalar(loss))?;
    let grad = params.flat_gradient(&grads);
    if !all_finite(&grad) {
        return Err(Error::NonFinite("window gradient".into()));
    }
    Ok((value, grad))
}

fn accumulate(tape: &mut Tape, acc: Option<NodeId>, term: NodeId) -> Result<NodeId> {
    match acc {
        None => Ok(term),
        Some(a) => tape.add(a, term),
    }
}

fn taped_residual(tape: &mut Tape, u: NodeId, c: &ConstraintSpec, t: f64) -> Result<NodeId> {
    let at = tape.value(u).to_vec();
    let g = c.residual(&at, t);
    let jac = c.jacobian(&at, t);
    tape.custom(u, g, move |cot: &[f64]| matvec_transpose(&jac, cot))
}

fn taped_rhs(
    tape: &mut Tape,
    model: &MlpDynamics,
    params: &ParamNodes,
    u: NodeId,
    t: f64,
    gamma: Option<f64>,
    c: &ConstraintSpec,
) -> Result<NodeId> {
    let f = model.forward_with_tape(tape, params, u, t)?;
    match gamma {
        None => Ok(f),
        Some(gamma) => {
            let at = tape.value(u).to_vec();
            let value = stabilization_term(&at, c, t, gamma)?;
            let c = c.clone();
            let stab = tape.custom(u, value, move |cot: &[f64]| {
                stabilization_vjp(&at, &c, t, gamma, cot)
            })?;
            tape.add(f, stab)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn taped_rk4(
    tape: &mut Tape,
    model: &MlpDynamics,
    params: &ParamNodes,
    u: NodeId,
    t: f64,
    h: f64,
    gamma: Option<f64>,
    c: &ConstraintSpec,
) -> Result<NodeId> {
    let k1 = taped_rhs(tape, model, params, u, t, gamma, c)?;
    let d = tape.scale(k1, 0.5 * h)?;
    let s = tape.add(u, d)?;
    let k2 = taped_rhs(tape, model, params, s, t + 0.5 * h, gamma, c)?;
    let d = tape.scale(k2, 0.5 * h)?;
    let s = tape.add(u, d)?;
    let k3 = taped_rhs(tape, model, params, s, t + 0.5 * h, gamma, c)?;
    let d = tape.scale(k3, h)?;
    let s = tape.add(u, d)?;
    let k4 = taped_rhs(tape, model, params, s, t + h, gamma, c)?;
    for k in [k1, k2, k3, k4] {
        if !all_finite(tape.value(k)) {
            return Err(Error::NonFinite("RK4 stage derivative".into()));
        }
    }
    let k2x2 = tape.scale(k2, 2.0)?;
    let k3x2 = tape.scale(k3, 2.0)?;
    let acc = tape.add(k1, k2x2)?;
    let acc = tape.add(acc, k3x2)?;
    let acc = tape.add(acc, k4)?;
    let inc = tape.scale(acc, h / 6.0)?;
    tape.add(u, inc)
}

/// Taped counterpart of [`constrained_step`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn taped_step(
    tape: &mut Tape,
    model: &MlpDynamics,
    params: &ParamNodes,
    u: NodeId,
    t: f64,
    h: f64,
    mode: &StepMode,
    c: &ConstraintSpec,
) -> Result<NodeId> {
    match mode {
        StepMode::None => taped_rk4(tape, model, params, u, t, h, None, c),
        StepMode::Stabilized { gamma } if *gamma == 0.0 => {
            taped_rk4(tape, model, params, u, t, h, None, c)
        }
        StepMode::Stabilized { gamma } => taped_rk4(tape, model, params, u, t, h, Some(*gamma), c),
        StepMode::Projected(cfg) => {
            let raw = taped_rk4(tape, model, params, u, t, h, None, c)?;
            let u_tilde = tape.value(raw).to_vec();
            let result = project(&u_tilde, c, t + h, cfg)?;
            let z = result.z.clone();
            let c = c.clone();
            tape.custom(raw, z, move |cot: &[f64]| {
                projection_vjp(&u_tilde, &result, &c, t + h, cot)
            })
        }
    }
}
