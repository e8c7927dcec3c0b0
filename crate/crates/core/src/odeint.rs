//! Fixed-step RK4 with a per-step constraint hook.
//!
//! After each internal step the configured [`StepMode`] decides what happens
//! to the raw update `ũ`: nothing (plain neural ODE), replacement by its
//! projection onto the constraint manifold, or, for the stabilized mode, a
//! modified right-hand side `f + F(u)` with no post-step correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, norm2, Vector};
use crate::projection::{project, stabilization_term, ConstraintSpec, ProjectionConfig};

/// Largest `|g(u0, t0)|_inf` accepted as a consistent initial condition for
/// projected integration.
pub const INITIAL_CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepMode {
    None,
    Projected(ProjectionConfig),
    Stabilized { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub step_size: f64,
    #[serde(default)]
    pub method: Method,
    pub mode: StepMode,
}

impl StepperConfig {
    pub const DEFAULT_STEP: f64 = 0.01;

    pub fn new(step_size: f64, mode: StepMode) -> Self {
        Self {
            step_size,
            method: Method::Rk4,
            mode,
        }
    }

    pub fn plain(step_size: f64) -> Self {
        Self::new(step_size, StepMode::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per save time.
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::DimensionMismatch {
                context: "trajectory rows",
                expected: times.len(),
                found: states.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|s| all_finite(s))
    }
}

/// Number of fixed steps covering `span`; errors unless `span` is an integer
/// multiple of `h` (to a relative `1e-9`).
pub fn step_count(span: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    if span < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative integration span {span}"
        )));
    }
    let n = (span / h).round();
    if (n * h - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "span {span} is not an integer multiple of the step size {h}"
        )));
    }
    Ok(n as usize)
}

/// One classical four-stage Runge-Kutta step.
pub fn rk4_step<F>(f: &F, u: &[f64], t: f64, h: f64) -> Result<Vector>
where
    F: Fn(&[f64], f64) -> Result<Vector> + ?Sized,
{
    let stage = |k: &[f64], scale: f64| -> Vector {
        let mut s = u.to_vec();
        axpy(scale, k, &mut s);
        s
    };
    let k1 = f(u, t)?;
    let k2 = f(&stage(&k1, 0.5 * h), t + 0.5 * h)?;
    let k3 = f(&stage(&k2, 0.5 * h), t + 0.5 * h)?;
    let k4 = f(&stage(&k3, h), t + h)?;
    for k in [&k1, &k2, &k3, &k4] {
        if !all_finite(k) {
            return Err(Error::NonFinite("RK4 stage derivative".into()));
        }
    }
    let mut next = u.to_vec();
    for i in 0..next.len() {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(next)
}

/// Advances one step under `mode`, returning the accepted state at `t + h`.
pub fn constrained_step<F>(
    f: &F,
    u: &[f64],
    t: f64,
    h: f64,
    mode: &StepMode,
    c: Option<&ConstraintSpec>,
) -> Result<Vector>
where
    F: Fn(&[f64], f64) -> Result<Vector> + ?Sized,
{
    match mode {
        StepMode::None => rk4_step(f, u, t, h),
        StepMode::Stabilized { gamma } if *gamma == 0.0 => rk4_step(f, u, t, h),
        StepMode::Stabilized { gamma } => {
            let c = require_constraint(c)?;
            let rhs = |x: &[f64], s: f64| -> Result<Vector> {
                let mut d = f(x, s)?;
                axpy(1.0, &stabilization_term(x, c, s, *gamma)?, &mut d);
                Ok(d)
            };
            rk4_step(&rhs, u, t, h)
        }
        StepMode::Projected(cfg) => {
            let c = require_constraint(c)?;
            let raw = rk4_step(f, u, t, h)?;
            Ok(project(&raw, c, t + h, cfg)?.z)
        }
    }
}

fn require_constraint(c: Option<&ConstraintSpec>) -> Result<&ConstraintSpec> {
    c.ok_or_else(|| {
        Error::InvalidArgument("projected and stabilized modes need a constraint".into())
    })
}

/// Integrates from `t0` to `t_end` with fixed steps, saving every
/// `save_every` steps. The initial and final states are always saved.
pub fn integrate<F>(
    f: &F,
    u0: &[f64],
    t0: f64,
    t_end: f64,
    cfg: &StepperConfig,
    c: Option<&ConstraintSpec>,
    save_every: usize,
) -> Result<Trajectory>
where
    F: Fn(&[f64], f64) -> Result<Vector> + ?Sized,
{
    if save_every == 0 {
        return Err(Error::InvalidArgument(
            "save_every must be at least 1".into(),
        ));
    }
    let h = cfg.step_size;
    let steps = step_count(t_end - t0, h)?;
    if !all_finite(u0) {
        return Err(Error::NonFinite("initial state".into()));
    }
    if let StepMode::Projected(p) = &cfg.mode {
        p.validate()?;
        let c = require_constraint(c)?;
        let g = crate::linalg::norm_inf(&c.residual(u0, t0));
        if !(g <= INITIAL_CONSISTENCY_TOL.max(p.tolerance)) {
            return Err(Error::InconsistentInitialState(g));
        }
    }

    let mut times = vec![t0];
    let mut states = vec![u0.to_vec()];
    let mut u = u0.to_vec();
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        u = constrained_step(f, &u, t, h, &cfg.mode, c).map_err(|e| match e {
            Error::NonFinite(_) => Error::BlowUp { step, time: t },
            other => other,
        })?;
        if !all_finite(&u) {
            return Err(Error::BlowUp { step, time: t });
        }
        let done = step + 1;
        if done % save_every == 0 || done == steps {
            times.push(t0 + done as f64 * h);
            states.push(u.clone());
        }
    }
    Trajectory::new(times, states)
}

/// Empirical convergence order from three runs at `h`, `h/2`, `h/4`:
/// `log2(|y_h - y_{h/2}| / |y_{h/2} - y_{h/4}|)` on the final state.
pub fn convergence_order<F>(
    f: &F,
    u0: &[f64],
    t0: f64,
    t_end: f64,
    h: f64,
    mode: &StepMode,
    c: Option<&ConstraintSpec>,
) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Result<Vector> + ?Sized,
{
    let finals = [h, h / 2.0, h / 4.0]
        .iter()
        .map(|&step| {
            let cfg = StepperConfig::new(step, *mode);
            let traj = integrate(f, u0, t0, t_end, &cfg, c, usize::MAX)?;
            Ok(traj.states.last().cloned().unwrap_or_default())
        })
        .collect::<Result<Vec<_>>>()?;
    let diff = |a: &[f64], b: &[f64]| -> f64 {
        norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
    };
    let e1 = diff(&finals[0], &finals[1]);
    let e2 = diff(&finals[1], &finals[2]);
    Ok((e1 / e2).log2())
}

/// Order against a known exact final state, from runs at `h` and `h/2`.
pub fn convergence_order_exact<F>(
    f: &F,
    u0: &[f64],
    t0: f64,
    t_end: f64,
    h: f64,
    exact: &[f64],
) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Result<Vector> + ?Sized,
{
    let err = |step: f64| -> Result<f64> {
        let traj = integrate(
            f,
            u0,
            t0,
            t_end,
            &StepperConfig::plain(step),
            None,
            usize::MAX,
        )?;
        let last = traj.states.last().cloned().unwrap_or_default();
        Ok(norm2(
            &last
                .iter()
                .zip(exact)
                .map(|(x, y)| x - y)
                .collect::<Vec<_>>(),
        ))
    };
    Ok((err(h)? / err(h / 2.0)?).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::HalfSquaredNorm;
    use std::sync::Arc;

    fn oscillator(u: &[f64], _t: f64) -> Result<Vector> {
        Ok(vec![u[1], -u[0]])
    }

    fn unit_energy() -> ConstraintSpec {
        ConstraintSpec::anchored_at(Arc::new(HalfSquaredNorm::new(2)), &[1.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn rk4_examples() {
        let zero = |_: &[f64], _: f64| Ok(vec![0.0, 0.0]);
        assert_eq!(
            rk4_step(&zero, &[1.5, -2.0], 0.0, 0.3).unwrap(),
            vec![1.5, -2.0]
        );

        // Hand-evaluated stages for u' = u, u = 1, h = 0.1:
        // k1 = 1, k2 = 1.05, k3 = 1.0525, k4 = 1.10525.
        let grow = |u: &[f64], _: f64| Ok(vec![u[0]]);
        let hand = 1.0 + 0.1 / 6.0 * (1.0 + 2.0 * 1.05 + 2.0 * 1.0525 + 1.10525);
        let got = rk4_step(&grow, &[1.0], 0.0, 0.1).unwrap()[0];
        assert!((got - hand).abs() < 1e-15);
        assert!((got - 0.1_f64.exp()).abs() < 1e-7);

        let constant = |_: &[f64], _: f64| Ok(vec![2.0, -3.0]);
        let got = rk4_step(&constant, &[1.0, 1.0], 0.0, 0.25).unwrap();
        assert!((got[0] - 1.5).abs() < 1e-15 && (got[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rk4_reports_blow_up_with_step_index() {
        let bad = |u: &[f64], _: f64| Ok(vec![u[0] * u[0]]);
        let cfg = StepperConfig::plain(0.5);
        match integrate(&bad, &[1e200], 0.0, 2.0, &cfg, None, 1) {
            Err(Error::BlowUp { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn saves_endpoints_and_every_k_steps() {
        let traj = integrate(
            &oscillator,
            &[1.0, 0.0],
            0.0,
            1.0,
            &StepperConfig::plain(0.1),
            None,
            3,
        )
        .unwrap();
        let steps: Vec<usize> = traj
            .times
            .iter()
            .map(|t| (t / 0.1).round() as usize)
            .collect();
        assert_eq!(steps, vec![0, 3, 6, 9, 10]);
    }

    #[test]
    fn rejects_incommensurate_span() {
        let cfg = StepperConfig::plain(0.3);
        assert!(integrate(&oscillator, &[1.0, 0.0], 0.0, 1.0, &cfg, None, 1).is_err());
    }

    #[test]
    fn projected_mass_spring_stays_on_manifold() {
        let c = unit_energy();
        let cfg = StepperConfig::new(0.1, StepMode::Projected(ProjectionConfig::fast()));
        let traj = integrate(&oscillator, &[1.0, 0.0], 0.0, 1000.0, &cfg, Some(&c), 10).unwrap();
        for s in &traj.states {
            let e = 0.5 * (s[0] * s[0] + s[1] * s[1]);
            assert!((e - 0.5).abs() <= 1e-11);
        }
    }

    #[test]
    fn zero_field_with_satisfied_constraint_is_constant() {
        let c = unit_energy();
        let zero = |_: &[f64], _: f64| Ok(vec![0.0, 0.0]);
        let cfg = StepperConfig::new(0.05, StepMode::Projected(ProjectionConfig::robust()));
        let traj = integrate(&zero, &[1.0, 0.0], 0.0, 1.0, &cfg, Some(&c), 1).unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![1.0, 0.0]));
    }

    #[test]
    fn projected_mode_requires_consistent_start() {
        let c = unit_energy();
        let cfg = StepperConfig::new(0.1, StepMode::Projected(ProjectionConfig::fast()));
        assert!(matches!(
            integrate(&oscillator, &[1.1, 0.0], 0.0, 1.0, &cfg, Some(&c), 1),
            Err(Error::InconsistentInitialState(_))
        ));
        assert!(integrate(&oscillator, &[1.0, 0.0], 0.0, 1.0, &cfg, None, 1).is_err());
    }

    #[test]
    fn stabilized_with_zero_gain_is_plain() {
        let c = unit_energy();
        let plain = integrate(
            &oscillator,
            &[1.0, 0.0],
            0.0,
            5.0,
            &StepperConfig::plain(0.01),
            None,
            7,
        )
        .unwrap();
        let cfg = StepperConfig::new(0.01, StepMode::Stabilized { gamma: 0.0 });
        let stab = integrate(&oscillator, &[1.0, 0.0], 0.0, 5.0, &cfg, Some(&c), 7).unwrap();
        assert_eq!(plain, stab);
    }

    #[test]
    fn stabilization_pulls_toward_manifold() {
        let c = unit_energy();
        let drift = |u: &[f64], _: f64| Ok(vec![u[1] + 0.05 * u[0], -u[0] + 0.05 * u[1]]);
        let end = |mode| {
            let traj = integrate(
                &drift,
                &[1.0, 0.0],
                0.0,
                20.0,
                &StepperConfig::new(0.01, mode),
                Some(&c),
                100,
            )
            .unwrap();
            c.residual(traj.states.last().unwrap(), 20.0)[0].abs()
        };
        assert!(end(StepMode::Stabilized { gamma: 2.0 }) < 0.1 * end(StepMode::None));
    }

    #[test]
    fn forward_backward_returns_to_start() {
        let cfg = StepperConfig::plain(1e-3);
        let fwd = integrate(&oscillator, &[1.0, 0.0], 0.0, 10.0, &cfg, None, usize::MAX).unwrap();
        let reversed = |u: &[f64], t: f64| oscillator(u, t).map(|d| d.iter().map(|x| -x).collect());
        let back = integrate(
            &reversed,
            fwd.states.last().unwrap(),
            0.0,
            10.0,
            &cfg,
            None,
            usize::MAX,
        )
        .unwrap();
        let end = back.states.last().unwrap();
        assert!((end[0] - 1.0).abs() < 1e-6 && end[1].abs() < 1e-6);
    }

    #[test]
    fn order_of_plain_and_projected_rk4() {
        let c = unit_energy();
        let plain = convergence_order(
            &oscillator,
            &[1.0, 0.0],
            0.0,
            2.0,
            0.1,
            &StepMode::None,
            None,
        )
        .unwrap();
        assert!((plain - 4.0).abs() <= 0.2, "plain order {plain}");
        let projected = convergence_order(
            &oscillator,
            &[1.0, 0.0],
            0.0,
            2.0,
            0.1,
            &StepMode::Projected(ProjectionConfig::robust()),
            Some(&c),
        )
        .unwrap();
        assert!(
            (projected - 4.0).abs() <= 0.2,
            "projected order {projected}"
        );
        let grow = |u: &[f64], _: f64| Ok(vec![u[0]]);
        let scalar =
            convergence_order_exact(&grow, &[1.0], 0.0, 1.0, 0.1, &[1.0_f64.exp()]).unwrap();
        assert!((scalar - 4.0).abs() <= 0.1, "scalar order {scalar}");
    }
}
