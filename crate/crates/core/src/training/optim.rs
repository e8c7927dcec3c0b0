//! Adam and L-BFGS on flat parameter vectors.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, norm2, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vector,
    v: Vector,
    t: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam step",
                expected: self.m.len(),
                found: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    /// Stop once the gradient norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 200,
            armijo_c1: 1e-4,
            max_backtracks: 40,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsIteration {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step_length: f64,
    /// Whether the accepted step satisfied the Armijo condition.
    pub armijo: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStop {
    GradientTolerance,
    MaxIterations,
    /// No step along the search direction gave sufficient decrease.
    LineSearchFailed,
    /// The loss stopped changing at machine precision.
    NoProgress,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vector,
    pub loss: f64,
    pub grad: Vector,
    pub iterations: Vec<LbfgsIteration>,
    pub stop: LbfgsStop,
}

const CURVATURE_C2: f64 = 0.9;
const MAX_EXPANSIONS: usize = 20;

/// Two-loop recursion: `-H g` for the implicit inverse-Hessian estimate.
fn direction(grad: &[f64], memory: &VecDeque<(Vector, Vector, f64)>) -> Vector {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f`, which returns the loss and its gradient.
///
/// The line search starts from a unit step (scaled by `1/|g|` on the first
/// iteration), backtracks with safeguarded quadratic interpolation until the
/// Armijo condition holds, and, once a step is acceptable, also tries the
/// minimizer of the interpolating quadratic. On a quadratic objective that
/// extra trial is the exact line minimizer, so the method reaches the
/// minimum in at most `n + 1` iterations when `history >= n`. If the
/// accepted point still fails the curvature condition the step is doubled
/// while the loss keeps decreasing.
///
/// Evaluation failures during the line search count as rejected steps.
/// The best point seen is always returned.
pub fn lbfgs_minimize<F>(mut f: F, x0: Vector, cfg: &LbfgsConfig) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vector)>,
{
    if cfg.history == 0 {
        return Err(Error::InvalidArgument(
            "L-BFGS history must be positive".into(),
        ));
    }
    let (mut loss, mut grad) = f(&x0)?;
    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::NonFinite("L-BFGS initial evaluation".into()));
    }
    let mut x = x0;
    let mut memory: VecDeque<(Vector, Vector, f64)> = VecDeque::new();
    let mut iterations = Vec::new();
    let mut stop = LbfgsStop::MaxIterations;

    for iteration in 0..cfg.max_iterations {
        let gnorm = norm2(&grad);
        if gnorm <= cfg.gradient_tolerance {
            stop = LbfgsStop::GradientTolerance;
            break;
        }
        let mut d = direction(&grad, &memory);
        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
        }
        let mut alpha = if memory.is_empty() {
            1.0 / gnorm.max(1.0)
        } else {
            1.0
        };
        let trial =
            |alpha: f64| -> Vector { x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect() };
        let mut evaluations = 0;
        let mut accepted: Option<(f64, Vector, f64, Vector)> = None;
        for _ in 0..=cfg.max_backtracks {
            let xa = trial(alpha);
            evaluations += 1;
            let eval = f(&xa).ok().filter(|(l, g)| l.is_finite() && all_finite(g));
            match eval {
                Some((la, ga)) if la <= loss + cfg.armijo_c1 * alpha * slope => {
                    accepted = Some((alpha, xa, la, ga));
                    break;
                }
                Some((la, _)) => {
                    let q = quadratic_minimizer(loss, slope, alpha, la);
                    alpha = q.map_or(0.5 * alpha, |q| q.clamp(0.1 * alpha, 0.5 * alpha));
                }
                None => alpha *= 0.5,
            }
        }
        let Some((mut a, mut xa, mut la, mut ga)) = accepted else {
            stop = LbfgsStop::LineSearchFailed;
            break;
        };
        if let Some(q) = quadratic_minimizer(loss, slope, a, la) {
            if (q - a).abs() > 1e-12 * a {
                let xq = trial(q);
                evaluations += 1;
                if let Ok((lq, gq)) = f(&xq) {
                    if lq.is_finite()
                        && all_finite(&gq)
                        && lq < la
                        && lq <= loss + cfg.armijo_c1 * q * slope
                    {
                        (a, xa, la, ga) = (q, xq, lq, gq);
                    }
                }
            }
        }
        // Still descending steeply at the accepted point: extrapolate while
        // the loss keeps improving, so curvature pairs stay informative.
        let mut expansions = 0;
        while dot(&ga, &d) < CURVATURE_C2 * slope && expansions < MAX_EXPANSIONS {
            let next = 2.0 * a;
            let xn = trial(next);
            evaluations += 1;
            expansions += 1;
            match f(&xn) {
                Ok((ln, gn))
                    if ln.is_finite()
                        && all_finite(&gn)
                        && ln < la
                        && ln <= loss + cfg.armijo_c1 * next * slope =>
                {
                    (a, xa, la, ga) = (next, xn, ln, gn);
                }
                _ => break,
            }
        }
        let s: Vector = xa.iter().zip(&x).map(|(n, o)| n - o).collect();
        let y: Vector = ga.iter().zip(&grad).map(|(n, o)| n - o).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let previous = loss;
        x = xa;
        loss = la;
        grad = ga;
        iterations.push(LbfgsIteration {
            iteration,
            loss,
            grad_norm: norm2(&grad),
            step_length: a,
            armijo: true,
            evaluations,
        });
        if previous - loss <= f64::EPSILON * previous.abs() && loss <= previous {
            if norm2(&grad) > cfg.gradient_tolerance {
                stop = LbfgsStop::NoProgress;
            } else {
                stop = LbfgsStop::GradientTolerance;
            }
            break;
        }
    }
    if stop == LbfgsStop::MaxIterations && norm2(&grad) <= cfg.gradient_tolerance {
        stop = LbfgsStop::GradientTolerance;
    }
    Ok(LbfgsOutcome {
        x,
        loss,
        grad,
        iterations,
        stop,
    })
}

/// Minimizer of the quadratic through `(0, f0)` with slope `slope` at zero
/// and value `fa` at `alpha`, if that quadratic is convex.
fn quadratic_minimizer(f0: f64, slope: f64, alpha: f64, fa: f64) -> Option<f64> {
    let curvature = fa - f0 - slope * alpha;
    if !(curvature > 0.0) {
        return None;
    }
    let q = -slope * alpha * alpha / (2.0 * curvature);
    (q.is_finite() && q > 0.0).then_some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matvec, Matrix};

    fn quadratic<'a>(a: &'a Matrix, b: &'a [f64]) -> impl Fn(&[f64]) -> Result<(f64, Vector)> + 'a {
        move |x: &[f64]| {
            let ax = matvec(a, x)?;
            let loss = 0.5 * dot(x, &ax) - dot(b, x);
            let grad = ax.iter().zip(b).map(|(p, q)| p - q).collect();
            Ok((loss, grad))
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_with_zero_learning_rate_is_a_no_op() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, 3);
        let mut p = vec![0.5, -2.0, 7.0];
        for _ in 0..10 {
            adam.step(&mut p, &[1.0, -3.0, 0.25]).unwrap();
        }
        assert_eq!(p, vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn adam_converges_on_quadratic_toy() {
        let target = [1.0, -2.0, 0.5, 3.0];
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, target.len());
        let mut p = vec![0.0; target.len()];
        for _ in 0..5000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            adam.step(&mut p, &g).unwrap();
        }
        let err = p
            .iter()
            .zip(&target)
            .fold(0.0_f64, |acc, (x, t)| acc.max((x - t).abs()));
        assert!(err <= 1e-6, "max error {err:e}");
    }

    #[test]
    fn adam_minimizes_a_bowl() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, 2);
        let mut p = vec![2.0, -3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 8.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g).unwrap();
        }
        assert!(
            (p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3,
            "{p:?}"
        );
    }

    #[test]
    fn lbfgs_solves_quadratic_in_n_plus_one_iterations() {
        let n = 6;
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                rows[i][j] = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            }
            rows[i][i] += 1.0 + i as f64;
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let a = Matrix::from_rows(&refs);
        let b: Vector = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let x_star = crate::linalg::solve_spd(&a, &b).unwrap();
        let cfg = LbfgsConfig {
            gradient_tolerance: 1e-9,
            ..LbfgsConfig::default()
        };
        let out = lbfgs_minimize(quadratic(&a, &b), vec![0.0; n], &cfg).unwrap();
        assert_eq!(out.stop, LbfgsStop::GradientTolerance);
        assert!(
            out.iterations.len() <= n + 1,
            "{} iterations",
            out.iterations.len()
        );
        let err = out
            .x
            .iter()
            .zip(&x_star)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "error {err}");
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vector)> {
            let (a, b) = (x[0], x[1]);
            let loss = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Ok((loss, g))
        };
        let out = lbfgs_minimize(f, vec![-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6,
            "{:?} {:?} {:?}",
            out.x,
            out.stop,
            out.iterations.len()
        );
        assert!(out.iterations.iter().all(|it| it.armijo));
    }

    #[test]
    fn lbfgs_survives_failed_evaluations() {
        // Evaluations beyond x = 0.5 fail; the line search must back off.
        let f = |x: &[f64]| -> Result<(f64, Vector)> {
            if x[0] > 0.5 {
                return Err(Error::NonFinite("outside domain".into()));
            }
            Ok(((x[0] - 0.4).powi(2), vec![2.0 * (x[0] - 0.4)]))
        };
        let out = lbfgs_minimize(f, vec![-3.0], &LbfgsConfig::default()).unwrap();
        assert!((out.x[0] - 0.4).abs() < 1e-8, "{:?}", out.x);
    }
}
