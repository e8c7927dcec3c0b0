//! Trajectory error metrics.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, norm2};
use crate::odeint::Trajectory;
use crate::projection::ConstraintSpec;

/// Guard added to `|u_k|` in the relative error denominator.
pub const RELATIVE_ERROR_GUARD: f64 = 1e-8;

fn check_grids(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory grid",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            context: "trajectory state",
            expected: truth.dim(),
            found: pred.dim(),
        });
    }
    for (a, b) in pred.times.iter().zip(&truth.times) {
        if (a - b).abs() > 1e-9 * b.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time grids differ: {a} vs {b}"
            )));
        }
    }
    Ok(())
}

/// `mean_k |û_k - u_k| / (|u_k| + 1e-8)`, or `None` if the prediction
/// contains a non-finite value.
pub fn mean_rel_state_error(pred: &Trajectory, truth: &Trajectory) -> Result<Option<f64>> {
    check_grids(pred, truth)?;
    if !pred.is_finite() {
        return Ok(None);
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let total: f64 = pred
        .states
        .iter()
        .zip(&truth.states)
        .map(|(p, u)| {
            let diff: Vec<f64> = p.iter().zip(u).map(|(a, b)| a - b).collect();
            norm2(&diff) / (norm2(u) + RELATIVE_ERROR_GUARD)
        })
        .sum();
    Ok(Some(total / pred.len() as f64))
}

/// First saved time at which the prediction is non-finite or its relative
/// state error exceeds `threshold`; `None` if that never happens.
pub fn first_exceedance(
    pred: &Trajectory,
    truth: &Trajectory,
    threshold: f64,
) -> Result<Option<f64>> {
    check_grids(pred, truth)?;
    Ok(pred
        .states
        .iter()
        .zip(&truth.states)
        .zip(&pred.times)
        .find(|((p, u), _)| {
            let diff: Vec<f64> = p.iter().zip(*u).map(|(a, b)| a - b).collect();
            let rel = norm2(&diff) / (norm2(u) + RELATIVE_ERROR_GUARD);
            !(rel <= threshold)
        })
        .map(|(_, t)| *t))
}

/// `mean_k |g(û_k, t_k)|^2`, or `None` if the prediction contains a
/// non-finite value.
pub fn mean_sq_constraint_error(pred: &Trajectory, c: &ConstraintSpec) -> Result<Option<f64>> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if pred.dim() != c.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "constraint state",
            expected: c.state_dim(),
            found: pred.dim(),
        });
    }
    if !pred.is_finite() {
        return Ok(None);
    }
    let total: f64 = pred
        .states
        .iter()
        .zip(&pred.times)
        .map(|(u, t)| {
            let g = c.residual(u, *t);
            dot(&g, &g)
        })
        .sum();
    let mean = total / pred.len() as f64;
    Ok(all_finite(&[mean]).then_some(mean))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{ConstraintSpec, HalfSquaredNorm};
    use std::sync::Arc;

    fn constant(u: Vec<f64>, n: usize) -> Trajectory {
        Trajectory::new((0..n).map(|k| k as f64).collect(), vec![u; n]).unwrap()
    }

    #[test]
    fn first_exceedance_finds_the_crossing() {
        let times: Vec<f64> = (0..4).map(|k| k as f64).collect();
        let truth = constant(vec![1.0, 0.0], 4);
        let pred = Trajectory::new(
            times.clone(),
            vec![
                vec![1.0, 0.0],
                vec![3.0, 0.0],
                vec![12.0, 0.0],
                vec![1.0, 0.0],
            ],
        )
        .unwrap();
        assert_eq!(first_exceedance(&pred, &truth, 10.0).unwrap(), Some(2.0));
        assert_eq!(first_exceedance(&pred, &truth, 1.0).unwrap(), Some(1.0));
        assert_eq!(first_exceedance(&pred, &truth, 20.0).unwrap(), None);
        let nan = Trajectory::new(
            times,
            vec![
                vec![1.0, 0.0],
                vec![f64::NAN, 0.0],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
            ],
        )
        .unwrap();
        assert_eq!(first_exceedance(&nan, &truth, 10.0).unwrap(), Some(1.0));
    }

    #[test]
    fn relative_error_examples() {
        let truth = constant(vec![1.0, 0.0], 5);
        assert_eq!(mean_rel_state_error(&truth, &truth).unwrap(), Some(0.0));
        let pred = constant(vec![1.1, 0.0], 5);
        let e = mean_rel_state_error(&pred, &truth).unwrap().unwrap();
        assert!((e - 0.1).abs() < 1e-9);
        let mut bad = pred.clone();
        bad.states[3][1] = f64::NAN;
        assert_eq!(mean_rel_state_error(&bad, &truth).unwrap(), None);
        let short = constant(vec![1.0, 0.0], 4);
        assert!(mean_rel_state_error(&short, &truth).is_err());
    }

    #[test]
    fn constraint_error_examples() {
        // Energy 0.5 |u|^2 held at 0.51 against a reference level of 0.5.
        let c = ConstraintSpec::new(Arc::new(HalfSquaredNorm::new(2)), vec![0.5]).unwrap();
        let r = (2.0f64 * 0.51).sqrt();
        let pred = constant(vec![r, 0.0], 7);
        let e = mean_sq_constraint_error(&pred, &c).unwrap().unwrap();
        assert!((e - 1e-4).abs() < 1e-15, "{e}");
        let on = constant(vec![1.0, 0.0], 3);
        assert!(mean_sq_constraint_error(&on, &c).unwrap().unwrap() <= 1e-22);
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[]), None);
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
    }
}
