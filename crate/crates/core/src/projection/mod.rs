//! Projection of an integrator update onto the constraint manifold
//! `{u : g(u, t) = 0}`.
//!
//! The closest feasible point `z` to an unconstrained update `ũ` satisfies
//!
//! ```text
//!     z = ũ + J(z)^T λ,      g(z, t) = 0,
//! ```
//!
//! with `J = ∂g/∂u`. Two solvers are provided:
//!
//! * [`project_robust`] re-evaluates `J` at the current iterate and
//!   refactorizes `J J^T` every iteration (Gauss-Newton on `λ`).
//! * [`project_fast`] freezes `J₀ = J(ũ)`, factorizes `J₀ J₀^T` once and
//!   runs fixed-Jacobian Newton on `g(ũ + J₀^T λ) = 0`.
//!
//! [`projection_vjp`] differentiates either map through its converged
//! optimality conditions (implicit function theorem) rather than through
//! the iterations. [`stabilization_term`] is the continuous relaxation
//! `-γ J^T (J J^T)^{-1} g` used by stabilized neural ODEs.

mod constraint;

pub use constraint::{ConstraintSpec, HalfSquaredNorm, Invariant, LinearInvariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, matvec, matvec_transpose, norm_inf, solve_general, Cholesky, Matrix, Vector,
};

/// Which projection solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Jacobian re-evaluated every iteration.
    Robust,
    /// Single Jacobian evaluation and factorization.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Largest accepted `|g(z)|_inf`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub variant: Variant,
    /// When the fast variant fails, retry with the robust one.
    #[serde(default)]
    pub fallback: bool,
}

impl ProjectionConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-12;

    pub fn robust() -> Self {
        Self {
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: 50,
            variant: Variant::Robust,
            fallback: false,
        }
    }

    /// Fast variant with robust fallback enabled.
    pub fn fast() -> Self {
        Self {
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: 20,
            variant: Variant::Fast,
            fallback: true,
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Robust => Self::robust(),
            Variant::Fast => Self::fast(),
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_fallback(mut self, fallback: bool) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "projection tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "projection needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub z: Vector,
    pub lambda: Vector,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Solver that produced `z`; differs from the configured variant after a
    /// fallback.
    pub variant: Variant,
}

fn check_state(u: &[f64], c: &ConstraintSpec) -> Result<()> {
    if u.len() != c.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "projection state",
            expected: c.state_dim(),
            found: u.len(),
        });
    }
    if !crate::linalg::all_finite(u) {
        return Err(Error::NonFinite("state passed to projection".into()));
    }
    Ok(())
}

fn trivial_result(u_tilde: &[f64], variant: Variant) -> ProjectionResult {
    ProjectionResult {
        z: u_tilde.to_vec(),
        lambda: Vec::new(),
        iterations: 0,
        residual_norm: 0.0,
        variant,
    }
}

fn neg(v: &[f64]) -> Vector {
    v.iter().map(|x| -x).collect()
}

/// Runs the configured variant, falling back to [`project_robust`] if the
/// fast variant fails and `cfg.fallback` is set.
pub fn project(
    u_tilde: &[f64],
    c: &ConstraintSpec,
    t: f64,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    match cfg.variant {
        Variant::Robust => project_robust(u_tilde, c, t, cfg),
        Variant::Fast => match project_fast(u_tilde, c, t, cfg) {
            Err(Error::NotConverged { .. } | Error::ProjectionDiverged { .. }) if cfg.fallback => {
                let robust = ProjectionConfig {
                    variant: Variant::Robust,
                    max_iterations: ProjectionConfig::robust().max_iterations,
                    ..*cfg
                };
                project_robust(u_tilde, c, t, &robust)
            }
            other => other,
        },
    }
}

/// Gauss-Newton on the multipliers with `z` eliminated. Each iteration
/// evaluates `J = J(z)`, solves `J J^T λ = J (z - ũ) - g(z)` and sets
/// `z = ũ + J^T λ`. When `J` is unchanged between iterations this is the
/// update `λ ← λ + (J J^T)^{-1} (-g(z))`.
///
/// Stops once `|g(z)|_inf ≤ tolerance` and `z - ũ` lies in the row space of
/// `J(z)` to the same relative tolerance.
pub fn project_robust(
    u_tilde: &[f64],
    c: &ConstraintSpec,
    t: f64,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    cfg.validate()?;
    check_state(u_tilde, c)?;
    let m = c.count();
    if m == 0 {
        return Ok(trivial_result(u_tilde, Variant::Robust));
    }

    let stationarity_tol = cfg.tolerance * (1.0 + norm_inf(u_tilde));
    let mut z = u_tilde.to_vec();
    let mut lambda = vec![0.0; m];
    let mut residual_norm = f64::INFINITY;

    for iteration in 0..=cfg.max_iterations {
        let g = c.residual(&z, t);
        residual_norm = norm_inf(&g);
        if !residual_norm.is_finite() {
            return Err(Error::NonFinite(
                "constraint residual during projection".into(),
            ));
        }
        let jac = c.jacobian(&z, t);
        let jt_lambda = matvec_transpose(&jac, &lambda)?;
        let stationarity = z
            .iter()
            .zip(u_tilde)
            .zip(&jt_lambda)
            .fold(0.0_f64, |acc, ((zi, ui), ji)| acc.max((zi - ui - ji).abs()));
        if residual_norm <= cfg.tolerance && stationarity <= stationarity_tol {
            return Ok(ProjectionResult {
                z,
                lambda,
                iterations: iteration,
                residual_norm,
                variant: Variant::Robust,
            });
        }
        if iteration == cfg.max_iterations {
            break;
        }
        // Linearize g about z with the current Jacobian:
        // J (ũ + J^T λ' - z) = -g(z)  ⇔  J J^T λ' = J (z - ũ) - g(z).
        let normal = jac.mul_transpose(&jac)?;
        let offset: Vector = z.iter().zip(u_tilde).map(|(zi, ui)| zi - ui).collect();
        let mut rhs = matvec(&jac, &offset)?;
        axpy(-1.0, &g, &mut rhs);
        lambda = Cholesky::factor(&normal)?.solve(&rhs)?;
        z = u_tilde.to_vec();
        axpy(1.0, &matvec_transpose(&jac, &lambda)?, &mut z);
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        residual_norm,
    })
}

/// Fixed-Jacobian Newton: `J₀ = J(ũ)` is evaluated and `J₀ J₀^T` factorized
/// exactly once, then `δλ_k = (J₀ J₀^T)^{-1} (-g(ũ + J₀^T λ_k))`.
///
/// Reports [`Error::ProjectionDiverged`] if the residual grows for three
/// consecutive iterations.
pub fn project_fast(
    u_tilde: &[f64],
    c: &ConstraintSpec,
    t: f64,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    cfg.validate()?;
    check_state(u_tilde, c)?;
    let m = c.count();
    if m == 0 {
        return Ok(trivial_result(u_tilde, Variant::Fast));
    }

    let mut z = u_tilde.to_vec();
    let mut lambda = vec![0.0; m];
    let mut g = c.residual(&z, t);
    let mut residual_norm = norm_inf(&g);
    if !residual_norm.is_finite() {
        return Err(Error::NonFinite(
            "constraint residual during projection".into(),
        ));
    }
    if residual_norm <= cfg.tolerance {
        return Ok(ProjectionResult {
            z,
            lambda,
            iterations: 0,
            residual_norm,
            variant: Variant::Fast,
        });
    }

    let jac = c.jacobian(u_tilde, t);
    let factor = Cholesky::factor(&jac.mul_transpose(&jac)?)?;
    let mut growth = 0;
    for iteration in 1..=cfg.max_iterations {
        let delta = factor.solve(&neg(&g))?;
        axpy(1.0, &delta, &mut lambda);
        z = u_tilde.to_vec();
        axpy(1.0, &matvec_transpose(&jac, &lambda)?, &mut z);
        g = c.residual(&z, t);
        let next = norm_inf(&g);
        if !next.is_finite() {
            return Err(Error::NonFinite(
                "constraint residual during projection".into(),
            ));
        }
        growth = if next > residual_norm { growth + 1 } else { 0 };
        residual_norm = next;
        if residual_norm <= cfg.tolerance {
            return Ok(ProjectionResult {
                z,
                lambda,
                iterations: iteration,
                residual_norm,
                variant: Variant::Fast,
            });
        }
        if growth >= 3 {
            return Err(Error::ProjectionDiverged {
                iterations: iteration,
                residual_norm,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        residual_norm,
    })
}

/// `-γ J^T (J J^T)^{-1} g(u, t)` evaluated at the current state `u`.
pub fn stabilization_term(u: &[f64], c: &ConstraintSpec, t: f64, gamma: f64) -> Result<Vector> {
    check_state(u, c)?;
    if c.count() == 0 {
        return Ok(vec![0.0; u.len()]);
    }
    let parts = StabilizationParts::new(u, c, t)?;
    Ok(parts.w.iter().map(|w| -gamma * w).collect())
}

struct StabilizationParts {
    jac: Matrix,
    factor: Cholesky,
    /// `(J J^T)^{-1} g`
    y: Vector,
    /// `J^T y`
    w: Vector,
}

impl StabilizationParts {
    fn new(u: &[f64], c: &ConstraintSpec, t: f64) -> Result<Self> {
        let g = c.residual(u, t);
        let jac = c.jacobian(u, t);
        let factor = Cholesky::factor(&jac.mul_transpose(&jac)?)?;
        let y = factor.solve(&g)?;
        let w = matvec_transpose(&jac, &y)?;
        Ok(Self { jac, factor, y, w })
    }
}

/// Pulls `cotangent` back through [`stabilization_term`] with respect to
/// `u`, using the constraint Hessians.
pub fn stabilization_vjp(
    u: &[f64],
    c: &ConstraintSpec,
    t: f64,
    gamma: f64,
    cotangent: &[f64],
) -> Result<Vector> {
    check_state(u, c)?;
    let n = u.len();
    if cotangent.len() != n {
        return Err(Error::DimensionMismatch {
            context: "stabilization cotangent",
            expected: n,
            found: cotangent.len(),
        });
    }
    if c.count() == 0 {
        return Ok(vec![0.0; n]);
    }
    let StabilizationParts { jac, factor, y, w } = StabilizationParts::new(u, c, t)?;
    let hessians = c.hessians(u, t);

    // Y = Σ_k y_k H_k
    let mut y_hess = Matrix::zeros(n, n);
    for (yk, h) in y.iter().zip(&hessians) {
        y_hess.add_scaled(*yk, h)?;
    }
    let r = factor.solve(&matvec(&jac, cotangent)?)?;
    let jt_r = matvec_transpose(&jac, &r)?;

    // v = -γ (Y c + J^T r - Σ_k r_k H_k w - Y J^T r)
    let mut v = matvec(&y_hess, cotangent)?;
    axpy(1.0, &jt_r, &mut v);
    for (rk, h) in r.iter().zip(&hessians) {
        axpy(-rk, &matvec(h, &w)?, &mut v);
    }
    axpy(-1.0, &matvec(&y_hess, &jt_r)?, &mut v);
    Ok(v.into_iter().map(|x| -gamma * x).collect())
}

/// `(∂z/∂ũ)^T cotangent` for a converged projection, obtained from the
/// linearized optimality system at `(z, λ)`.
///
/// Robust map (`z = ũ + J(z)^T λ`, `g(z) = 0`):
///
/// ```text
///   [ I - Σ λ_k H_k(z)   -J(z)^T ] [dz]   [dũ]
///   [ J(z)                 0     ] [dλ] = [ 0 ]
/// ```
///
/// Fast map (`z = ũ + J(ũ)^T λ`, `g(z) = 0`):
///
/// ```text
///   [ I      -J(ũ)^T ] [dz]   [(I + Σ λ_k H_k(ũ)) dũ]
///   [ J(z)     0     ] [dλ] = [          0          ]
/// ```
///
/// The transposed system is solved once per call; the Newton iterations
/// themselves are never differentiated.
pub fn projection_vjp(
    u_tilde: &[f64],
    result: &ProjectionResult,
    c: &ConstraintSpec,
    t: f64,
    cotangent: &[f64],
) -> Result<Vector> {
    let n = u_tilde.len();
    if cotangent.len() != n || result.z.len() != n {
        return Err(Error::DimensionMismatch {
            context: "projection vjp",
            expected: n,
            found: if cotangent.len() != n {
                cotangent.len()
            } else {
                result.z.len()
            },
        });
    }
    let m = c.count();
    if m == 0 {
        return Ok(cotangent.to_vec());
    }
    if result.lambda.len() != m {
        return Err(Error::DimensionMismatch {
            context: "projection multipliers",
            expected: m,
            found: result.lambda.len(),
        });
    }

    let jz = c.jacobian(&result.z, t);
    let (top_left, jac_lambda, rhs_map) = match result.variant {
        Variant::Robust => {
            let mut tl = Matrix::identity(n);
            for (lk, h) in result.lambda.iter().zip(c.hessians(&result.z, t)) {
                tl.add_scaled(-lk, &h)?;
            }
            (tl, jz.clone(), None)
        }
        Variant::Fast => {
            let mut a = Matrix::identity(n);
            for (lk, h) in result.lambda.iter().zip(c.hessians(u_tilde, t)) {
                a.add_scaled(*lk, &h)?;
            }
            (Matrix::identity(n), c.jacobian(u_tilde, t), Some(a))
        }
    };

    // K = [[TL, -Jλ^T], [Jz, 0]]; solve K^T y = [cotangent; 0].
    let size = n + m;
    let mut kt = Matrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            kt[(j, i)] = top_left[(i, j)];
        }
        for k in 0..m {
            // K[i, n+k] = -Jλ[k, i]  →  K^T[n+k, i]
            kt[(n + k, i)] = -jac_lambda[(k, i)];
            // K[n+k, i] = Jz[k, i]  →  K^T[i, n+k]
            kt[(i, n + k)] = jz[(k, i)];
        }
    }
    let mut rhs = vec![0.0; size];
    rhs[..n].copy_from_slice(cotangent);
    let y = solve_general(&kt, &rhs)?;
    let v = y[..n].to_vec();
    match rhs_map {
        None => Ok(v),
        // A is symmetric.
        Some(a) => matvec(&a, &v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_diff_jacobian;
    use std::sync::Arc;

    fn hyperplane() -> ConstraintSpec {
        let a = Matrix::from_rows(&[&[1.0, 1.0]]);
        ConstraintSpec::new(Arc::new(LinearInvariant::new(a)), vec![1.0]).unwrap()
    }

    fn circle(energy: f64) -> ConstraintSpec {
        ConstraintSpec::new(Arc::new(HalfSquaredNorm::new(2)), vec![energy]).unwrap()
    }

    /// Closed form for the circle: radial scaling onto radius sqrt(2 E0).
    fn radial(u: &[f64], energy: f64) -> Vector {
        let r = crate::linalg::norm2(u);
        u.iter().map(|x| x * (2.0 * energy).sqrt() / r).collect()
    }

    #[test]
    fn robust_projects_onto_circle() {
        let c = circle(0.5);
        let res = project_robust(&[1.1, 0.0], &c, 0.0, &ProjectionConfig::robust()).unwrap();
        let want = radial(&[1.1, 0.0], 0.5);
        assert!((res.z[0] - want[0]).abs() < 1e-12 && res.z[1].abs() < 1e-15);
        assert!(res.residual_norm <= 1e-12);
        assert_eq!(res.variant, Variant::Robust);
    }

    #[test]
    fn on_manifold_point_is_fixed() {
        let c = circle(0.5);
        for cfg in [ProjectionConfig::robust(), ProjectionConfig::fast()] {
            let res = project(&[0.6, 0.8], &c, 0.0, &cfg).unwrap();
            assert_eq!(res.z, vec![0.6, 0.8]);
            assert!(res.iterations <= 1);
            assert!(res.lambda.iter().all(|l| *l == 0.0));
        }
    }

    #[test]
    fn hyperplane_projection_is_exact_in_one_iteration() {
        let c = hyperplane();
        let fast = project_fast(&[1.0, 1.0], &c, 0.0, &ProjectionConfig::fast()).unwrap();
        assert_eq!(fast.iterations, 1);
        assert!((fast.z[0] - 0.5).abs() < 1e-15 && (fast.z[1] - 0.5).abs() < 1e-15);
        let robust = project_robust(&[1.0, 1.0], &c, 0.0, &ProjectionConfig::robust()).unwrap();
        assert_eq!(robust.iterations, 1);
        assert!((robust.z[0] - 0.5).abs() < 1e-15 && (robust.z[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fast_projects_onto_circle() {
        let c = circle(0.5);
        let cfg = ProjectionConfig::fast().with_fallback(false);
        let res = project_fast(&[1.1, 0.0], &c, 0.0, &cfg).unwrap();
        let e = 0.5 * crate::linalg::dot(&res.z, &res.z) - 0.5;
        assert!(e.abs() <= 1e-12);
        assert!((res.z[0] - 1.0).abs() < 1e-10 && res.z[1].abs() < 1e-10);
    }

    #[test]
    fn rank_deficient_jacobian_is_an_error() {
        let c = circle(0.5);
        // J(0) = 0 so J J^T is singular.
        assert!(matches!(
            project_robust(&[0.0, 0.0], &c, 0.0, &ProjectionConfig::robust()),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            project_fast(&[0.0, 0.0], &c, 0.0, &ProjectionConfig::fast()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn exhausted_budget_reports_residual() {
        let c = circle(0.5);
        let cfg = ProjectionConfig {
            max_iterations: 1,
            ..ProjectionConfig::robust()
        };
        match project_robust(&[3.0, 0.0], &c, 0.0, &cfg) {
            Err(Error::NotConverged { residual_norm, .. }) => assert!(residual_norm > 1e-3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn fast_falls_back_to_robust() {
        let c = circle(0.5);
        // Far from the manifold the frozen Jacobian needs many iterations.
        let cfg = ProjectionConfig {
            max_iterations: 2,
            ..ProjectionConfig::fast()
        };
        assert!(project_fast(&[3.0, 0.5], &c, 0.0, &cfg).is_err());
        let res = project(&[3.0, 0.5], &c, 0.0, &cfg).unwrap();
        assert_eq!(res.variant, Variant::Robust);
        assert!(res.residual_norm <= 1e-12);
        assert!(project(&[3.0, 0.5], &c, 0.0, &cfg.with_fallback(false)).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let c = circle(0.5);
        let bad = ProjectionConfig::robust().with_tolerance(0.0);
        assert!(project(&[1.0, 0.0], &c, 0.0, &bad).is_err());
        let bad = ProjectionConfig {
            max_iterations: 0,
            ..ProjectionConfig::fast()
        };
        assert!(project(&[1.0, 0.0], &c, 0.0, &bad).is_err());
    }

    #[test]
    fn stabilization_examples() {
        let unit = circle(0.5);
        // g = 1/2 |u|^2 - 1/2 with u = (2, 0): J = (2, 0), JJ^T = 4, g = 1.5.
        let s = stabilization_term(&[2.0, 0.0], &unit, 0.0, 1.0).unwrap();
        assert!((s[0] + 0.75).abs() < 1e-15 && s[1] == 0.0);
        let on = stabilization_term(&[0.6, 0.8], &unit, 0.0, 3.0).unwrap();
        assert!(on.iter().all(|v| v.abs() < 1e-15));
        let s = stabilization_term(&[1.0, 1.0], &hyperplane(), 0.0, 2.0).unwrap();
        assert!(s.iter().all(|v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn stabilization_example_with_unscaled_circle() {
        // g(u) = u1^2 + u2^2 - 1, which is 2 * (1/2 |u|^2 - 1/2).
        #[derive(Debug)]
        struct Circle;
        impl Invariant for Circle {
            fn name(&self) -> &str {
                "circle"
            }
            fn state_dim(&self) -> usize {
                2
            }
            fn count(&self) -> usize {
                1
            }
            fn value(&self, u: &[f64], _t: f64) -> Vector {
                vec![u[0] * u[0] + u[1] * u[1]]
            }
            fn jacobian(&self, u: &[f64], _t: f64) -> Matrix {
                Matrix::from_rows(&[&[2.0 * u[0], 2.0 * u[1]]])
            }
            fn hessians(&self, _u: &[f64], _t: f64) -> Vec<Matrix> {
                vec![Matrix::diagonal(&[2.0, 2.0])]
            }
        }
        let c = ConstraintSpec::new(Arc::new(Circle), vec![1.0]).unwrap();
        let s = stabilization_term(&[2.0, 0.0], &c, 0.0, 1.0).unwrap();
        assert!((s[0] + 0.75).abs() < 1e-15 && s[1] == 0.0);
    }

    #[test]
    fn stabilization_vjp_matches_finite_differences() {
        let c = circle(0.5);
        let u = [1.3, -0.4];
        let cot = [0.7, 1.9];
        let v = stabilization_vjp(&u, &c, 0.0, 2.0, &cot).unwrap();
        let jac = finite_diff_jacobian(|x| stabilization_term(x, &c, 0.0, 2.0), &u, 1e-6).unwrap();
        let fd = matvec_transpose(&jac, &cot).unwrap();
        for (a, b) in v.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8, "{v:?} vs {fd:?}");
        }
    }

    #[test]
    fn vjp_of_hyperplane_projection_is_the_projector() {
        let c = hyperplane();
        for cfg in [ProjectionConfig::robust(), ProjectionConfig::fast()] {
            let res = project(&[1.0, 1.0], &c, 0.0, &cfg).unwrap();
            let v = projection_vjp(&[1.0, 1.0], &res, &c, 0.0, &[1.0, 0.0]).unwrap();
            assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn vjp_without_constraints_is_identity() {
        let c = ConstraintSpec::unconstrained(3);
        let res = project(&[1.0, 2.0, 3.0], &c, 0.0, &ProjectionConfig::fast()).unwrap();
        let v = projection_vjp(&[1.0, 2.0, 3.0], &res, &c, 0.0, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(v, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn vjp_matches_finite_differences_on_circle() {
        let c = circle(0.5);
        let u = [1.1, 0.0];
        let cot = [0.3, -1.2];
        for cfg in [
            ProjectionConfig::robust(),
            ProjectionConfig::fast().with_fallback(false),
        ] {
            let res = project(&u, &c, 0.0, &cfg).unwrap();
            let v = projection_vjp(&u, &res, &c, 0.0, &cot).unwrap();
            let run = |x: &[f64]| project(x, &c, 0.0, &cfg).map(|r| r.z);
            let jac = finite_diff_jacobian(run, &u, 1e-6).unwrap();
            let fd = matvec_transpose(&jac, &cot).unwrap();
            for (a, b) in v.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6, "{:?}: {v:?} vs {fd:?}", cfg.variant);
            }
        }
    }
}
