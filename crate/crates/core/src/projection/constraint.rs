use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{matvec, Matrix, Vector};

/// A vector of algebraic quantities `C(u, t)` together with its first and
/// second derivatives in `u`.
///
/// Implementations must be immutable; they are shared across threads.
pub trait Invariant: Send + Sync {
    fn name(&self) -> &str;

    fn state_dim(&self) -> usize;

    /// Number of scalar constraints `m`.
    fn count(&self) -> usize;

    fn value(&self, u: &[f64], t: f64) -> Vector;

    /// `m x n` Jacobian `dC/du`.
    fn jacobian(&self, u: &[f64], t: f64) -> Matrix;

    /// One `n x n` Hessian per constraint component.
    fn hessians(&self, u: &[f64], t: f64) -> Vec<Matrix>;
}

/// Residual `g(u, t) = C(u, t) - reference_level` whose zero set is the
/// constraint manifold.
#[derive(Clone)]
pub struct ConstraintSpec {
    invariant: Arc<dyn Invariant>,
    reference_level: Vector,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("invariant", &self.invariant.name())
            .field("reference_level", &self.reference_level)
            .finish()
    }
}

impl ConstraintSpec {
    pub fn new(invariant: Arc<dyn Invariant>, reference_level: Vector) -> Result<Self> {
        if reference_level.len() != invariant.count() {
            return Err(Error::DimensionMismatch {
                context: "constraint reference level",
                expected: invariant.count(),
                found: reference_level.len(),
            });
        }
        Ok(Self {
            invariant,
            reference_level,
        })
    }

    /// Uses the invariant's value at `(u0, t0)` as the reference level, so
    /// that `u0` lies exactly on the manifold.
    pub fn anchored_at(invariant: Arc<dyn Invariant>, u0: &[f64], t0: f64) -> Result<Self> {
        if u0.len() != invariant.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "constraint anchor state",
                expected: invariant.state_dim(),
                found: u0.len(),
            });
        }
        let level = invariant.value(u0, t0);
        Self::new(invariant, level)
    }

    /// No constraints: the manifold is all of `R^n`.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            invariant: Arc::new(NoConstraint(n)),
            reference_level: Vec::new(),
        }
    }

    pub fn invariant(&self) -> &Arc<dyn Invariant> {
        &self.invariant
    }

    pub fn reference_level(&self) -> &[f64] {
        &self.reference_level
    }

    pub fn state_dim(&self) -> usize {
        self.invariant.state_dim()
    }

    pub fn count(&self) -> usize {
        self.invariant.count()
    }

    pub fn residual(&self, u: &[f64], t: f64) -> Vector {
        let mut g = self.invariant.value(u, t);
        for (gi, r) in g.iter_mut().zip(&self.reference_level) {
            *gi -= r;
        }
        g
    }

    pub fn jacobian(&self, u: &[f64], t: f64) -> Matrix {
        self.invariant.jacobian(u, t)
    }

    pub fn hessians(&self, u: &[f64], t: f64) -> Vec<Matrix> {
        self.invariant.hessians(u, t)
    }
}

#[derive(Debug)]
struct NoConstraint(usize);

impl Invariant for NoConstraint {
    fn name(&self) -> &str {
        "none"
    }
    fn state_dim(&self) -> usize {
        self.0
    }
    fn count(&self) -> usize {
        0
    }
    fn value(&self, _u: &[f64], _t: f64) -> Vector {
        Vec::new()
    }
    fn jacobian(&self, _u: &[f64], _t: f64) -> Matrix {
        Matrix::zeros(0, self.0)
    }
    fn hessians(&self, _u: &[f64], _t: f64) -> Vec<Matrix> {
        Vec::new()
    }
}

/// `C(u) = A u`. Exact for hyperplane constraints.
#[derive(Debug, Clone)]
pub struct LinearInvariant {
    a: Matrix,
}

impl LinearInvariant {
    pub fn new(a: Matrix) -> Self {
        Self { a }
    }
}

impl Invariant for LinearInvariant {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.cols()
    }
    fn count(&self) -> usize {
        self.a.rows()
    }
    fn value(&self, u: &[f64], _t: f64) -> Vector {
        matvec(&self.a, u).expect("state dimension checked by caller")
    }
    fn jacobian(&self, _u: &[f64], _t: f64) -> Matrix {
        self.a.clone()
    }
    fn hessians(&self, _u: &[f64], _t: f64) -> Vec<Matrix> {
        let n = self.a.cols();
        vec![Matrix::zeros(n, n); self.a.rows()]
    }
}

/// `C(u) = 1/2 |u|^2`: energy of a unit harmonic oscillator, kinetic
/// energy of a rigid body, and the test case with a closed-form projection.
#[derive(Debug, Clone)]
pub struct HalfSquaredNorm {
    n: usize,
}

impl HalfSquaredNorm {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Invariant for HalfSquaredNorm {
    fn name(&self) -> &str {
        "half_squared_norm"
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn count(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64], _t: f64) -> Vector {
        vec![0.5 * crate::linalg::dot(u, u)]
    }
    fn jacobian(&self, u: &[f64], _t: f64) -> Matrix {
        Matrix::from_row_major(1, self.n, u.to_vec()).expect("state dimension checked by caller")
    }
    fn hessians(&self, _u: &[f64], _t: f64) -> Vec<Matrix> {
        vec![Matrix::identity(self.n)]
    }
}
