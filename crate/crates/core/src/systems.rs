//! Benchmark dynamical systems with known algebraic invariants.
//!
//! | name                  | state            | invariant(s)                                  |
//! |-----------------------|------------------|-----------------------------------------------|
//! | `lotka_volterra`      | (x, y)           | δx − γ ln x + βy − α ln y                      |
//! | `mass_spring`         | (x, v)           | ½(x² + v²)                                     |
//! | `two_body`            | (q₁, q₂, p₁, p₂) | q₁p₂ − q₂p₁                                    |
//! | `nonlinear_spring_2d` | (x, y, u, v)     | ½(u² + v²) + ¼(x² + y²)², xv − yu              |
//! | `robot_arm`           | (θ₁, θ₂, θ₃)     | e(θ) − p(t), tracking a moving end effector    |
//! | `rigid_body`          | (y₁, y₂, y₃)     | ½(y₁² + y₂² + y₃²)                             |
//!
//! Every invariant supplies its analytic Jacobian and Hessians, which the
//! projection and its derivative rules consume.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matvec_transpose, Cholesky, Matrix, Vector};
use crate::projection::{ConstraintSpec, HalfSquaredNorm, Invariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    LotkaVolterra,
    MassSpring,
    TwoBody,
    NonlinearSpring2d,
    RobotArm,
    RigidBody,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::LotkaVolterra,
        SystemKind::MassSpring,
        SystemKind::TwoBody,
        SystemKind::NonlinearSpring2d,
        SystemKind::RobotArm,
        SystemKind::RigidBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::LotkaVolterra => "lotka_volterra",
            SystemKind::MassSpring => "mass_spring",
            SystemKind::TwoBody => "two_body",
            SystemKind::NonlinearSpring2d => "nonlinear_spring_2d",
            SystemKind::RobotArm => "robot_arm",
            SystemKind::RigidBody => "rigid_body",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterraParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LotkaVolterraParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            beta: 1.0,
            gamma: 3.0,
            delta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyParams {
    pub inertia: [f64; 3],
}

impl Default for RigidBodyParams {
    fn default() -> Self {
        Self {
            inertia: [2.0, 1.0, 2.0 / 3.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemParams {
    #[serde(default)]
    pub lotka_volterra: LotkaVolterraParams,
    #[serde(default)]
    pub rigid_body: RigidBodyParams,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let lv = &self.lotka_volterra;
        let all = [lv.alpha, lv.beta, lv.gamma, lv.delta]
            .into_iter()
            .chain(self.rigid_body.inertia);
        for v in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "system parameters must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Index split of a mechanical state into positions and velocities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondOrderSplit {
    pub positions: Vec<usize>,
    pub velocities: Vec<usize>,
}

#[derive(Clone)]
pub struct DynamicalSystem {
    kind: SystemKind,
    params: SystemParams,
    invariant: Arc<dyn Invariant>,
    pub train_end: f64,
    pub inference_end: f64,
    pub second_order: Option<SecondOrderSplit>,
    /// The true right-hand side depends explicitly on time.
    pub time_dependent: bool,
}

impl fmt::Debug for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicalSystem")
            .field("kind", &self.kind)
            .field("train_end", &self.train_end)
            .field("inference_end", &self.inference_end)
            .finish_non_exhaustive()
    }
}

/// Builds one of the benchmark systems by name.
pub fn make_system(name: &str, params: SystemParams) -> Result<DynamicalSystem> {
    DynamicalSystem::new(name.parse()?, params)
}

impl DynamicalSystem {
    pub fn new(kind: SystemKind, params: SystemParams) -> Result<Self> {
        params.validate()?;
        let split = |p: &[usize], v: &[usize]| {
            Some(SecondOrderSplit {
                positions: p.to_vec(),
                velocities: v.to_vec(),
            })
        };
        let (invariant, train_end, inference_end, second_order): (Arc<dyn Invariant>, _, _, _) =
            match kind {
                SystemKind::LotkaVolterra => (
                    Arc::new(LotkaVolterraInvariant(params.lotka_volterra)),
                    7.0,
                    1000.0,
                    None,
                ),
                SystemKind::MassSpring => (
                    Arc::new(HalfSquaredNorm::new(2)),
                    10.0,
                    1000.0,
                    split(&[0], &[1]),
                ),
                SystemKind::TwoBody => (
                    Arc::new(AngularMomentum),
                    6.3832,
                    1000.0,
                    split(&[0, 1], &[2, 3]),
                ),
                SystemKind::NonlinearSpring2d => (
                    Arc::new(NonlinearSpringInvariants),
                    10.0,
                    1000.0,
                    split(&[0, 1], &[2, 3]),
                ),
                SystemKind::RobotArm => (Arc::new(EndEffectorTracking), 5.0, 250.0, None),
                SystemKind::RigidBody => (Arc::new(HalfSquaredNorm::new(3)), 25.0, 1000.0, None),
            };
        Ok(Self {
            kind,
            params,
            invariant,
            train_end,
            inference_end,
            second_order,
            time_dependent: kind == SystemKind::RobotArm,
        })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.invariant.state_dim()
    }

    pub fn invariant(&self) -> &Arc<dyn Invariant> {
        &self.invariant
    }

    /// Constraint whose reference level is the invariant's value at `u0`.
    pub fn constraint(&self, u0: &[f64], t0: f64) -> Result<ConstraintSpec> {
        ConstraintSpec::anchored_at(self.invariant.clone(), u0, t0)
    }

    pub fn true_rhs(&self, u: &[f64], t: f64) -> Result<Vector> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "system state",
                expected: self.dim(),
                found: u.len(),
            });
        }
        Ok(match self.kind {
            SystemKind::LotkaVolterra => {
                let p = &self.params.lotka_volterra;
                let (x, y) = (u[0], u[1]);
                vec![p.alpha * x - p.beta * x * y, -p.gamma * y + p.delta * x * y]
            }
            SystemKind::MassSpring => vec![u[1], -u[0]],
            SystemKind::TwoBody => {
                let r2 = u[0] * u[0] + u[1] * u[1];
                let r3 = r2 * r2.sqrt();
                vec![u[2], u[3], -u[0] / r3, -u[1] / r3]
            }
            SystemKind::NonlinearSpring2d => {
                let r2 = u[0] * u[0] + u[1] * u[1];
                vec![u[2], u[3], -u[0] * r2, -u[1] * r2]
            }
            SystemKind::RobotArm => {
                // θ' = e'(θ)^T (e'(θ) e'(θ)^T)^{-1} p'(t)
                let jac = arm_jacobian(u);
                let pdot = [-(2.0 * PI * t).cos(), 0.0];
                let y = Cholesky::factor(&jac.mul_transpose(&jac)?)?.solve(&pdot)?;
                matvec_transpose(&jac, &y)?
            }
            SystemKind::RigidBody => {
                let [i1, i2, i3] = self.params.rigid_body.inertia;
                vec![
                    (1.0 / i3 - 1.0 / i2) * u[1] * u[2],
                    (1.0 / i1 - 1.0 / i3) * u[0] * u[2],
                    (1.0 / i2 - 1.0 / i1) * u[0] * u[1],
                ]
            }
        })
    }

    /// Draws an initial condition from the system's distribution.
    pub fn sample_ic<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self.kind {
            SystemKind::LotkaVolterra => vec![rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0)],
            SystemKind::MassSpring => {
                let r = rng.gen_range(0.8..1.2);
                let phi = rng.gen_range(0.0..2.0 * PI);
                vec![r * phi.cos(), r * phi.sin()]
            }
            SystemKind::TwoBody => {
                let e: f64 = rng.gen_range(0.3..0.6);
                vec![1.0 - e, 0.0, 0.0, ((1.0 + e) / (1.0 - e)).sqrt()]
            }
            SystemKind::NonlinearSpring2d => vec![
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.5..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ],
            SystemKind::RobotArm => loop {
                // Relative joint angles; each link bends at least 0.2 rad
                // away from the previous one.
                let mut angle = 0.0;
                let theta: Vector = (0..3)
                    .map(|_| {
                        angle += rng.gen_range(0.2..1.2);
                        angle
                    })
                    .collect();
                // Keep the whole target path inside the workspace.
                let x = theta.iter().map(|a| a.cos()).sum::<f64>() + 1.0 / (2.0 * PI);
                let y: f64 = theta.iter().map(|a| a.sin()).sum();
                if x.hypot(y) <= ARM_MAX_TARGET_REACH {
                    break theta;
                }
            },
            SystemKind::RigidBody => {
                let mut v: Vector = (0..3).map(|_| StandardNormal.sample(rng)).collect();
                let norm = crate::linalg::norm2(&v);
                let r = rng.gen_range(0.9..1.1);
                v.iter_mut().for_each(|x| *x *= r / norm);
                v
            }
        }
    }
}

/// Farthest end-effector target, out of the arm's full reach of 3, that an
/// initial pose may lead to.
const ARM_MAX_TARGET_REACH: f64 = 2.75;

#[derive(Debug)]
struct LotkaVolterraInvariant(LotkaVolterraParams);

impl Invariant for LotkaVolterraInvariant {
    fn name(&self) -> &str {
        "lotka_volterra_first_integral"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn count(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64], _t: f64) -> Vector {
        let p = &self.0;
        vec![p.delta * u[0] - p.gamma * u[0].ln() + p.beta * u[1] - p.alpha * u[1].ln()]
    }
    fn jacobian(&self, u: &[f64], _t: f64) -> Matrix {
        let p = &self.0;
        Matrix::from_rows(&[&[p.delta - p.gamma / u[0], p.beta - p.alpha / u[1]]])
    }
    fn hessians(&self, u: &[f64], _t: f64) -> Vec<Matrix> {
        let p = &self.0;
        vec![Matrix::diagonal(&[
            p.gamma / (u[0] * u[0]),
            p.alpha / (u[1] * u[1]),
        ])]
    }
}

/// `q₁p₂ − q₂p₁` on the state `(q₁, q₂, p₁, p₂)`.
#[derive(Debug)]
struct AngularMomentum;

impl Invariant for AngularMomentum {
    fn name(&self) -> &str {
        "angular_momentum"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn count(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64], _t: f64) -> Vector {
        vec![u[0] * u[3] - u[1] * u[2]]
    }
    fn jacobian(&self, u: &[f64], _t: f64) -> Matrix {
        Matrix::from_rows(&[&[u[3], -u[2], -u[1], u[0]]])
    }
    fn hessians(&self, _u: &[f64], _t: f64) -> Vec<Matrix> {
        let mut h = Matrix::zeros(4, 4);
        h[(0, 3)] = 1.0;
        h[(3, 0)] = 1.0;
        h[(1, 2)] = -1.0;
        h[(2, 1)] = -1.0;
        vec![h]
    }
}

/// Energy and angular momentum of the quartic 2D spring on `(x, y, u, v)`.
#[derive(Debug)]
struct NonlinearSpringInvariants;

impl Invariant for NonlinearSpringInvariants {
    fn name(&self) -> &str {
        "quartic_spring_energy_and_momentum"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn count(&self) -> usize {
        2
    }
    fn value(&self, s: &[f64], _t: f64) -> Vector {
        let (x, y, u, v) = (s[0], s[1], s[2], s[3]);
        let r2 = x * x + y * y;
        vec![0.5 * (u * u + v * v) + 0.25 * r2 * r2, x * v - y * u]
    }
    fn jacobian(&self, s: &[f64], _t: f64) -> Matrix {
        let (x, y, u, v) = (s[0], s[1], s[2], s[3]);
        let r2 = x * x + y * y;
        Matrix::from_rows(&[&[x * r2, y * r2, u, v], &[v, -u, -y, x]])
    }
    fn hessians(&self, s: &[f64], _t: f64) -> Vec<Matrix> {
        let (x, y) = (s[0], s[1]);
        let r2 = x * x + y * y;
        let mut energy = Matrix::zeros(4, 4);
        energy[(0, 0)] = r2 + 2.0 * x * x;
        energy[(1, 1)] = r2 + 2.0 * y * y;
        energy[(0, 1)] = 2.0 * x * y;
        energy[(1, 0)] = 2.0 * x * y;
        energy[(2, 2)] = 1.0;
        energy[(3, 3)] = 1.0;
        let mut momentum = Matrix::zeros(4, 4);
        momentum[(0, 3)] = 1.0;
        momentum[(3, 0)] = 1.0;
        momentum[(1, 2)] = -1.0;
        momentum[(2, 1)] = -1.0;
        vec![energy, momentum]
    }
}

fn arm_jacobian(theta: &[f64]) -> Matrix {
    let mut j = Matrix::zeros(2, 3);
    for (i, &th) in theta.iter().enumerate() {
        j[(0, i)] = -th.sin();
        j[(1, i)] = th.cos();
    }
    j
}

/// Planar three-link arm: `C(θ, t) = e(θ) + (sin(2πt)/(2π), 0)`, so that
/// with reference level `e(θ₀)` the residual is `e(θ) − p(t)` where
/// `p(t) = e(θ₀) − (sin(2πt)/(2π), 0)`.
#[derive(Debug)]
struct EndEffectorTracking;

impl Invariant for EndEffectorTracking {
    fn name(&self) -> &str {
        "end_effector_tracking"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn count(&self) -> usize {
        2
    }
    fn value(&self, theta: &[f64], t: f64) -> Vector {
        let cx: f64 = theta.iter().map(|a| a.cos()).sum();
        let sy: f64 = theta.iter().map(|a| a.sin()).sum();
        vec![cx + (2.0 * PI * t).sin() / (2.0 * PI), sy]
    }
    fn jacobian(&self, theta: &[f64], _t: f64) -> Matrix {
        arm_jacobian(theta)
    }
    fn hessians(&self, theta: &[f64], _t: f64) -> Vec<Matrix> {
        let cos: Vec<f64> = theta.iter().map(|a| -a.cos()).collect();
        let sin: Vec<f64> = theta.iter().map(|a| -a.sin()).collect();
        vec![Matrix::diagonal(&cos), Matrix::diagonal(&sin)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, finite_diff_jacobian, matvec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn system(kind: SystemKind) -> DynamicalSystem {
        DynamicalSystem::new(kind, SystemParams::default()).unwrap()
    }

    #[test]
    fn invariant_examples() {
        let ms = system(SystemKind::MassSpring);
        assert_eq!(ms.invariant().value(&[0.6, 0.8], 0.0), vec![0.5]);
        let tb = system(SystemKind::TwoBody);
        assert_eq!(tb.invariant().value(&[1.0, 0.0, 0.0, 1.0], 0.0), vec![1.0]);
        let ra = system(SystemKind::RobotArm);
        let theta0 = [0.3, 0.7, 1.1];
        let c = ra.constraint(&theta0, 0.0).unwrap();
        assert_eq!(c.residual(&theta0, 0.0), vec![0.0, 0.0]);
        let lv = system(SystemKind::LotkaVolterra);
        assert_eq!(lv.invariant().value(&[1.0, 1.0], 0.0), vec![2.0]);
    }

    #[test]
    fn names_round_trip_and_unknown_is_rejected() {
        for k in SystemKind::ALL {
            assert_eq!(k.name().parse::<SystemKind>().unwrap(), k);
        }
        assert!(matches!(
            make_system("pendulum", SystemParams::default()),
            Err(Error::UnknownSystem(_))
        ));
    }

    #[test]
    fn non_positive_params_are_rejected() {
        let mut p = SystemParams::default();
        p.rigid_body.inertia[1] = 0.0;
        assert!(make_system("rigid_body", p).is_err());
    }

    #[test]
    fn horizons() {
        let ends: Vec<(f64, f64)> = SystemKind::ALL
            .iter()
            .map(|k| {
                let s = system(*k);
                (s.train_end, s.inference_end)
            })
            .collect();
        assert_eq!(
            ends,
            vec![
                (7.0, 1000.0),
                (10.0, 1000.0),
                (6.3832, 1000.0),
                (10.0, 1000.0),
                (5.0, 250.0),
                (25.0, 1000.0)
            ]
        );
    }

    #[test]
    fn analytic_jacobians_and_hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in SystemKind::ALL {
            let s = system(kind);
            let inv = s.invariant().clone();
            for trial in 0..100 {
                let u = s.sample_ic(&mut rng);
                let t = 0.37 * trial as f64;
                let fd = finite_diff_jacobian(|x| Ok(inv.value(x, t)), &u, 1e-6).unwrap();
                let an = inv.jacobian(&u, t);
                for i in 0..an.rows() {
                    for j in 0..an.cols() {
                        assert!((fd[(i, j)] - an[(i, j)]).abs() < 1e-6, "{kind} jacobian");
                    }
                }
                let hs = inv.hessians(&u, t);
                for (k, h) in hs.iter().enumerate() {
                    let fd =
                        finite_diff_jacobian(|x| Ok(inv.jacobian(x, t).row(k).to_vec()), &u, 1e-6)
                            .unwrap();
                    for i in 0..h.rows() {
                        for j in 0..h.cols() {
                            assert!((fd[(i, j)] - h[(i, j)]).abs() < 1e-6, "{kind} hessian");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn autonomous_invariants_are_conserved_by_the_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in SystemKind::ALL {
            if kind == SystemKind::RobotArm {
                continue;
            }
            let s = system(kind);
            for _ in 0..50 {
                let u = s.sample_ic(&mut rng);
                let f = s.true_rhs(&u, 0.0).unwrap();
                let rate = matvec(&s.invariant().jacobian(&u, 0.0), &f).unwrap();
                assert!(rate.iter().all(|r| r.abs() < 1e-10), "{kind}: {rate:?}");
            }
        }
    }

    #[test]
    fn robot_arm_end_effector_follows_target_velocity() {
        let s = system(SystemKind::RobotArm);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta = s.sample_ic(&mut rng);
            let t = rng.gen_range(0.0..5.0);
            let thetadot = s.true_rhs(&theta, t).unwrap();
            // d/dt e(θ(t)) by central differences along the flow direction.
            let e = |th: &[f64]| -> Vector {
                vec![
                    th.iter().map(|a| a.cos()).sum(),
                    th.iter().map(|a| a.sin()).sum(),
                ]
            };
            let eps = 1e-6;
            let plus: Vector = theta
                .iter()
                .zip(&thetadot)
                .map(|(a, b)| a + eps * b)
                .collect();
            let minus: Vector = theta
                .iter()
                .zip(&thetadot)
                .map(|(a, b)| a - eps * b)
                .collect();
            let (ep, em) = (e(&plus), e(&minus));
            let rate = [(ep[0] - em[0]) / (2.0 * eps), (ep[1] - em[1]) / (2.0 * eps)];
            let pdot = [-(2.0 * PI * t).cos(), 0.0];
            assert!((rate[0] - pdot[0]).abs() < 1e-6 && (rate[1] - pdot[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn samplers_respect_their_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let ms = system(SystemKind::MassSpring).sample_ic(&mut rng);
            let r = dot(&ms, &ms).sqrt();
            assert!((0.8..1.2).contains(&r));
            let tb = system(SystemKind::TwoBody).sample_ic(&mut rng);
            let e = 1.0 - tb[0];
            assert!((0.3..0.6).contains(&e) && tb[1] == 0.0 && tb[2] == 0.0);
            let rb = system(SystemKind::RigidBody).sample_ic(&mut rng);
            assert!((0.9..1.1).contains(&dot(&rb, &rb).sqrt()));
            let lv = system(SystemKind::LotkaVolterra).sample_ic(&mut rng);
            assert!(lv.iter().all(|v| (1.0..2.0).contains(v)));
            let ra = system(SystemKind::RobotArm).sample_ic(&mut rng);
            assert!((0.2..1.2).contains(&ra[0]));
            assert!((0.2..1.2).contains(&(ra[1] - ra[0])) && (0.2..1.2).contains(&(ra[2] - ra[1])));
        }
    }

    #[test]
    fn robot_arm_targets_stay_reachable() {
        let ra = system(SystemKind::RobotArm);
        let data = crate::dataset::generate_dataset(&ra, 32, 3).unwrap();
        assert_eq!(data.trajectories.len(), 32);
    }
}
