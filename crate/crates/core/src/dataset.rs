//! Reference trajectory generation and the dataset file format.
//!
//! File layout (`pnode-dataset v1`), UTF-8 text:
//!
//! ```text
//! # pnode-dataset v1
//! # system: mass_spring
//! # params: {"lotka_volterra":{...},"rigid_body":{...}}
//! # h_ref: 0.001
//! # save_every: 10
//! # seed: 7
//! # trajectories: 16
//! trajectory,t,u0,u1
//! 0,0.0,0.93,0.12
//! 0,0.01,0.931,0.11
//! ...
//! ```
//!
//! Rows are grouped by trajectory index in increasing order; every float is
//! written in Rust's shortest round-trip representation so parsing the file
//! reproduces the in-memory dataset bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::norm_inf;
use crate::odeint::{integrate, StepperConfig, Trajectory};
use crate::projection::ConstraintSpec;
use crate::systems::{DynamicalSystem, SystemKind, SystemParams};

pub const FORMAT_HEADER: &str = "# pnode-dataset v1";

/// Reference integration step.
pub const H_REF: f64 = 1e-3;

/// Steps of `H_REF` between saved samples.
pub const SAVE_EVERY: usize = 10;

/// Largest invariant drift tolerated in a reference trajectory.
pub const MAX_REFERENCE_DRIFT: f64 = 1e-7;

/// RNG stream offset separating evaluation initial conditions from
/// training ones drawn with the same seed.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemKind,
    pub params: SystemParams,
    pub h_ref: f64,
    pub save_every: usize,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Spacing between saved samples.
    pub fn save_interval(&self) -> f64 {
        self.h_ref * self.save_every as f64
    }

    pub fn make_system(&self) -> Result<DynamicalSystem> {
        DynamicalSystem::new(self.system, self.params)
    }

    /// One constraint per trajectory, anchored at its first sample.
    pub fn constraints(&self, system: &DynamicalSystem) -> Result<Vec<ConstraintSpec>> {
        self.trajectories
            .iter()
            .map(|tr| system.constraint(&tr.states[0], tr.times[0]))
            .collect()
    }
}

/// Deterministic per-trajectory generator: stream `index` of `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Largest multiple of `interval` not exceeding `t_end`.
pub fn snap_to_grid(t_end: f64, interval: f64) -> f64 {
    (t_end / interval + 1e-9).floor() * interval
}

/// Simulates `n_trajectories` reference trajectories over the system's
/// training horizon with the default reference step.
pub fn generate_dataset(
    system: &DynamicalSystem,
    n_trajectories: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with(
        system,
        n_trajectories,
        seed,
        system.train_end,
        H_REF,
        SAVE_EVERY,
    )
}

pub fn generate_dataset_with(
    system: &DynamicalSystem,
    n_trajectories: usize,
    seed: u64,
    t_end: f64,
    h_ref: f64,
    save_every: usize,
) -> Result<Dataset> {
    if n_trajectories == 0 {
        return Err(Error::InvalidArgument(
            "need at least one trajectory".into(),
        ));
    }
    let t_end = snap_to_grid(t_end, h_ref * save_every as f64);
    let trajectories = (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            let u0 = system.sample_ic(&mut rng);
            reference_trajectory(system, &u0, t_end, h_ref, save_every)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        system: system.kind(),
        params: *system.params(),
        h_ref,
        save_every,
        seed,
        trajectories,
    })
}

/// Integrates the true dynamics from `u0` and checks invariant drift.
pub fn reference_trajectory(
    system: &DynamicalSystem,
    u0: &[f64],
    t_end: f64,
    h_ref: f64,
    save_every: usize,
) -> Result<Trajectory> {
    let rhs = |u: &[f64], t: f64| system.true_rhs(u, t);
    let traj = integrate(
        &rhs,
        u0,
        0.0,
        t_end,
        &StepperConfig::plain(h_ref),
        None,
        save_every,
    )?;
    let c = system.constraint(u0, 0.0)?;
    for (t, u) in traj.times.iter().zip(&traj.states) {
        let drift = norm_inf(&c.residual(u, *t));
        if !(drift <= MAX_REFERENCE_DRIFT) {
            return Err(Error::DataQuality(format!(
                "{} reference trajectory drifts by {drift:e} at t = {t}",
                system.name()
            )));
        }
    }
    Ok(traj)
}

pub fn to_text(ds: &Dataset) -> String {
    let mut out = String::new();
    let params = serde_json::to_string(&ds.params).expect("params serialize");
    let _ = writeln!(out, "{FORMAT_HEADER}");
    let _ = writeln!(out, "# system: {}", ds.system);
    let _ = writeln!(out, "# params: {params}");
    let _ = writeln!(out, "# h_ref: {:?}", ds.h_ref);
    let _ = writeln!(out, "# save_every: {}", ds.save_every);
    let _ = writeln!(out, "# seed: {}", ds.seed);
    let _ = writeln!(out, "# trajectories: {}", ds.trajectories.len());
    let dim = ds.trajectories.first().map_or(0, Trajectory::dim);
    out.push_str("trajectory,t");
    for i in 0..dim {
        let _ = write!(out, ",u{i}");
    }
    out.push('\n');
    for (k, tr) in ds.trajectories.iter().enumerate() {
        for (t, u) in tr.times.iter().zip(&tr.states) {
            let _ = write!(out, "{k},{t:?}");
            for v in u {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

fn header_value<'a>(line: Option<&'a str>, key: &str, lineno: usize) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::Parse {
        line: lineno,
        message: format!("missing `{key}` header"),
    })?;
    line.strip_prefix("# ")
        .and_then(|rest| rest.strip_prefix(key))
        .and_then(|rest| rest.strip_prefix(": "))
        .ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("expected `# {key}: ...`, found `{line}`"),
        })
}

fn parse_num<T: std::str::FromStr>(s: &str, lineno: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("invalid {what} `{s}`"),
    })
}

pub fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    if lines.next() != Some(FORMAT_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{FORMAT_HEADER}`"),
        });
    }
    let system: SystemKind = header_value(lines.next(), "system", 2)?.parse()?;
    let params: SystemParams = serde_json::from_str(header_value(lines.next(), "params", 3)?)?;
    let h_ref: f64 = parse_num(header_value(lines.next(), "h_ref", 4)?, 4, "h_ref")?;
    let save_every: usize = parse_num(
        header_value(lines.next(), "save_every", 5)?,
        5,
        "save_every",
    )?;
    let seed: u64 = parse_num(header_value(lines.next(), "seed", 6)?, 6, "seed")?;
    let count: usize = parse_num(header_value(lines.next(), "trajectories", 7)?, 7, "count")?;
    let columns = lines.next().ok_or_else(|| Error::Parse {
        line: 8,
        message: "missing column header".into(),
    })?;
    let dim = columns.split(',').count().saturating_sub(2);
    if !columns.starts_with("trajectory,t") {
        return Err(Error::Parse {
            line: 8,
            message: format!("unexpected columns `{columns}`"),
        });
    }

    let mut blocks: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (offset, line) in lines.enumerate() {
        let lineno = offset + 9;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let k: usize = parse_num(fields.next().unwrap_or(""), lineno, "trajectory index")?;
        let t: f64 = parse_num(fields.next().unwrap_or(""), lineno, "time")?;
        let u = fields
            .map(|f| parse_num::<f64>(f, lineno, "state value"))
            .collect::<Result<Vec<_>>>()?;
        if u.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} state values, found {}", u.len()),
            });
        }
        if k == blocks.len() {
            blocks.push((Vec::new(), Vec::new()));
        } else if k + 1 != blocks.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("trajectory {k} out of order"),
            });
        }
        let block = blocks.last_mut().expect("pushed above");
        block.0.push(t);
        block.1.push(u);
    }
    if blocks.len() != count {
        return Err(Error::Parse {
            line: 7,
            message: format!(
                "header announces {count} trajectories, file has {}",
                blocks.len()
            ),
        });
    }
    let trajectories = blocks
        .into_iter()
        .map(|(t, u)| Trajectory::new(t, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        system,
        params,
        h_ref,
        save_every,
        seed,
        trajectories,
    })
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(ds))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::SystemKind;

    fn system(kind: SystemKind) -> DynamicalSystem {
        DynamicalSystem::new(kind, SystemParams::default()).unwrap()
    }

    #[test]
    fn mass_spring_reference_conserves_energy() {
        let s = system(SystemKind::MassSpring);
        let traj = reference_trajectory(&s, &[1.0, 0.0], 10.0, H_REF, SAVE_EVERY).unwrap();
        assert_eq!(traj.len(), 1001);
        for u in &traj.states {
            assert!((0.5 * (u[0] * u[0] + u[1] * u[1]) - 0.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn lotka_volterra_first_integral_is_two() {
        let s = system(SystemKind::LotkaVolterra);
        let traj = reference_trajectory(&s, &[1.0, 1.0], 7.0, H_REF, SAVE_EVERY).unwrap();
        for u in &traj.states {
            let v = s.invariant().value(u, 0.0)[0];
            assert!((v - 2.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn zero_trajectories_is_an_error() {
        assert!(generate_dataset(&system(SystemKind::MassSpring), 0, 1).is_err());
    }

    #[test]
    fn drift_check_rejects_coarse_reference() {
        let s = system(SystemKind::TwoBody);
        let u0 = [0.4, 0.0, 0.0, (1.6_f64 / 0.4).sqrt()];
        assert!(matches!(
            reference_trajectory(&s, &u0, 6.0, 0.1, 1),
            Err(Error::DataQuality(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let s = system(SystemKind::RobotArm);
        let a = generate_dataset_with(&s, 3, 42, 0.5, H_REF, SAVE_EVERY).unwrap();
        let b = generate_dataset_with(&s, 3, 42, 0.5, H_REF, SAVE_EVERY).unwrap();
        assert_eq!(to_text(&a), to_text(&b));
        assert_eq!(from_text(&to_text(&a)).unwrap(), a);
        let c = generate_dataset_with(&s, 3, 43, 0.5, H_REF, SAVE_EVERY).unwrap();
        assert_ne!(a.trajectories[0].states[0], c.trajectories[0].states[0]);
    }

    #[test]
    fn two_body_horizon_snaps_to_sample_grid() {
        let s = system(SystemKind::TwoBody);
        let ds = generate_dataset(&s, 1, 0).unwrap();
        let last = *ds.trajectories[0].times.last().unwrap();
        assert!((last - 6.38).abs() < 1e-9);
    }

    #[test]
    fn parser_reports_bad_rows() {
        let s = system(SystemKind::MassSpring);
        let ds = generate_dataset_with(&s, 1, 1, 0.05, H_REF, SAVE_EVERY).unwrap();
        let text = to_text(&ds).replace("\n0,0.01,", "\n0,0.01,oops,");
        assert!(matches!(from_text(&text), Err(Error::Parse { .. })));
        assert!(from_text("not a dataset").is_err());
    }
}
