//! Learned vector fields `f(u, θ, t)`: a tanh multilayer perceptron, with an
//! optional second-order wrapper for mechanical systems.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{dot, Vector};
use crate::systems::{DynamicalSystem, SecondOrderSplit};

/// Something that can be integrated: a model or a reference system.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, u: &[f64], t: f64) -> Result<Vector>;
}

impl Dynamics for DynamicalSystem {
    fn dim(&self) -> usize {
        DynamicalSystem::dim(self)
    }

    fn rhs(&self, u: &[f64], t: f64) -> Result<Vector> {
        self.true_rhs(u, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub state_dim: usize,
    /// Layer widths from network input to network output.
    pub widths: Vec<usize>,
    /// Network predicts accelerations only; positions advance with the
    /// observed velocities.
    pub second_order: Option<SecondOrderSplit>,
    /// Append `sin(2πt), cos(2πt)` to the network input.
    pub time_features: bool,
}

impl Architecture {
    pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        second_order: Option<SecondOrderSplit>,
        time_features: bool,
    ) -> Result<Self> {
        let input = state_dim + if time_features { 2 } else { 0 };
        let output = match &second_order {
            Some(split) => {
                if split.positions.len() != split.velocities.len()
                    || split.positions.len() * 2 != state_dim
                {
                    return Err(Error::InvalidArgument(
                        "second-order split must halve the state".into(),
                    ));
                }
                split.velocities.len()
            }
            None => state_dim,
        };
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        Ok(Self {
            state_dim,
            widths,
            second_order,
            time_features,
        })
    }

    /// Architecture matched to a benchmark system: second-order for the
    /// mechanical systems, time features for explicitly time-dependent ones.
    pub fn for_system(system: &DynamicalSystem, hidden: &[usize]) -> Result<Self> {
        Self::new(
            system.dim(),
            hidden,
            system.second_order.clone(),
            system.time_dependent,
        )
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        self.widths.windows(2).scan(0, |offset, w| {
            let start = *offset;
            *offset += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDynamics {
    pub arch: Architecture,
    /// Per layer: weights (row-major `fan_out x fan_in`) then biases.
    pub params: Vector,
}

/// Parameter leaves of one taped forward pass.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    layers: Vec<(NodeId, NodeId)>,
}

impl ParamNodes {
    /// Flattens per-layer gradients back into the parameter layout.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vector {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(grads.wrt(*w));
            out.extend(grads.wrt(*b));
        }
        out
    }
}

impl MlpDynamics {
    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vector) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: arch.param_count(),
                found: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    /// Glorot-uniform weights `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        for (offset, fan_in, fan_out) in arch.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Self { arch, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn network_input(&self, u: &[f64], t: f64) -> Vector {
        let mut x = u.to_vec();
        if self.arch.time_features {
            x.push((2.0 * PI * t).sin());
            x.push((2.0 * PI * t).cos());
        }
        x
    }

    /// Evaluates `du/dt`.
    pub fn forward(&self, u: &[f64], t: f64) -> Result<Vector> {
        if u.len() != self.arch.state_dim {
            return Err(Error::DimensionMismatch {
                context: "model input state",
                expected: self.arch.state_dim,
                found: u.len(),
            });
        }
        let mut x = self.network_input(u, t);
        let n_layers = self.arch.widths.len() - 1;
        for (li, (offset, fan_in, fan_out)) in self.arch.layers().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut y: Vector = (0..fan_out)
                .map(|i| dot(&w[i * fan_in..(i + 1) * fan_in], &x))
                .collect();
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
            if li + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        Ok(match &self.arch.second_order {
            None => x,
            Some(split) => {
                let mut out = vec![0.0; u.len()];
                for (k, (&p, &v)) in split.positions.iter().zip(&split.velocities).enumerate() {
                    out[p] = u[v];
                    out[v] = x[k];
                }
                out
            }
        })
    }

    /// Registers the parameters as tape leaves, one weight and one bias
    /// leaf per layer.
    pub fn register(&self, tape: &mut Tape) -> ParamNodes {
        let layers = self
            .arch
            .layers()
            .map(|(offset, fan_in, fan_out)| {
                let split = offset + fan_in * fan_out;
                let w = tape.leaf(self.params[offset..split].to_vec());
                let b = tape.leaf(self.params[split..split + fan_out].to_vec());
                (w, b)
            })
            .collect();
        ParamNodes { layers }
    }

    /// Same arithmetic as [`forward`](Self::forward), recorded on `tape`.
    /// Concatenation and slicing are expressed as constant 0/1 matvecs.
    pub fn forward_with_tape(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        u: NodeId,
        t: f64,
    ) -> Result<NodeId> {
        let n = self.arch.state_dim;
        if tape.value(u).len() != n {
            return Err(Error::DimensionMismatch {
                context: "taped model input state",
                expected: n,
                found: tape.value(u).len(),
            });
        }
        let mut x = u;
        if self.arch.time_features {
            let width = n + 2;
            let mut embed = vec![0.0; width * n];
            for i in 0..n {
                embed[i * n + i] = 1.0;
            }
            let embed = tape.constant(embed);
            let padded = tape.matvec(embed, u, width, n)?;
            let mut feats = vec![0.0; width];
            feats[n] = (2.0 * PI * t).sin();
            feats[n + 1] = (2.0 * PI * t).cos();
            let feats = tape.constant(feats);
            x = tape.add(padded, feats)?;
        }
        let n_layers = params.layers.len();
        for (li, ((w, b), (_, fan_in, fan_out))) in
            params.layers.iter().zip(self.arch.layers()).enumerate()
        {
            let wx = tape.matvec(*w, x, fan_out, fan_in)?;
            x = tape.add(wx, *b)?;
            if li + 1 < n_layers {
                x = tape.tanh(x)?;
            }
        }
        match &self.arch.second_order {
            None => Ok(x),
            Some(split) => {
                let half = split.velocities.len();
                let mut pass = vec![0.0; n * n];
                let mut place = vec![0.0; n * half];
                for (k, (&p, &v)) in split.positions.iter().zip(&split.velocities).enumerate() {
                    pass[p * n + v] = 1.0;
                    place[v * half + k] = 1.0;
                }
                let pass = tape.constant(pass);
                let place = tape.constant(place);
                let vel = tape.matvec(pass, u, n, n)?;
                let acc = tape.matvec(place, x, n, half)?;
                tape.add(vel, acc)
            }
        }
    }
}

impl Dynamics for MlpDynamics {
    fn dim(&self) -> usize {
        self.arch.state_dim
    }

    fn rhs(&self, u: &[f64], t: f64) -> Result<Vector> {
        self.forward(u, t)
    }
}

pub const CHECKPOINT_FORMAT: &str = "pnode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: architecture, flat parameters and the run that produced
/// them. Serialized as JSON; floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub system: String,
    pub mode: String,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub activation: String,
    pub model: MlpDynamics,
}

impl Checkpoint {
    pub fn new(system: &str, mode: &str, gamma: Option<f64>, model: MlpDynamics) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            system: system.into(),
            mode: mode.into(),
            gamma,
            activation: "tanh".into(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        if ck.model.params.len() != ck.model.arch.param_count() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint parameter count",
                expected: ck.model.arch.param_count(),
                found: ck.model.params.len(),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
