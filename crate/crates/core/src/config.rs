//! Experiment configuration file (TOML).
//!
//! Every key is optional; omitted keys take the defaults shown here.
//!
//! ```toml
//! system = "lotka_volterra"
//! mode = "pnode_fast"        # node | node_soft | snode | pnode_fast | pnode_robust
//! # gamma = 0.5              # required for snode, rejected otherwise
//! seed = 0                   # training data
//! model_seed = 0             # weight initialization
//! n_trajectories = 16
//! hidden = [64, 64]
//! # threads = 1              # worker threads; all cores if unset
//!
//! [train]
//! step_size = 0.01
//! soft_weight = 1.0
//! window = 10
//! stride = 5
//! batch_size = 32
//! epochs = 100
//! skip_lbfgs = false
//! shuffle_seed = 0
//!
//! [train.adam]
//! learning_rate = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//!
//! [train.lbfgs]
//! history = 10
//! max_iterations = 200
//! armijo_c1 = 1e-4
//! max_backtracks = 40
//! gradient_tolerance = 1e-10
//!
//! [eval]
//! n_eval = 8
//! # horizon = 100.0          # the system's inference horizon if unset
//! step_size = 0.01
//! save_interval = 0.1
//! seed = 0
//! timing = true
//! blowup_norm = 1e8
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{EvalConfig, ExperimentPlan};
use crate::model::Architecture;
use crate::systems::{make_system, DynamicalSystem, SystemParams};
use crate::training::{AdamConfig, LbfgsConfig, LossSpec, TrainConfig, TrainingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub step_size: f64,
    pub soft_weight: f64,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub skip_lbfgs: bool,
    pub shuffle_seed: u64,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(TrainingMode::Node);
        Self {
            step_size: t.step_size,
            soft_weight: LossSpec::DEFAULT_SOFT_WEIGHT,
            window: t.window,
            stride: t.stride,
            batch_size: t.batch_size,
            epochs: t.epochs,
            skip_lbfgs: t.skip_lbfgs,
            shuffle_seed: t.seed,
            adam: t.adam,
            lbfgs: t.lbfgs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub seed: u64,
    pub model_seed: u64,
    pub n_trajectories: usize,
    pub hidden: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub params: SystemParams,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: "lotka_volterra".into(),
            mode: "pnode_fast".into(),
            gamma: None,
            seed: 0,
            model_seed: 0,
            n_trajectories: 16,
            hidden: Architecture::DEFAULT_HIDDEN.to_vec(),
            threads: None,
            params: SystemParams::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.training_mode()?;
        if self.n_trajectories == 0 {
            return Err(Error::InvalidArgument(
                "n_trajectories must be positive".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be positive".into()));
        }
        self.train_config()?.validate()
    }

    pub fn system(&self) -> Result<DynamicalSystem> {
        make_system(&self.system, self.params)
    }

    pub fn training_mode(&self) -> Result<TrainingMode> {
        TrainingMode::parse(&self.mode, self.gamma)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            mode: self.training_mode()?,
            step_size: t.step_size,
            soft_weight: t.soft_weight,
            window: t.window,
            stride: t.stride,
            batch_size: t.batch_size,
            epochs: t.epochs,
            adam: t.adam,
            lbfgs: t.lbfgs,
            skip_lbfgs: t.skip_lbfgs,
            seed: t.shuffle_seed,
        })
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        Ok(ExperimentPlan {
            hidden: self.hidden.clone(),
            model_seed: self.model_seed,
            train: self.train_config()?,
            eval: self.eval,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = "system = \"mass_spring\"\nmode = \"snode\"\ngamma = 2.0\n[train]\nepochs = 7\n[train.adam]\nlearning_rate = 0.01\n[eval]\nhorizon = 50.0\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(
            cfg.training_mode().unwrap(),
            TrainingMode::Snode { gamma: 2.0 }
        );
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.adam.learning_rate, 0.01);
        assert_eq!(cfg.train.adam.beta1, 0.9);
        assert_eq!(cfg.eval.horizon, Some(50.0));
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("sytem = \"x\"").is_err());
        assert!(ExperimentConfig::from_toml("system = \"pendulum\"").is_err());
        assert!(ExperimentConfig::from_toml("mode = \"snode\"").is_err());
        assert!(ExperimentConfig::from_toml("mode = \"node\"\ngamma = 1.0").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nwindow = 1").is_err());
    }
}
