use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LrSchedule, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain cross entropy.
    Ce,
    /// Cross entropy plus `λ·CMI − β·Γ`, with alternating centroid updates.
    Cmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Milestones,
    EveryEpoch,
}

/// Every knob of a training run. Parsed from flat TOML; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the concentration (CMI) term.
    pub lambda: f64,
    /// Weight of the separation term.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples drawn per class for each centroid refresh.
    pub class_batch_size: usize,
    /// Exponential moving-average factor for centroid refreshes.
    pub q_momentum: f64,
    /// Refresh centroids after every this many parameter steps.
    pub q_update_every: usize,
    /// Treat the second argument of the pairwise separation term as constant.
    pub freeze_separation_target: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: ScheduleKind,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Cmic,
            lambda: 0.7,
            beta: 0.4,
            epochs: 200,
            batch_size: 64,
            class_batch_size: 8,
            q_momentum: 0.9999,
            q_update_every: 1,
            freeze_separation_target: false,
            seed: 0,
            hidden: vec![64],
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: ScheduleKind::Milestones,
            lr_milestones: vec![60, 120, 160],
            lr_gamma: 0.1,
        }
    }
}

impl TrainConfig {
    /// Cross-entropy baseline sharing every other default.
    pub fn ce() -> Self {
        TrainConfig {
            mode: Mode::Ce,
            lambda: 0.0,
            beta: 0.0,
            ..TrainConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `β / λ`, the target NCMI level the two weights imply.
    pub fn ratio(&self) -> Option<f64> {
        (self.lambda > 0.0).then(|| self.beta / self.lambda)
    }

    pub fn sgd(&self) -> SgdConfig {
        let schedule = match self.lr_schedule {
            ScheduleKind::Constant => LrSchedule::Constant,
            ScheduleKind::Milestones => LrSchedule::Milestones {
                milestones: self.lr_milestones.clone(),
                gamma: self.lr_gamma,
            },
            ScheduleKind::EveryEpoch => LrSchedule::EveryEpoch {
                gamma: self.lr_gamma,
            },
        };
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.beta >= 0.0
            && self.beta.is_finite())
        {
            return bad(format!(
                "lambda and beta must be finite and >= 0, got {} and {}",
                self.lambda, self.beta
            ));
        }
        match self.mode {
            Mode::Ce if self.lambda != 0.0 || self.beta != 0.0 => {
                return bad(format!(
                    "ce mode requires lambda = beta = 0, got {} and {}",
                    self.lambda, self.beta
                ))
            }
            Mode::Cmic if self.lambda <= 0.0 => return bad("cmic mode requires lambda > 0".into()),
            _ => {}
        }
        if self.batch_size == 0 || self.class_batch_size == 0 || self.q_update_every == 0 {
            return bad("batch_size, class_batch_size and q_update_every must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.q_momentum) {
            return bad(format!(
                "q_momentum must be in [0, 1), got {}",
                self.q_momentum
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        self.sgd().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.beta), (0.7, 0.4));
        assert_eq!(c.class_batch_size, 8);
        assert_eq!(c.q_momentum, 0.9999);
        assert_eq!((c.momentum, c.weight_decay), (0.9, 5e-4));
        assert_eq!(c.lr_milestones, vec![60, 120, 160]);
        assert!((c.ratio().unwrap() - 0.4 / 0.7).abs() < 1e-15);
        c.validate().unwrap();
        TrainConfig::ce().validate().unwrap();
    }

    #[test]
    fn parses_flat_toml() {
        let c = TrainConfig::from_toml(
            "mode = \"ce\"\nlambda = 0.0\nbeta = 0.0\nepochs = 5\nhidden = [8, 8]\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Ce);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.hidden, vec![8, 8]);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_inconsistent_weights() {
        assert!(matches!(
            TrainConfig::from_toml("lamda = 0.7"),
            Err(Error::Config(_))
        ));
        assert!(TrainConfig::from_toml("mode = \"ce\"").is_err());
        assert!(TrainConfig::from_toml("mode = \"cmic\"\nlambda = 0.0").is_err());
        assert!(TrainConfig::from_toml("q_momentum = 1.0").is_err());
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
    }
}
