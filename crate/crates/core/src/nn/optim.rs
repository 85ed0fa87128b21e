//! SGD with momentum, coupled weight decay, and step learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::{Gradients, MlpModel};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` once each listed epoch completes.
    Milestones {
        milestones: Vec<usize>,
        gamma: f64,
    },
    /// Multiply by `gamma` after every epoch.
    EveryEpoch {
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::Milestones {
                milestones: vec![60, 120, 160],
                gamma: 0.1,
            },
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        match &self.schedule {
            LrSchedule::Milestones { gamma, .. } | LrSchedule::EveryEpoch { gamma }
                if !(gamma.is_finite() && *gamma > 0.0) =>
            {
                Err(Error::Config(format!(
                    "schedule gamma must be positive, got {gamma}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub lr: f64,
    pub velocity: Vec<(Tensor, Tensor)>,
    last_scheduled: Option<usize>,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, config: SgdConfig) -> Result<Self> {
        config.validate()?;
        let velocity = model
            .layers()
            .iter()
            .map(|l| {
                (
                    Tensor::zeros(l.weight.rows(), l.weight.cols()),
                    Tensor::zeros(1, l.bias.cols()),
                )
            })
            .collect();
        Ok(OptimizerState {
            lr: config.lr,
            config,
            velocity,
            last_scheduled: None,
        })
    }
}

/// `v <- momentum * v + (g + wd * theta)`, then `theta <- theta - lr * v`.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != model.layers().len() || state.velocity.len() != model.layers().len() {
        return Err(Error::dims(model.layers().len(), grads.layers.len()));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(
            "non-finite gradient passed to sgd_step".into(),
        ));
    }
    let (mu, wd, lr) = (state.config.momentum, state.config.weight_decay, state.lr);
    for ((layer, (gw, gb)), (vw, vb)) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.velocity.iter_mut())
    {
        for (param, grad, vel) in [(&mut layer.weight, gw, vw), (&mut layer.bias, gb, vb)] {
            param.same_shape(grad)?;
            param.same_shape(vel)?;
            for ((p, &g), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(vel.data_mut())
            {
                *v = mu * *v + (g + wd * *p);
                *p -= lr * *v;
            }
        }
    }
    Ok(())
}

/// Applies the schedule for a completed `epoch`. Repeated calls with the
/// same epoch are no-ops.
pub fn schedule_step(state: &mut OptimizerState, epoch: usize) {
    if state.last_scheduled == Some(epoch) {
        return;
    }
    state.last_scheduled = Some(epoch);
    match &state.config.schedule {
        LrSchedule::Constant => {}
        LrSchedule::Milestones { milestones, gamma } => {
            if milestones.contains(&epoch) {
                state.lr *= gamma;
            }
        }
        LrSchedule::EveryEpoch { gamma } => state.lr *= gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Dense;

    fn tiny() -> MlpModel {
        MlpModel::from_layers(vec![Dense {
            weight: Tensor::from_rows(&[[1.0, -2.0]]).unwrap(),
            bias: Tensor::from_rows(&[[0.5, 0.25]]).unwrap(),
        }])
        .unwrap()
    }

    fn grads(w: [f64; 2], b: [f64; 2]) -> Gradients {
        Gradients {
            layers: vec![(
                Tensor::from_rows(&[w]).unwrap(),
                Tensor::from_rows(&[b]).unwrap(),
            )],
        }
    }

    fn config(momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            lr: 0.1,
            momentum,
            weight_decay,
            schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn plain_gradient_step() {
        let mut model = tiny();
        let mut state = OptimizerState::new(&model, config(0.0, 0.0)).unwrap();
        sgd_step(&mut model, &grads([1.0, 2.0], [-1.0, 0.0]), &mut state).unwrap();
        let p: Vec<f64> = model.params().copied().collect();
        let expected = [0.9, -2.2, 0.6, 0.25];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = tiny();
        let before = model.clone();
        let mut state = OptimizerState::new(&model, config(0.9, 0.0)).unwrap();
        sgd_step(&mut model, &grads([0.0; 2], [0.0; 2]), &mut state).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let mut model = tiny();
        let theta0: Vec<f64> = model.params().copied().collect();
        let mut state = OptimizerState::new(&model, config(0.9, 5e-4)).unwrap();
        let g1 = [0.3, -0.2, 0.1, 0.7];
        let g2 = [-0.4, 0.5, 0.2, -0.1];
        sgd_step(
            &mut model,
            &grads([g1[0], g1[1]], [g1[2], g1[3]]),
            &mut state,
        )
        .unwrap();
        sgd_step(
            &mut model,
            &grads([g2[0], g2[1]], [g2[2], g2[3]]),
            &mut state,
        )
        .unwrap();
        let got: Vec<f64> = model.params().copied().collect();
        for i in 0..4 {
            let v1 = g1[i] + 5e-4 * theta0[i];
            let t1 = theta0[i] - 0.1 * v1;
            let v2 = 0.9 * v1 + (g2[i] + 5e-4 * t1);
            let t2 = t1 - 0.1 * v2;
            assert!((got[i] - t2).abs() < 1e-12);
        }
    }

    #[test]
    fn milestone_schedule() {
        let model = tiny();
        let mut state = OptimizerState::new(&model, SgdConfig::default()).unwrap();
        schedule_step(&mut state, 59);
        assert_eq!(state.lr, 0.1);
        schedule_step(&mut state, 60);
        assert!((state.lr - 0.01).abs() < 1e-15);
        schedule_step(&mut state, 60);
        assert!((state.lr - 0.01).abs() < 1e-15);
    }

    #[test]
    fn per_epoch_decay() {
        let model = tiny();
        let mut cfg = config(0.9, 0.0);
        cfg.schedule = LrSchedule::EveryEpoch { gamma: 0.7 };
        let mut state = OptimizerState::new(&model, cfg).unwrap();
        schedule_step(&mut state, 1);
        schedule_step(&mut state, 2);
        assert!((state.lr - 0.1 * 0.49).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let model = tiny();
        assert!(OptimizerState::new(
            &model,
            SgdConfig {
                lr: 0.0,
                ..config(0.0, 0.0)
            }
        )
        .is_err());
        assert!(OptimizerState::new(&model, config(1.0, 0.0)).is_err());
    }
}
