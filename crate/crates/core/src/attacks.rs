//! White-box `∞`-norm attacks on the one-hot cross entropy of a model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, Tensor};
use crate::numerics::argmax;

pub const CLIP: (f64, f64) = (0.0, 1.0);

/// Budgets used for robustness curves.
pub const DEFAULT_BUDGETS: [f64; 7] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub budget: f64,
    pub iterations: usize,
    /// Defaults to `2.5 * budget / iterations`.
    pub step_size: Option<f64>,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            budget: 0.1,
            iterations: 5,
            step_size: None,
            random_start: true,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn step(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.budget / self.iterations as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "budget must be finite and >= 0, got {}",
                self.budget
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be >= 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "step size must be > 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

fn check_inputs(model: &MlpModel, x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::dims(x.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.output_dim()) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    if let Some(v) = x.data().iter().find(|v| !(CLIP.0..=CLIP.1).contains(*v)) {
        return Err(Error::InvalidInput(format!("feature {v} outside [0, 1]")));
    }
    Ok(())
}

/// Gradient of `Σ_j H(y_j, P_{x_j})` with respect to the inputs. Rows
/// do not interact, so row `j` is the gradient of sample `j`'s own loss.
pub fn input_gradient(model: &MlpModel, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut fwd = model.forward(x)?;
    let tape = &mut fwd.tape;
    let log_p = tape.log_softmax(fwd.logits)?;
    let mut pick = Tensor::zeros(x.rows(), model.output_dim());
    let c = model.output_dim();
    for (j, &y) in labels.iter().enumerate() {
        pick.data_mut()[j * c + y] = -1.0;
    }
    let pick = tape.leaf(pick)?;
    let ce = tape.mul(log_p, pick)?;
    let loss = tape.sum(ce)?;
    let (_, gx) = fwd.backward_with_input(loss)?;
    if !gx.is_finite() {
        return Err(Error::Numerical("non-finite input gradient".into()));
    }
    Ok(gx)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp `v` into `[x - budget, x + budget] ∩ [0, 1]`.
fn project(v: f64, x: f64, budget: f64) -> f64 {
    v.clamp((x - budget).max(CLIP.0), (x + budget).min(CLIP.1))
}

/// `clip(x + budget * sign(∇_x loss), 0, 1)` for every row of `x`.
pub fn fgsm(model: &MlpModel, x: &Tensor, labels: &[usize], budget: f64) -> Result<Tensor> {
    check_inputs(model, x, labels)?;
    AttackConfig {
        budget,
        ..Default::default()
    }
    .validate()?;
    let g = input_gradient(model, x, labels)?;
    x.zip_map(&g, |xi, gi| (xi + budget * sign(gi)).clamp(CLIP.0, CLIP.1))
}

/// Projected sign-gradient ascent from a start drawn uniformly in the
/// budget ball (or from `x` itself without `random_start`).
pub fn pgd(
    model: &MlpModel,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
) -> Result<Tensor> {
    check_inputs(model, x, labels)?;
    config.validate()?;
    let budget = config.budget;
    let step = config.step();
    let mut adv = x.clone();
    if config.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (a, &xi) in adv.data_mut().iter_mut().zip(x.data()) {
            let offset = budget * (2.0 * rng.random::<f64>() - 1.0);
            *a = project(xi + offset, xi, budget);
        }
    }
    for _ in 0..config.iterations {
        let g = input_gradient(model, &adv, labels)?;
        for ((a, &gi), &xi) in adv.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
            *a = project(*a + step * sign(gi), xi, budget);
        }
    }
    Ok(adv)
}

/// True when every coordinate of `adv` lies in the budget ball around `x`
/// and inside the clip range.
pub fn respects_budget(x: &Tensor, adv: &Tensor, budget: f64) -> bool {
    x.shape() == adv.shape()
        && x.data().iter().zip(adv.data()).all(|(&xi, &ai)| {
            ai >= xi - budget && ai <= xi + budget && (CLIP.0..=CLIP.1).contains(&ai)
        })
}

/// Top-1 accuracy of `model` on the rows of `x`.
pub fn accuracy(model: &MlpModel, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let logits = model.logits(x)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| argmax(logits.row(j)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: f64,
    pub accuracy: f64,
}

/// Accuracy under attack for each budget, in order. `template` supplies
/// PGD iterations, step policy and start seed; its budget is ignored.
pub fn robust_accuracy_curve(
    model: &MlpModel,
    data: &Dataset,
    budgets: &[f64],
    kind: AttackKind,
    template: &AttackConfig,
) -> Result<Vec<CurvePoint>> {
    if budgets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput(
            "budgets must be sorted ascending".into(),
        ));
    }
    let labels = data.labels.as_slice();
    budgets
        .iter()
        .map(|&budget| {
            let adv = match kind {
                AttackKind::Fgsm => fgsm(model, &data.features, labels, budget)?,
                AttackKind::Pgd => pgd(
                    model,
                    &data.features,
                    labels,
                    &AttackConfig {
                        budget,
                        ..*template
                    },
                )?,
            };
            debug_assert!(respects_budget(&data.features, &adv, budget));
            Ok(CurvePoint {
                budget,
                accuracy: accuracy(model, &adv, labels)?,
            })
        })
        .collect()
}

/// `budget,accuracy` CSV with a header line.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("budget,accuracy\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.budget, p.accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::numerics::LabelVector;
    use proptest::prelude::*;

    /// Two-class linear model on one feature: logits `(0, w x + b)`.
    fn linear(w: f64, b: f64) -> MlpModel {
        MlpModel::from_layers(vec![Dense {
            weight: Tensor::from_rows(&[[0.0, w]]).unwrap(),
            bias: Tensor::from_rows(&[[0.0, b]]).unwrap(),
        }])
        .unwrap()
    }

    fn random_model(seed: u64) -> MlpModel {
        MlpModel::new(&[4, 6, 3], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let model = random_model(1);
        let x = Tensor::from_rows(&[[0.1, 0.5, 0.9, 0.0], [1.0, 0.3, 0.2, 0.7]]).unwrap();
        assert_eq!(fgsm(&model, &x, &[0, 2], 0.0).unwrap(), x);
        let cfg = AttackConfig {
            budget: 0.0,
            ..Default::default()
        };
        assert_eq!(pgd(&model, &x, &[0, 2], &cfg).unwrap(), x);
    }

    #[test]
    fn linear_gradient_sign_matches_hand_derivation() {
        // For class 0, dH/dx = P_1 * w, so a positive weight pushes x up.
        let model = linear(2.0, -1.0);
        let x = Tensor::from_rows(&[[0.4]]).unwrap();
        let g = input_gradient(&model, &x, &[0]).unwrap();
        let p1 = 1.0 / (1.0 + (-(2.0 * 0.4 - 1.0_f64)).exp());
        assert!((g.item().unwrap() - 2.0 * p1).abs() < 1e-12);
        assert_eq!(fgsm(&model, &x, &[0], 0.1).unwrap().item(), Some(0.4 + 0.1));
        assert_eq!(fgsm(&model, &x, &[1], 0.1).unwrap().item(), Some(0.4 - 0.1));
    }

    #[test]
    fn single_step_pgd_from_x_equals_fgsm() {
        let model = random_model(2);
        let x = Tensor::from_rows(&[[0.1, 0.5, 0.95, 0.0], [1.0, 0.3, 0.2, 0.7]]).unwrap();
        let cfg = AttackConfig {
            budget: 0.2,
            iterations: 1,
            step_size: Some(0.3),
            random_start: false,
            seed: 0,
        };
        assert_eq!(
            pgd(&model, &x, &[1, 0], &cfg).unwrap(),
            fgsm(&model, &x, &[1, 0], 0.2).unwrap()
        );
    }

    #[test]
    fn seeded_pgd_is_deterministic() {
        let model = random_model(3);
        let x = Tensor::from_rows(&[[0.2, 0.4, 0.6, 0.8]]).unwrap();
        let cfg = AttackConfig {
            budget: 0.15,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            pgd(&model, &x, &[2], &cfg).unwrap(),
            pgd(&model, &x, &[2], &cfg).unwrap()
        );
        assert!((cfg.step() - 2.5 * 0.15 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn curve_starts_at_clean_accuracy_and_is_monotone_for_linear_model() {
        let xs: Vec<[f64; 1]> = (0..40).map(|i| [i as f64 / 39.0]).collect();
        let labels: Vec<usize> = xs.iter().map(|x| usize::from(x[0] > 0.5)).collect();
        let data = Dataset::new(
            Tensor::from_rows(&xs).unwrap(),
            LabelVector::new(labels, 2).unwrap(),
        )
        .unwrap();
        let model = linear(8.0, -4.0);
        let mut budgets = vec![0.0];
        budgets.extend(DEFAULT_BUDGETS);
        let cfg = AttackConfig {
            seed: 4,
            ..Default::default()
        };
        let curve = robust_accuracy_curve(&model, &data, &budgets, AttackKind::Pgd, &cfg).unwrap();
        assert_eq!(curve.len(), 8);
        let clean = accuracy(&model, &data.features, data.labels.as_slice()).unwrap();
        assert_eq!(curve[0].accuracy, clean);
        assert!(
            curve.windows(2).all(|w| w[1].accuracy <= w[0].accuracy),
            "{curve:?}"
        );
        assert!(curve[7].accuracy < clean);
        assert!(curve_csv(&curve).starts_with("budget,accuracy\n0,"));
        assert!(robust_accuracy_curve(&model, &data, &[0.2, 0.1], AttackKind::Fgsm, &cfg).is_err());
    }

    #[test]
    fn rejects_out_of_range_features() {
        let model = random_model(5);
        let x = Tensor::from_rows(&[[0.2, 1.5, 0.6, 0.8]]).unwrap();
        assert!(fgsm(&model, &x, &[0], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn attacks_respect_budget_and_clip(
            seed in 0u64..1000,
            budget in 0.0f64..0.5,
            xs in proptest::collection::vec(0.0f64..=1.0, 8),
        ) {
            let model = random_model(seed);
            let x = Tensor::new(2, 4, xs).unwrap();
            let labels = [seed as usize % 3, (seed as usize + 1) % 3];
            let f = fgsm(&model, &x, &labels, budget).unwrap();
            prop_assert!(respects_budget(&x, &f, budget));
            for (&a, &b) in f.data().iter().zip(x.data()) {
                let d = (a - b).abs();
                prop_assert!(d == 0.0 || d <= budget + 1e-12);
            }
            let cfg = AttackConfig { budget, seed, ..Default::default() };
            let p = pgd(&model, &x, &labels, &cfg).unwrap();
            prop_assert!(respects_budget(&x, &p, budget));
        }
    }
}
