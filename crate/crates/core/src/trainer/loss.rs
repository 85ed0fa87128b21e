//! The batch objective
//!
//! ```text
//! J_B = mean_j H(y_j, P_j) + λ mean_j D(P_j || Q_{y_j})
//!       − β (1/|B|²) Σ_{j,k} 1{y_j ≠ y_k} H(P_j, P_k)
//! ```
//!
//! and the per-class distributions `Q` it is minimized against.

use crate::error::{Error, Result};
use crate::metrics::{error_rates, gamma, variational_cmi};
use crate::nn::{Tape, Tensor, Var};
use crate::numerics::{clamp_log, LabelVector, ProbMatrix, ProbVector};

/// Per-class auxiliary distributions, held fixed during parameter steps.
#[derive(Debug, Clone, PartialEq)]
pub struct QState {
    q: Vec<ProbVector>,
}

impl QState {
    pub fn uniform(classes: usize) -> Self {
        QState {
            q: vec![ProbVector::uniform(classes); classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        let q = rows
            .into_iter()
            .map(|r| {
                if r.len() != classes {
                    return Err(Error::dims(classes, r.len()));
                }
                ProbVector::new(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QState { q })
    }

    pub fn classes(&self) -> usize {
        self.q.len()
    }

    pub fn get(&self, class: usize) -> &[f64] {
        &self.q[class]
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.q
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.q.iter().map(|v| v.to_vec()).collect()
    }

    /// `q_c <- m q_c + (1 - m) mean(batch_c)`, renormalized. Classes
    /// without a batch are left alone.
    pub fn update(&mut self, batches: &[Option<ProbMatrix>], m: f64) -> Result<()> {
        if batches.len() != self.q.len() {
            return Err(Error::dims(self.q.len(), batches.len()));
        }
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidInput(format!("momentum {m} outside [0, 1]")));
        }
        for (q, batch) in self.q.iter_mut().zip(batches) {
            let Some(batch) = batch else { continue };
            if batch.classes() != q.len() {
                return Err(Error::dims(q.len(), batch.classes()));
            }
            let n = batch.rows() as f64;
            let mut next: Vec<f64> = q.iter().map(|&v| m * v).collect();
            for row in batch.iter_rows() {
                for (t, &v) in next.iter_mut().zip(row) {
                    *t += (1.0 - m) * v / n;
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            *q = ProbVector::new(next)?;
        }
        Ok(())
    }
}

/// A recorded objective and its three terms.
#[derive(Debug, Clone, Copy)]
pub struct CmicLoss {
    pub total: Var,
    pub value: f64,
    /// Mean one-hot cross entropy.
    pub cross_entropy: f64,
    /// Mean `D(P_j || Q_{y_j})`, before weighting.
    pub concentration: f64,
    /// Batch separation `Γ_B`, before weighting.
    pub separation: f64,
    /// Set when `beta > 0` but the batch has a single sample.
    pub degenerate_batch: bool,
}

/// Records `J_B` on `tape` for the given logits. No gradient flows into `q`.
/// With `freeze_target`, the second argument of the pairwise term is
/// treated as constant as well.
pub fn cmic_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    q: &QState,
    lambda: f64,
    beta: f64,
    freeze_target: bool,
) -> Result<CmicLoss> {
    let [b, c] = tape.value(logits).shape();
    if labels.len() != b {
        return Err(Error::dims(b, labels.len()));
    }
    if q.classes() != c {
        return Err(Error::dims(c, q.classes()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let bf = b as f64;
    let log_p = tape.log_softmax(logits)?;

    let mut pick = Tensor::zeros(b, c);
    for (j, &y) in labels.iter().enumerate() {
        pick.data_mut()[j * c + y] = -1.0 / bf;
    }
    let pick = tape.leaf(pick)?;
    let ce = tape.mul(log_p, pick)?;
    let ce = tape.sum(ce)?;
    let mut total = ce;
    let ce_value = tape.value(ce).item().expect("scalar");

    let needs_probs = lambda != 0.0 || beta != 0.0;
    let probs = if needs_probs {
        Some(tape.softmax(logits)?)
    } else {
        None
    };

    let mut concentration = 0.0;
    if let Some(p) = probs.filter(|_| lambda != 0.0) {
        let mut log_q = Tensor::zeros(b, c);
        for (j, &y) in labels.iter().enumerate() {
            for (i, &v) in q.get(y).iter().enumerate() {
                log_q.data_mut()[j * c + i] = clamp_log(v);
            }
        }
        let log_q = tape.leaf(log_q)?;
        let ratio = tape.sub(log_p, log_q)?;
        let kl = tape.mul(p, ratio)?;
        let kl = tape.sum(kl)?;
        let kl = tape.scale(kl, 1.0 / bf)?;
        concentration = tape.value(kl).item().expect("scalar");
        let weighted = tape.scale(kl, lambda)?;
        total = tape.add(total, weighted)?;
    }

    let mut separation = 0.0;
    if let Some(p) = probs.filter(|_| beta != 0.0 && b >= 2) {
        let target = if freeze_target {
            tape.detach(log_p)?
        } else {
            log_p
        };
        let target_t = tape.transpose(target)?;
        // inner[j][k] = sum_i P_j(i) ln P_k(i) = -H(P_j, P_k)
        let inner = tape.matmul(p, target_t)?;
        let mut mask = Tensor::zeros(b, b);
        for j in 0..b {
            for k in 0..b {
                if labels[j] != labels[k] {
                    mask.data_mut()[j * b + k] = 1.0;
                }
            }
        }
        let mask = tape.leaf(mask)?;
        let masked = tape.mul(inner, mask)?;
        let s = tape.sum(masked)?;
        separation = -tape.value(s).item().expect("scalar") / (bf * bf);
        let weighted = tape.scale(s, beta / (bf * bf))?;
        total = tape.add(total, weighted)?;
    }

    Ok(CmicLoss {
        total,
        value: tape.value(total).item().expect("scalar"),
        cross_entropy: ce_value,
        concentration,
        separation,
        degenerate_batch: beta != 0.0 && b < 2,
    })
}

/// Value of `J_B` computed from probabilities through the metric
/// estimators rather than the tape.
pub fn cmic_objective(
    p: &ProbMatrix,
    y: &LabelVector,
    q: &QState,
    lambda: f64,
    beta: f64,
) -> Result<f64> {
    let ce = error_rates(p, y)?.ce_bound;
    let conc = variational_cmi(p, y, q.rows())?;
    let sep = gamma(p, y)?;
    Ok(ce + lambda * conc - beta * sep)
}
