//! Probability-vector primitives.
//!
//! All quantities are in nats. Logarithms of probabilities go through
//! [`clamp_log`], which floors its argument at [`PROB_FLOOR`] so that
//! one-hot outputs never produce infinities. KL divergence uses the
//! convention `0 * ln(0 / q) = 0`.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the row sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_distribution(&values)?;
        Ok(ProbVector(values))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector(vec![1.0 / classes as f64; classes])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_distribution(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a distribution needs at least 2 classes, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "probability {v} outside [0, 1]"
        )));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// `N` probability vectors over `C` classes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    data: Vec<f64>,
    classes: usize,
}

impl ProbMatrix {
    /// Builds a matrix from flat row-major data, validating every row.
    pub fn from_flat(data: Vec<f64>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput(format!(
                "class count must be at least 2, got {classes}"
            )));
        }
        if data.is_empty() || !data.len().is_multiple_of(classes) {
            return Err(Error::InvalidInput(format!(
                "{} values do not form non-empty rows of width {classes}",
                data.len()
            )));
        }
        for row in data.chunks_exact(classes) {
            check_distribution(row)?;
        }
        Ok(ProbMatrix { data, classes })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let classes = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * classes);
        for row in rows {
            let row = row.as_ref();
            if row.len() != classes {
                return Err(Error::dims(classes, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, classes)
    }

    /// Applies a row-wise softmax to flat row-major logits.
    pub fn from_logits(logits: &[f64], classes: usize) -> Result<Self> {
        if classes == 0 || !logits.len().is_multiple_of(classes) {
            return Err(Error::InvalidInput(
                "logit count is not a multiple of the class count".into(),
            ));
        }
        let mut data = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(classes) {
            data.extend(softmax(row)?.into_inner());
        }
        Self::from_flat(data, classes)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Copies out the rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> ProbMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.classes);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        ProbMatrix {
            data,
            classes: self.classes,
        }
    }
}

/// Ground-truth labels, each below `classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(LabelVector { labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

impl Deref for LabelVector {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.labels
    }
}

/// Checks that a probability matrix and label vector describe the same sample.
pub fn check_paired(p: &ProbMatrix, y: &LabelVector) -> Result<()> {
    if p.rows() != y.len() {
        return Err(Error::dims(p.rows(), y.len()));
    }
    if p.classes() != y.classes() {
        return Err(Error::dims(p.classes(), y.classes()));
    }
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(
            "softmax needs at least 2 logits".into(),
        ));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

#[inline]
pub fn clamp_log(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::dims(p.len(), q.len()));
    }
    Ok(())
}

/// `H(p, q) = -sum p(i) ln q(i)`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(cross_entropy_unchecked(p, q))
}

#[inline]
pub(crate) fn cross_entropy_unchecked(p: &[f64], q: &[f64]) -> f64 {
    -p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * clamp_log(qi))
        .sum::<f64>()
}

/// Cross entropy of the one-hot distribution at `label` against `q`.
pub fn cross_entropy_onehot(label: usize, q: &[f64]) -> Result<f64> {
    q.get(label).map(|&qy| -clamp_log(qy)).ok_or_else(|| {
        Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            q.len()
        ))
    })
}

/// `D(p || q)`, skipping terms where `p(i) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(kl_unchecked(p, q))
}

#[inline]
pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (clamp_log(pi) - clamp_log(qi)))
        .sum()
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&pi| pi * clamp_log(pi)).sum::<f64>()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
