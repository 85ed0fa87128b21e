//! Empirical concentration and separation metrics over a classifier's
//! output probability space.
//!
//! Every estimator takes the image of a labelled sample under the model,
//! a [`ProbMatrix`] paired with a [`LabelVector`], and treats the sample as
//! the empirical joint distribution.
//!
//! The pairwise separation quantities are double sums over ordered sample
//! pairs with different labels. Since the pair term is linear in the log of
//! its second argument, the inner sum collapses onto per-class sums of
//! log-probability rows, which makes them exact and linear in `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    argmax, check_paired, clamp_log, cross_entropy_onehot, kl_unchecked, shannon_entropy,
    LabelVector, ProbMatrix,
};

/// Per-class mean output distributions and class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    means: Vec<f64>,
    counts: Vec<usize>,
    classes: usize,
}

impl CentroidSet {
    /// Class means for every class that occurs in `y`; absent classes are
    /// flagged through [`CentroidSet::get`] returning `None`.
    pub fn from_sample(p: &ProbMatrix, y: &LabelVector) -> Result<Self> {
        check_paired(p, y)?;
        let classes = p.classes();
        let mut means = vec![0.0; classes * classes];
        let counts = y.counts();
        for (row, &label) in p.iter_rows().zip(y.iter()) {
            for (m, &v) in means[label * classes..(label + 1) * classes]
                .iter_mut()
                .zip(row)
            {
                *m += v;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                for m in &mut means[c * classes..(c + 1) * classes] {
                    *m /= n as f64;
                }
            }
        }
        Ok(CentroidSet {
            means,
            counts,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        (self.counts.get(class).copied().unwrap_or(0) > 0)
            .then(|| &self.means[class * self.classes..(class + 1) * self.classes])
    }

    pub fn first_empty(&self) -> Option<usize> {
        self.counts.iter().position(|&n| n == 0)
    }

    /// Centroids as owned rows; fails on the first empty class.
    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.classes)
            .map(|c| self.get(c).map(<[f64]>::to_vec).ok_or(Error::EmptyClass(c)))
            .collect()
    }
}

/// Class centroids, requiring every class to be present.
pub fn centroids(p: &ProbMatrix, y: &LabelVector) -> Result<CentroidSet> {
    let set = CentroidSet::from_sample(p, y)?;
    match set.first_empty() {
        Some(c) => Err(Error::EmptyClass(c)),
        None => Ok(set),
    }
}

/// Empirical conditional mutual information `I(X; Ŷ | Y)` in nats.
pub fn cmi(p: &ProbMatrix, y: &LabelVector) -> Result<f64> {
    let set = CentroidSet::from_sample(p, y)?;
    Ok(cmi_with(p, y, &set))
}

fn cmi_with(p: &ProbMatrix, y: &LabelVector, set: &CentroidSet) -> f64 {
    let total: f64 = p
        .iter_rows()
        .zip(y.iter())
        .map(|(row, &label)| {
            kl_unchecked(
                row,
                set.get(label).expect("label present in its own sample"),
            )
        })
        .sum();
    total / p.rows() as f64
}

/// Sums of clamped log-probability rows, one per class.
struct ClassLogSums {
    sums: Vec<f64>,
    classes: usize,
}

impl ClassLogSums {
    fn new(p: &ProbMatrix, y: &LabelVector) -> Self {
        let classes = p.classes();
        let mut sums = vec![0.0; classes * classes];
        for (row, &label) in p.iter_rows().zip(y.iter()) {
            for (s, &v) in sums[label * classes..(label + 1) * classes]
                .iter_mut()
                .zip(row)
            {
                *s += clamp_log(v);
            }
        }
        ClassLogSums { sums, classes }
    }

    /// `sum_{k : y_k != label} sum_i q(i) ln p_k(i)`.
    fn dot_excluding(&self, q: &[f64], label: usize) -> f64 {
        let mut total = 0.0;
        for c in (0..self.classes).filter(|&c| c != label) {
            let s = &self.sums[c * self.classes..(c + 1) * self.classes];
            total += q.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }
}

/// Separation `Γ`: mean pairwise cross entropy between rows with
/// different labels, over all `n²` ordered pairs.
pub fn gamma(p: &ProbMatrix, y: &LabelVector) -> Result<f64> {
    check_paired(p, y)?;
    let logs = ClassLogSums::new(p, y);
    Ok(gamma_with(p, y, &logs))
}

fn gamma_with(p: &ProbMatrix, y: &LabelVector, logs: &ClassLogSums) -> f64 {
    let n = p.rows() as f64;
    let total: f64 = p
        .iter_rows()
        .zip(y.iter())
        .map(|(row, &label)| -logs.dot_excluding(row, label))
        .sum();
    // Adding zero maps an empty sum's -0.0 to 0.0.
    total / (n * n) + 0.0
}

/// Normalized CMI, `cmi / gamma`.
pub fn ncmi(p: &ProbMatrix, y: &LabelVector) -> Result<f64> {
    ratio(cmi(p, y)?, gamma(p, y)?)
}

fn ratio(cmi: f64, gamma: f64) -> Result<f64> {
    if gamma > 0.0 {
        Ok(cmi / gamma)
    } else {
        Err(Error::DegenerateSeparation)
    }
}

/// `Γ′`: as [`gamma`] with KL divergence as the pair term.
pub fn gamma_prime(p: &ProbMatrix, y: &LabelVector) -> Result<f64> {
    check_paired(p, y)?;
    let logs = ClassLogSums::new(p, y);
    Ok(gamma_prime_with(p, y, &logs))
}

fn gamma_prime_with(p: &ProbMatrix, y: &LabelVector, logs: &ClassLogSums) -> f64 {
    // D(p_j || p_k) = H(p_j, p_k) - H(p_j)
    let n = p.rows() as f64;
    let counts = y.counts();
    let total: f64 = p
        .iter_rows()
        .zip(y.iter())
        .map(|(row, &label)| {
            let others = (p.rows() - counts[label]) as f64;
            -logs.dot_excluding(row, label) - others * shannon_entropy(row)
        })
        .sum();
    total / (n * n)
}

/// `Γ″`: mean KL divergence from a sample's class centroid to the rows of
/// every other class, over all ordered pairs.
pub fn gamma_double_prime(p: &ProbMatrix, y: &LabelVector) -> Result<f64> {
    let set = CentroidSet::from_sample(p, y)?;
    let logs = ClassLogSums::new(p, y);
    Ok(gamma_double_prime_with(p, &set, &logs))
}

fn gamma_double_prime_with(p: &ProbMatrix, set: &CentroidSet, logs: &ClassLogSums) -> f64 {
    let n = p.rows() as f64;
    let mut total = 0.0;
    for (c, &nc) in set.counts().iter().enumerate() {
        let Some(q) = set.get(c) else { continue };
        let others = (p.rows() - nc) as f64;
        total += nc as f64 * (-logs.dot_excluding(q, c) - others * shannon_entropy(q));
    }
    total / (n * n)
}

/// Error rates and the cross-entropy bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// Error when the prediction is sampled from the output distribution.
    pub eps_expected: f64,
    /// Top-1 error.
    pub eps_top1: f64,
    /// Mean one-hot cross entropy, an upper bound on `eps_expected`.
    pub ce_bound: f64,
}

pub fn error_rates(p: &ProbMatrix, y: &LabelVector) -> Result<ErrorRates> {
    check_paired(p, y)?;
    let n = p.rows() as f64;
    let mut hit_mass = 0.0;
    let mut misses = 0usize;
    let mut ce = 0.0;
    for (row, &label) in p.iter_rows().zip(y.iter()) {
        hit_mass += row[label];
        if argmax(row) != label {
            misses += 1;
        }
        ce += cross_entropy_onehot(label, row)?;
    }
    Ok(ErrorRates {
        eps_expected: 1.0 - hit_mass / n,
        eps_top1: misses as f64 / n,
        ce_bound: ce / n,
    })
}

/// `mean_j D(p_j || q_{y_j})` for arbitrary per-class distributions `q`.
/// Bounded below by [`cmi`], with equality at the class centroids.
pub fn variational_cmi<Q: AsRef<[f64]>>(p: &ProbMatrix, y: &LabelVector, q: &[Q]) -> Result<f64> {
    check_paired(p, y)?;
    if q.len() != p.classes() {
        return Err(Error::dims(p.classes(), q.len()));
    }
    if let Some(bad) = q.iter().find(|d| d.as_ref().len() != p.classes()) {
        return Err(Error::dims(p.classes(), bad.as_ref().len()));
    }
    let total: f64 = p
        .iter_rows()
        .zip(y.iter())
        .map(|(row, &label)| kl_unchecked(row, q[label].as_ref()))
        .sum();
    Ok(total / p.rows() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(
            "pearson needs at least 2 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// All metrics for one labelled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cmi: f64,
    pub gamma: f64,
    /// `None` when `gamma == 0`.
    pub ncmi: Option<f64>,
    pub gamma_prime: f64,
    pub gamma_double_prime: f64,
    pub eps_expected: f64,
    pub eps_top1: f64,
    pub ce_bound: f64,
    pub n: usize,
    pub c: usize,
}

impl MetricsReport {
    pub fn compute(p: &ProbMatrix, y: &LabelVector) -> Result<Self> {
        check_paired(p, y)?;
        let set = CentroidSet::from_sample(p, y)?;
        let logs = ClassLogSums::new(p, y);
        let cmi = cmi_with(p, y, &set);
        let gamma = gamma_with(p, y, &logs);
        let rates = error_rates(p, y)?;
        Ok(MetricsReport {
            cmi,
            gamma,
            ncmi: ratio(cmi, gamma).ok(),
            gamma_prime: gamma_prime_with(p, y, &logs),
            gamma_double_prime: gamma_double_prime_with(p, &set, &logs),
            eps_expected: rates.eps_expected,
            eps_top1: rates.eps_top1,
            ce_bound: rates.ce_bound,
            n: p.rows(),
            c: p.classes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, kl_divergence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn sample(rng: &mut ChaCha8Rng, n: usize, c: usize, min: f64) -> (ProbMatrix, LabelVector) {
        let mut rows = Vec::new();
        for _ in 0..n {
            let w: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + min).collect();
            let s: f64 = w.iter().sum();
            rows.push(w.into_iter().map(|v| v / s).collect::<Vec<_>>());
        }
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        (
            ProbMatrix::from_rows(&rows).unwrap(),
            LabelVector::new(labels, c).unwrap(),
        )
    }

    fn naive_pairwise(
        p: &ProbMatrix,
        y: &LabelVector,
        term: impl Fn(&[f64], &[f64]) -> f64,
    ) -> f64 {
        let n = p.rows();
        let mut total = 0.0;
        for j in 0..n {
            for k in 0..n {
                if y[j] != y[k] {
                    total += term(p.row(j), p.row(k));
                }
            }
        }
        total / (n * n) as f64
    }

    #[test]
    fn centroid_examples() {
        let p = ProbMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 0], 2).unwrap();
        let set = CentroidSet::from_sample(&p, &y).unwrap();
        assert_eq!(set.get(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(set.counts(), &[2, 0]);
        assert!(set.get(1).is_none());
        assert!(matches!(centroids(&p, &y), Err(Error::EmptyClass(1))));

        let p = ProbMatrix::from_rows(&[[0.2, 0.8], [0.7, 0.3]]).unwrap();
        let y = LabelVector::new(vec![1, 0], 2).unwrap();
        let set = centroids(&p, &y).unwrap();
        assert_eq!(set.get(0).unwrap(), p.row(1));
        assert_eq!(set.get(1).unwrap(), p.row(0));
    }

    #[test]
    fn centroids_match_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, _) = sample(&mut rng, 8, 3, 0.0);
        let y = LabelVector::new(vec![0, 1, 0, 1, 1, 0, 0, 1], 3).unwrap();
        let set = CentroidSet::from_sample(&p, &y).unwrap();
        for c in 0..2 {
            let members: Vec<usize> = (0..8).filter(|&j| y[j] == c).collect();
            for i in 0..3 {
                let mean = members.iter().map(|&j| p.row(j)[i]).sum::<f64>() / members.len() as f64;
                assert!((set.get(c).unwrap()[i] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cmi_examples() {
        let p = ProbMatrix::from_rows(&[[0.3, 0.7], [0.3, 0.7], [0.9, 0.1]]).unwrap();
        let y = LabelVector::new(vec![0, 0, 1], 2).unwrap();
        assert_eq!(cmi(&p, &y).unwrap(), 0.0);

        let p = ProbMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 0], 2).unwrap();
        assert!((cmi(&p, &y).unwrap() - LN2).abs() < 1e-15);
    }

    #[test]
    fn gamma_examples() {
        let p = ProbMatrix::from_rows(&[[0.1, 0.9], [0.6, 0.4]]).unwrap();
        let same = LabelVector::new(vec![1, 1], 2).unwrap();
        assert_eq!(gamma(&p, &same).unwrap(), 0.0);
        assert_eq!(gamma_prime(&p, &same).unwrap(), 0.0);
        assert_eq!(gamma_double_prime(&p, &same).unwrap(), 0.0);
        assert!(matches!(ncmi(&p, &same), Err(Error::DegenerateSeparation)));

        let p = ProbMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        assert!((gamma(&p, &y).unwrap() - LN2 / 2.0).abs() < 1e-15);

        let p = ProbMatrix::from_rows(&[[0.5, 0.5]; 4]).unwrap();
        let y = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        assert!((gamma(&p, &y).unwrap() - LN2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_prime_hand_value() {
        let p = ProbMatrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap();
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        // D((1,0)||(.5,.5)) = ln 2; D((.5,.5)||(1,0)) = .5 ln .5 + .5 (ln .5 - ln 1e-12)
        let back = 0.5 * (0.5f64.ln() - 0.0) + 0.5 * (0.5f64.ln() - 1e-12f64.ln());
        let expected = 0.25 * (LN2 + back);
        assert!((gamma_prime(&p, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn singleton_classes_make_double_prime_equal_prime() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, _) = sample(&mut rng, 4, 4, 0.01);
        let y = LabelVector::new(vec![2, 0, 3, 1], 4).unwrap();
        let a = gamma_prime(&p, &y).unwrap();
        let b = gamma_double_prime(&p, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pairwise_forms_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..=20);
            let c = rng.random_range(2..=5);
            let (p, y) = sample(&mut rng, n, c, 0.0);
            let g = naive_pairwise(&p, &y, |a, b| cross_entropy(a, b).unwrap());
            let gp = naive_pairwise(&p, &y, |a, b| kl_divergence(a, b).unwrap());
            assert!((gamma(&p, &y).unwrap() - g).abs() < 1e-12);
            assert!((gamma_prime(&p, &y).unwrap() - gp).abs() < 1e-12);

            let set = CentroidSet::from_sample(&p, &y).unwrap();
            let mut gpp = 0.0;
            for j in 0..n {
                for k in 0..n {
                    if y[j] != y[k] {
                        gpp += kl_divergence(set.get(y[j]).unwrap(), p.row(k)).unwrap();
                    }
                }
            }
            gpp /= (n * n) as f64;
            assert!((gamma_double_prime(&p, &y).unwrap() - gpp).abs() < 1e-12);
        }
    }

    #[test]
    fn error_rate_examples() {
        let p = ProbMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let y = LabelVector::new(vec![0, 2], 3).unwrap();
        let r = error_rates(&p, &y).unwrap();
        assert_eq!((r.eps_expected, r.eps_top1, r.ce_bound), (0.0, 0.0, 0.0));

        let p = ProbMatrix::from_rows(&[[0.4, 0.6]]).unwrap();
        let y = LabelVector::new(vec![0], 2).unwrap();
        let r = error_rates(&p, &y).unwrap();
        assert!((r.eps_expected - 0.6).abs() < 1e-15);
        assert_eq!(r.eps_top1, 1.0);
        assert!((r.ce_bound - 0.916290731874155).abs() < 1e-12);

        // tie broken toward class 0
        let p = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let r = error_rates(&p, &LabelVector::new(vec![0], 2).unwrap()).unwrap();
        assert_eq!(r.eps_top1, 0.0);
    }

    #[test]
    fn variational_cmi_checks_shapes() {
        let p = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let y = LabelVector::new(vec![0], 2).unwrap();
        assert!(variational_cmi(&p, &y, &[vec![0.5, 0.5]]).is_err());
        assert!(variational_cmi(&p, &y, &[vec![0.5, 0.5], vec![1.0]]).is_err());
        let v = variational_cmi(&p, &y, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&xs, &[1.0; 4]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn uniform_rows_give_closed_form_gamma() {
        for c in 2..=6 {
            let p = ProbMatrix::from_rows(&vec![vec![1.0 / c as f64; c]; 3 * c]).unwrap();
            let y = LabelVector::new((0..3 * c).map(|j| j % c).collect(), c).unwrap();
            let expected = (1.0 - 1.0 / c as f64) * (c as f64).ln();
            assert!((gamma(&p, &y).unwrap() - expected).abs() < 1e-12);
            assert!(cmi(&p, &y).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn report_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (p, y) = sample(&mut rng, 24, 4, 0.0);
        let base = MetricsReport::compute(&p, &y).unwrap();
        let mut order: Vec<usize> = (0..24).collect();
        order.reverse();
        order.swap(3, 17);
        let shuffled = MetricsReport::compute(&p.select(&order), &y.select(&order)).unwrap();
        let pairs = [
            (base.cmi, shuffled.cmi),
            (base.gamma, shuffled.gamma),
            (base.ncmi.unwrap(), shuffled.ncmi.unwrap()),
            (base.gamma_prime, shuffled.gamma_prime),
            (base.gamma_double_prime, shuffled.gamma_double_prime),
            (base.eps_expected, shuffled.eps_expected),
            (base.eps_top1, shuffled.eps_top1),
            (base.ce_bound, shuffled.ce_bound),
        ];
        for (a, b) in pairs {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
