//! Scoring of fitted mixtures against a reference: label alignment,
//! zero-pattern counts, model error and replication aggregation.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureParams;

/// Magnitude at or below which an estimated slope counts as zero.
pub const ZERO_COUNT_TOL: f64 = 1e-4;

/// Permutation `perm` such that `estimate.permuted(&perm)` lines up with
/// `reference`, minimizing Σ_j ‖β̂_perm(j) − β_j‖². Ties keep the
/// lexicographically first permutation, which is the identity when it ties.
pub fn align_components(estimate: &MixtureParams, reference: &MixtureParams) -> Result<Vec<usize>> {
    let m = estimate.components();
    if m != reference.components() || estimate.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "estimate is {}×{}, reference {}×{}",
            m,
            estimate.dim(),
            reference.components(),
            reference.dim()
        )));
    }
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(j, &k)| {
                estimate.coefficients()[k]
                    .iter()
                    .zip(&reference.coefficients()[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    let mut best = (0..m).collect::<Vec<_>>();
    let mut best_cost = cost(&best);
    for perm in (0..m).permutations(m) {
        let c = cost(&perm);
        if c < best_cost {
            best_cost = c;
            best = perm;
        }
    }
    Ok(best)
}

/// `estimate` relabeled to match `reference`.
pub fn aligned(estimate: &MixtureParams, reference: &MixtureParams) -> Result<MixtureParams> {
    Ok(estimate.permuted(&align_components(estimate, reference)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroPatternScore {
    pub correct_zeros: Vec<usize>,
    pub incorrect_zeros: Vec<usize>,
    pub exact_model: Vec<bool>,
}

/// Counts slopes declared zero (|β̂| ≤ tol) against the true pattern, per
/// component. Intercepts are not counted.
pub fn count_zero_pattern(beta_hat: &[Vec<f64>], beta_true: &[Vec<f64>], tol: f64) -> Result<ZeroPatternScore> {
    if beta_hat.len() != beta_true.len() || beta_hat.iter().zip(beta_true).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("estimated and true coefficients differ in shape".into()));
    }
    let mut score = ZeroPatternScore {
        correct_zeros: Vec::new(),
        incorrect_zeros: Vec::new(),
        exact_model: Vec::new(),
    };
    for (hat, truth) in beta_hat.iter().zip(beta_true) {
        let mut correct = 0;
        let mut incorrect = 0;
        for (h, t) in hat[1..].iter().zip(&truth[1..]) {
            if h.abs() <= tol {
                if *t == 0.0 {
                    correct += 1;
                } else {
                    incorrect += 1;
                }
            }
        }
        let true_zeros = truth[1..].iter().filter(|&&t| t == 0.0).count();
        score.correct_zeros.push(correct);
        score.incorrect_zeros.push(incorrect);
        score.exact_model.push(correct == true_zeros && incorrect == 0);
    }
    Ok(score)
}

/// (β̂ − β₀)ᵀ E(XXᵀ) (β̂ − β₀) for one component; `exx` is row-major.
pub fn model_error(beta_hat: &[f64], beta_true: &[f64], exx: &[f64]) -> Result<f64> {
    let c = beta_hat.len();
    if beta_true.len() != c || exx.len() != c * c {
        return Err(Error::Dimension("model_error: inconsistent sizes".into()));
    }
    for a in 0..c {
        for b in 0..a {
            if (exx[a * c + b] - exx[b * c + a]).abs() > 1e-10 {
                return Err(Error::domain("second-moment matrix is not symmetric"));
            }
        }
    }
    let d: Vec<f64> = beta_hat.iter().zip(beta_true).map(|(h, t)| h - t).collect();
    let q: f64 = (0..c)
        .map(|a| d[a] * (0..c).map(|b| exx[a * c + b] * d[b]).sum::<f64>())
        .sum();
    Ok(q.max(0.0))
}

/// One replication's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationScore {
    pub zeros: ZeroPatternScore,
    pub model_errors: Vec<f64>,
}

/// Scores an estimate against the truth after alignment.
pub fn score_replication(estimate: &MixtureParams, truth: &MixtureParams, exx: &[f64]) -> Result<ReplicationScore> {
    let est = aligned(estimate, truth)?;
    let zeros = count_zero_pattern(est.coefficients(), truth.coefficients(), ZERO_COUNT_TOL)?;
    let model_errors = est
        .coefficients()
        .iter()
        .zip(truth.coefficients())
        .map(|(h, t)| model_error(h, t, exx))
        .collect::<Result<_>>()?;
    Ok(ReplicationScore { zeros, model_errors })
}

/// Per-component aggregates over successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_correct: Vec<f64>,
    pub mean_incorrect: Vec<f64>,
    pub median_model_error: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub replications: usize,
    pub failures: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Means of zero counts, medians of model errors, and the exact-model rate.
pub fn aggregate_replications(scores: &[ReplicationScore], failures: usize) -> Result<Aggregate> {
    let first = scores
        .first()
        .ok_or_else(|| Error::domain("no successful replications to aggregate"))?;
    let m = first.model_errors.len();
    let r = scores.len() as f64;
    let mean = |f: &dyn Fn(&ReplicationScore) -> f64| scores.iter().map(f).sum::<f64>() / r;
    Ok(Aggregate {
        mean_correct: (0..m).map(|j| mean(&|s| s.zeros.correct_zeros[j] as f64)).collect(),
        mean_incorrect: (0..m).map(|j| mean(&|s| s.zeros.incorrect_zeros[j] as f64)).collect(),
        median_model_error: (0..m)
            .map(|j| median(&scores.iter().map(|s| s.model_errors[j]).collect::<Vec<_>>()))
            .collect(),
        accuracy: (0..m)
            .map(|j| mean(&|s| f64::from(u8::from(s.zeros.exact_model[j]))))
            .collect(),
        replications: scores.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1() -> MixtureParams {
        MixtureParams::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0, 0.0, 3.0, 0.0], vec![-1.0, 2.0, 0.0, 0.0, 3.0]],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn alignment_identity_and_swap() {
        let t = model1();
        assert_eq!(align_components(&t, &t).unwrap(), vec![0, 1]);
        let s = t.permuted(&[1, 0]);
        assert_eq!(align_components(&s, &t).unwrap(), vec![1, 0]);
        assert_eq!(aligned(&s, &t).unwrap(), t);
    }

    #[test]
    fn alignment_dimension_mismatch() {
        let one = MixtureParams::new(vec![1.0], vec![vec![0.0; 5]], vec![1.0]).unwrap();
        assert!(align_components(&one, &model1()).is_err());
    }

    #[test]
    fn zero_pattern_examples() {
        let t = model1();
        let s = count_zero_pattern(&t.coefficients()[..1], &t.coefficients()[..1], ZERO_COUNT_TOL).unwrap();
        assert_eq!((s.correct_zeros[0], s.incorrect_zeros[0], s.exact_model[0]), (3, 0, true));

        let zeros = vec![vec![0.0; 5]];
        let s = count_zero_pattern(&zeros, &t.coefficients()[..1], ZERO_COUNT_TOL).unwrap();
        assert_eq!((s.correct_zeros[0], s.incorrect_zeros[0], s.exact_model[0]), (3, 1, false));

        let near = vec![vec![1.0, 0.002, 0.0, 3.0, 0.0]];
        let s = count_zero_pattern(&near, &t.coefficients()[..1], 1e-3).unwrap();
        assert_eq!((s.correct_zeros[0], s.exact_model[0]), (2, false));
    }

    #[test]
    fn model_error_examples() {
        let b = [1.0, 2.0, -1.0];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(model_error(&b, &b, &eye).unwrap(), 0.0);
        let e = model_error(&[1.5, 2.0, 0.0], &b, &eye).unwrap();
        assert!((e - 1.25).abs() < 1e-15);
        let skew = [1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(model_error(&b, &b, &skew).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let rep = |me: f64, exact: bool| ReplicationScore {
            zeros: ZeroPatternScore {
                correct_zeros: vec![3],
                incorrect_zeros: vec![0],
                exact_model: vec![exact],
            },
            model_errors: vec![me],
        };
        let one = aggregate_replications(&[rep(0.1, true)], 0).unwrap();
        assert_eq!(one.mean_correct, vec![3.0]);
        assert_eq!(one.median_model_error, vec![0.1]);
        assert_eq!(one.accuracy, vec![1.0]);
        let two = aggregate_replications(&[rep(0.1, true), rep(0.3, false)], 1).unwrap();
        assert!((two.median_model_error[0] - 0.2).abs() < 1e-15);
        assert_eq!(two.accuracy, vec![0.5]);
        assert_eq!(two.failures, 1);
        assert!(aggregate_replications(&[], 0).is_err());
    }
}
