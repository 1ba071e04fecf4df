//! Mixture-of-regressions domain types and the pure likelihood functions.
//!
//! All densities are evaluated in log space; [`mixture_density`] is the
//! exponential of a log-sum-exp and may underflow to zero for rows far from
//! every component, which is why trimming works on [`log_mixture_density`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;

/// Smallest mixing proportion a fitted component may carry.
pub const PROPORTION_FLOOR: f64 = 1e-6;

/// Coefficients with magnitude below this are declared exactly zero and
/// removed from the local quadratic approximation.
pub const ZERO_THRESHOLD: f64 = 1e-6;

/// Variance floor as a multiple of the sample variance of the response.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Full parameter vector of an m-component mixture of linear regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    proportions: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl MixtureParams {
    /// Builds a parameter vector. Proportions must be positive and sum to one
    /// within 1e-9; they are renormalized exactly.
    pub fn new(proportions: Vec<f64>, coefficients: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let m = proportions.len();
        if m == 0 {
            return Err(Error::domain("mixture needs at least one component"));
        }
        if coefficients.len() != m || variances.len() != m {
            return Err(Error::Dimension(format!(
                "{m} proportions, {} coefficient vectors, {} variances",
                coefficients.len(),
                variances.len()
            )));
        }
        let dim = coefficients[0].len();
        if dim == 0 || coefficients.iter().any(|b| b.len() != dim) {
            return Err(Error::Dimension("coefficient vectors must share a nonzero length".into()));
        }
        if coefficients.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::domain("coefficients must be finite"));
        }
        if proportions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::domain(format!("proportions must lie in (0, 1]: {proportions:?}")));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("proportions sum to {total}, not 1")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("variances must be positive: {variances:?}")));
        }
        let proportions = proportions.iter().map(|p| p / total).collect();
        Ok(Self {
            proportions,
            coefficients,
            variances,
        })
    }

    /// Assembles fitted parameters without revalidation. Callers guarantee the
    /// invariants (floored, normalized proportions and floored variances).
    pub(crate) fn from_parts(proportions: Vec<f64>, coefficients: Vec<Vec<f64>>, variances: Vec<f64>) -> Self {
        debug_assert_eq!(proportions.len(), coefficients.len());
        debug_assert_eq!(proportions.len(), variances.len());
        Self {
            proportions,
            coefficients,
            variances,
        }
    }

    /// Number of components m.
    pub fn components(&self) -> usize {
        self.proportions.len()
    }

    /// Length p+1 of each coefficient vector (intercept first).
    pub fn dim(&self) -> usize {
        self.coefficients[0].len()
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Reorders components so that component `j` of the result is component
    /// `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.components());
        Self {
            proportions: perm.iter().map(|&k| self.proportions[k]).collect(),
            coefficients: perm.iter().map(|&k| self.coefficients[k].clone()).collect(),
            variances: perm.iter().map(|&k| self.variances[k]).collect(),
        }
    }

    /// Concatenation (π, β₁, …, β_m, σ²) used for parameter-change norms.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.proportions.clone();
        for b in &self.coefficients {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.variances);
        out
    }

    /// Per-component masks of nonzero slopes (intercepts excluded).
    pub fn active_sets(&self) -> Vec<Vec<bool>> {
        self.coefficients
            .iter()
            .map(|b| b[1..].iter().map(|&v| v != 0.0).collect())
            .collect()
    }

    /// Mixture mean prediction Σ_j π_j xᵀβ_j.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.proportions
            .iter()
            .zip(&self.coefficients)
            .map(|(p, b)| p * dot(x, b))
            .sum()
    }

    /// Prediction from the a-priori most probable component (largest π_j).
    pub fn predict_major(&self, x: &[f64]) -> f64 {
        let j = argmax(&self.proportions);
        dot(x, &self.coefficients[j])
    }
}

/// Annotations attached to simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub params: MixtureParams,
    /// Population second-moment matrix E(XXᵀ), row-major (p+1)×(p+1).
    pub exx: Vec<f64>,
    /// Generating component of each row.
    pub labels: Vec<usize>,
}

/// Response vector and design matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    cols: usize,
    contaminated: Vec<bool>,
    truth: Option<Truth>,
}

impl Dataset {
    /// Builds a dataset from a row-major design whose first column must be 1.
    pub fn new(y: Vec<f64>, design: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Dimension("design needs at least the intercept column".into()));
        }
        if design.len() != y.len() * cols {
            return Err(Error::Dimension(format!(
                "design has {} entries, expected {}×{}",
                design.len(),
                y.len(),
                cols
            )));
        }
        if let Some(i) = design.chunks(cols).position(|row| row[0] != 1.0) {
            return Err(Error::domain(format!("design row {i} does not start with 1")));
        }
        if y.iter().chain(&design).any(|v| !v.is_finite()) {
            return Err(Error::domain("data contain non-finite values"));
        }
        let n = y.len();
        Ok(Self {
            y,
            x: design,
            cols,
            contaminated: vec![false; n],
            truth: None,
        })
    }

    /// Builds a dataset from covariate rows, prepending the intercept.
    pub fn from_covariates(y: Vec<f64>, covariates: &[Vec<f64>]) -> Result<Self> {
        if covariates.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} responses but {} covariate rows",
                y.len(),
                covariates.len()
            )));
        }
        let p = covariates.first().map_or(0, Vec::len);
        if covariates.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("covariate rows differ in length".into()));
        }
        let mut design = Vec::with_capacity(y.len() * (p + 1));
        for row in covariates {
            design.push(1.0);
            design.extend_from_slice(row);
        }
        Self::new(y, design, p + 1)
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        if truth.params.dim() != self.cols || truth.exx.len() != self.cols * self.cols {
            return Err(Error::Dimension("truth does not match the design width".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of design columns p+1.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }

    pub fn design(&self) -> &[f64] {
        &self.x
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    pub fn contaminated(&self) -> &[bool] {
        &self.contaminated
    }

    pub(crate) fn responses_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    pub(crate) fn contaminated_mut(&mut self) -> &mut [bool] {
        &mut self.contaminated
    }

    /// Copies the given rows (in order, repeats allowed) into a new dataset
    /// without truth annotations.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut y = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            y.push(self.y[i]);
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            y,
            x,
            cols: self.cols,
            contaminated: vec![false; rows.len()],
            truth: None,
        }
    }

    /// Sample variance of y (denominator n).
    pub fn response_variance(&self) -> f64 {
        let n = self.y.len() as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// σ²_floor for fits on this dataset.
    pub fn variance_floor(&self) -> f64 {
        let v = self.response_variance();
        VARIANCE_FLOOR_FACTOR * if v > 0.0 { v } else { 1.0 }
    }

    /// Sample second-moment matrix XᵀX/n, row-major.
    pub fn sample_second_moment(&self) -> Vec<f64> {
        let c = self.cols;
        let mut out = vec![0.0; c * c];
        for i in 0..self.len() {
            let r = self.row(i);
            for a in 0..c {
                for b in 0..c {
                    out[a * c + b] += r[a] * r[b];
                }
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// All row indices 0..n.
    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Posterior component memberships r_ij for a set of rows (row-major n×m).
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    values: Vec<f64>,
    m: usize,
}

impl Responsibilities {
    /// Validates that every row lies in [0,1] and sums to one within 1e-10.
    pub fn new(values: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || values.len() % m != 0 {
            return Err(Error::Dimension("responsibility matrix is not n×m".into()));
        }
        for (i, row) in values.chunks(m).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (s - 1.0).abs() > 1e-10 {
                return Err(Error::domain(format!("responsibility row {i} is not a probability vector")));
            }
        }
        Ok(Self { values, m })
    }

    pub(crate) fn from_raw(values: Vec<f64>, m: usize) -> Self {
        Self { values, m }
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    /// Column j as a vector over rows.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.m).copied().collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// log φ(y; xᵀβ, σ²) without argument checks.
#[inline]
pub(crate) fn log_normal(y: f64, mean: f64, sigma2: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|a| (a - mx).exp()).sum::<f64>().ln()
}

/// Normal density φ(y; xᵀβ, σ²).
pub fn component_density(y: f64, x: &[f64], beta: &[f64], sigma2: f64) -> Result<f64> {
    Ok(log_component_density(y, x, beta, sigma2)?.exp())
}

pub fn log_component_density(y: f64, x: &[f64], beta: &[f64], sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::domain(format!("variance must be positive, got {sigma2}")));
    }
    if x.len() != beta.len() {
        return Err(Error::Dimension(format!("x has {} entries, beta {}", x.len(), beta.len())));
    }
    Ok(log_normal(y, dot(x, beta), sigma2))
}

/// Per-component terms log π_j + log φ_j at one row, written into `out`.
pub(crate) fn log_joint_terms(y: f64, x: &[f64], theta: &MixtureParams, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = theta.proportions[j].ln() + log_normal(y, dot(x, &theta.coefficients[j]), theta.variances[j]);
    }
}

/// log f(y | x, θ) via log-sum-exp.
pub fn log_mixture_density(y: f64, x: &[f64], theta: &MixtureParams) -> f64 {
    let mut buf = vec![0.0; theta.components()];
    log_joint_terms(y, x, theta, &mut buf);
    log_sum_exp(&buf)
}

/// f(y | x, θ) = Σ_j π_j φ(y; xᵀβ_j, σ_j²).
pub fn mixture_density(y: f64, x: &[f64], theta: &MixtureParams) -> f64 {
    log_mixture_density(y, x, theta).exp()
}

/// log f for every row of the dataset.
pub fn row_log_densities(data: &Dataset, theta: &MixtureParams) -> Vec<f64> {
    let mut buf = vec![0.0; theta.components()];
    (0..data.len())
        .map(|i| {
            log_joint_terms(data.y[i], data.row(i), theta, &mut buf);
            log_sum_exp(&buf)
        })
        .collect()
}

fn check_compatible(data: &Dataset, theta: &MixtureParams) -> Result<()> {
    if theta.dim() != data.cols {
        return Err(Error::Dimension(format!(
            "parameters have {} coefficients, design has {} columns",
            theta.dim(),
            data.cols
        )));
    }
    Ok(())
}

fn check_subset(data: &Dataset, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::domain("subset is empty"));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= data.len()) {
        return Err(Error::domain(format!("row index {i} out of range for {} rows", data.len())));
    }
    Ok(())
}

/// ℓ_n(θ) = Σ_{i∈subset} log f(y_i | x_i, θ); `None` means all rows.
pub fn log_likelihood(data: &Dataset, theta: &MixtureParams, subset: Option<&[usize]>) -> Result<f64> {
    check_compatible(data, theta)?;
    let mut buf = vec![0.0; theta.components()];
    let mut term = |i: usize| {
        log_joint_terms(data.y[i], data.row(i), theta, &mut buf);
        log_sum_exp(&buf)
    };
    match subset {
        None => {
            if data.is_empty() {
                return Err(Error::domain("dataset is empty"));
            }
            Ok((0..data.len()).map(&mut term).sum())
        }
        Some(s) => {
            check_subset(data, s)?;
            Ok(s.iter().map(|&i| term(i)).sum())
        }
    }
}

/// Total penalty Σ_j Σ_{k≥1} p_{nj}(β_jk), intercepts excluded.
pub fn total_penalty(theta: &MixtureParams, specs: &[PenaltySpec], penalty_n: usize) -> Result<f64> {
    if specs.len() != theta.components() {
        return Err(Error::Dimension(format!(
            "{} penalty specs for {} components",
            specs.len(),
            theta.components()
        )));
    }
    Ok(theta
        .coefficients
        .iter()
        .zip(specs)
        .map(|(b, s)| b[1..].iter().map(|&v| s.value(v, penalty_n)).sum::<f64>())
        .sum())
}

/// ℓ₁(θ) = ℓ_n(θ) − p_n(θ) over `subset`, with the penalty scaled by the
/// subset size.
pub fn penalized_objective(
    data: &Dataset,
    theta: &MixtureParams,
    specs: &[PenaltySpec],
    subset: Option<&[usize]>,
) -> Result<f64> {
    let n = subset.map_or(data.len(), <[usize]>::len);
    penalized_objective_scaled(data, theta, specs, subset, n)
}

/// As [`penalized_objective`] but with an explicit √n scaling count.
pub fn penalized_objective_scaled(
    data: &Dataset,
    theta: &MixtureParams,
    specs: &[PenaltySpec],
    subset: Option<&[usize]>,
    penalty_n: usize,
) -> Result<f64> {
    Ok(log_likelihood(data, theta, subset)? - total_penalty(theta, specs, penalty_n)?)
}
