//! Bootstrap choice of the trimming proportion: for each candidate α the
//! trimmed fit is repeated on bootstrap resamples, and the α whose
//! coefficient estimates vary least is chosen.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{EmControls, LambdaSearch};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::metrics::aligned;
use crate::mixture::{Dataset, MixtureParams};
use crate::rng::{self, Rng};
use crate::trim::{fit_trimmed, fit_trimmed_from, LambdaTuning, TrimSpec, TrimmedFit};

/// Share of failed bootstrap fits above which an α is disqualified.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionCriterion {
    /// Largest diagonal entry over the component covariance matrices.
    #[default]
    MaxDiagonal,
    /// Largest eigenvalue over the component covariance matrices.
    MaxEigenvalue,
}

impl DispersionCriterion {
    pub fn name(self) -> &'static str {
        match self {
            DispersionCriterion::MaxDiagonal => "max_diagonal",
            DispersionCriterion::MaxEigenvalue => "max_eigenvalue",
        }
    }
}

impl FromStr for DispersionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_diagonal" | "diagonal" => Ok(DispersionCriterion::MaxDiagonal),
            "max_eigenvalue" | "eigenvalue" => Ok(DispersionCriterion::MaxEigenvalue),
            other => Err(Error::Config(format!("criterion: unknown value '{other}'"))),
        }
    }
}

impl fmt::Display for DispersionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// α values 0, step, 2·step, … up to and including `max` (within rounding).
pub fn alpha_grid(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(0.0..0.5).contains(&max) {
        return Err(Error::Config(format!("alpha grid: need step > 0 and 0 <= max < 0.5, got {step}, {max}")));
    }
    let count = (max / step + 1e-9).floor() as usize;
    // Rounded to 1e-12 so that 0.07 prints as 0.07.
    Ok((0..=count).map(|k| (k as f64 * step * 1e12).round() / 1e12).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSelectConfig {
    pub grid: Vec<f64>,
    pub n_boot: usize,
    pub criterion: DispersionCriterion,
    pub rng_seed: u64,
    /// Template for every trimmed fit; its α is overwritten per grid point.
    pub trim: TrimSpec,
    pub controls: EmControls,
    /// Random starts per bootstrap fit.
    pub boot_starts: usize,
    /// Also start each bootstrap fit from the full-data fit at the same α.
    /// This damps the bootstrap spread at large α and biases the choice
    /// upward, so it is off by default.
    pub warm_start: bool,
    /// Score the intercepts along with the slopes.
    pub include_intercepts: bool,
}

impl Default for AlphaSelectConfig {
    fn default() -> Self {
        Self {
            grid: alpha_grid(0.01, 0.2).expect("default grid is valid"),
            n_boot: 200,
            criterion: DispersionCriterion::MaxDiagonal,
            rng_seed: 0,
            trim: TrimSpec::default(),
            controls: EmControls::default(),
            boot_starts: 5,
            warm_start: false,
            include_intercepts: true,
        }
    }
}

impl AlphaSelectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        if self.grid.iter().any(|a| !(0.0..0.5).contains(a)) {
            return Err(Error::Config("alpha grid values must lie in [0, 0.5)".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("alpha grid must be strictly increasing".into()));
        }
        if self.boot_starts == 0 && !self.warm_start {
            return Err(Error::Config("boot_starts must be positive unless warm_start is set".into()));
        }
        if self.n_boot < 2 {
            return Err(Error::Config("n_boot must be at least 2".into()));
        }
        self.controls.validate()
    }
}

/// Bootstrap outcome at one α.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaScore {
    pub alpha: f64,
    /// `None` when the α is disqualified.
    pub score_diag: Option<f64>,
    pub score_eig: Option<f64>,
    pub failures: usize,
    pub successes: usize,
    pub disqualified: bool,
    /// Per-component sample covariance of the scored coefficients, row-major.
    pub covariances: Vec<Vec<f64>>,
    /// λ of the full-data fit, reused by every bootstrap fit.
    pub lambdas: Vec<f64>,
}

impl AlphaScore {
    pub fn score(&self, criterion: DispersionCriterion) -> Option<f64> {
        match criterion {
            DispersionCriterion::MaxDiagonal => self.score_diag,
            DispersionCriterion::MaxEigenvalue => self.score_eig,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSelectReport {
    pub alpha: f64,
    pub criterion: DispersionCriterion,
    pub scores: Vec<AlphaScore>,
}

impl AlphaSelectReport {
    /// Writes `alpha,score_diag,score_eig,failures,disqualified`; disqualified
    /// scores are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "score_diag", "score_eig", "failures", "disqualified"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for s in &self.scores {
            w.write_record([
                s.alpha.to_string(),
                opt(s.score_diag),
                opt(s.score_eig),
                s.failures.to_string(),
                s.disqualified.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// n rows drawn uniformly with replacement. Truth and contamination flags
/// are dropped.
pub fn bootstrap_resample(data: &Dataset, rng: &mut Rng) -> Dataset {
    let n = data.len();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select_rows(&rows)
}

/// Sample covariance (divisor N−1) of equal-length vectors, row-major.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain("covariance needs at least two samples"));
    }
    let k = samples[0].len();
    if samples.iter().any(|s| s.len() != k) {
        return Err(Error::Dimension("samples differ in length".into()));
    }
    let mean: Vec<f64> = (0..k).map(|a| samples.iter().map(|s| s[a]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; k * k];
    for s in samples {
        for a in 0..k {
            let da = s[a] - mean[a];
            for b in a..k {
                cov[a * k + b] += da * (s[b] - mean[b]);
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = cov[a * k + b] / (n - 1) as f64;
            cov[a * k + b] = v;
            cov[b * k + a] = v;
        }
    }
    Ok(cov)
}

fn dim_of(cov: &[f64]) -> usize {
    (cov.len() as f64).sqrt().round() as usize
}

/// Largest diagonal entry over the matrices.
pub fn max_diagonal(covs: &[Vec<f64>]) -> f64 {
    covs.iter()
        .flat_map(|c| {
            let k = dim_of(c);
            (0..k).map(move |a| c[a * k + a])
        })
        .fold(0.0, f64::max)
}

/// Largest eigenvalue over the matrices.
pub fn max_eigenvalue(covs: &[Vec<f64>]) -> f64 {
    covs.iter()
        .flat_map(|c| symmetric_eigenvalues(c, dim_of(c)))
        .fold(0.0, f64::max)
}

/// Dispersion of the aligned bootstrap estimates at one α.
fn score_alpha(
    alpha: f64,
    estimates: &[MixtureParams],
    failures: usize,
    n_boot: usize,
    include_intercepts: bool,
    lambdas: Vec<f64>,
) -> Result<AlphaScore> {
    let disqualified = failures as f64 > MAX_FAILURE_SHARE * n_boot as f64 || estimates.len() < 2;
    let mut score = AlphaScore {
        alpha,
        score_diag: None,
        score_eig: None,
        failures,
        successes: estimates.len(),
        disqualified,
        covariances: Vec::new(),
        lambdas,
    };
    if disqualified {
        return Ok(score);
    }
    let first = usize::from(!include_intercepts);
    let m = estimates[0].components();
    for j in 0..m {
        let samples: Vec<Vec<f64>> = estimates.iter().map(|t| t.coefficients()[j][first..].to_vec()).collect();
        score.covariances.push(sample_covariance(&samples)?);
    }
    score.score_diag = Some(max_diagonal(&score.covariances));
    score.score_eig = Some(max_eigenvalue(&score.covariances));
    Ok(score)
}

/// Minimizing α under `criterion`; ties go to the smaller α.
pub fn choose_alpha(scores: &[AlphaScore], criterion: DispersionCriterion) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for s in scores {
        if let Some(v) = s.score(criterion) {
            if best.map_or(true, |(b, _)| v < b) {
                best = Some((v, s.alpha));
            }
        }
    }
    best.map(|(_, a)| a)
        .ok_or_else(|| Error::Failures("every alpha on the grid was disqualified".into()))
}

/// Chooses α by bootstrap dispersion of the trimmed estimates.
///
/// At each α the full-data trimmed fit fixes λ and serves as the alignment
/// reference and warm start for the bootstrap fits. Resample b is the same
/// draw at every α.
pub fn select_alpha(data: &Dataset, m: usize, search: &LambdaSearch, cfg: &AlphaSelectConfig) -> Result<AlphaSelectReport> {
    cfg.validate()?;
    let references: Vec<Result<TrimmedFit>> = cfg
        .grid
        .par_iter()
        .map(|&alpha| {
            let trim = TrimSpec { alpha, ..cfg.trim.clone() };
            fit_trimmed(data, m, search, &trim, &cfg.controls)
        })
        .collect();

    let resamples: Vec<Dataset> = (0..cfg.n_boot)
        .map(|b| bootstrap_resample(data, &mut rng::stream(cfg.rng_seed, &[b as u64])))
        .collect();

    let mut scores = Vec::with_capacity(cfg.grid.len());
    for (&alpha, reference) in cfg.grid.iter().zip(references) {
        let reference = match reference {
            Ok(r) => r,
            Err(e) if e.is_numerical() => {
                scores.push(score_alpha(alpha, &[], cfg.n_boot, cfg.n_boot, cfg.include_intercepts, Vec::new())?);
                continue;
            }
            Err(e) => return Err(e),
        };
        let lambdas: Vec<f64> = reference.specs.iter().map(|s| s.lambda).collect();
        let fixed = LambdaSearch {
            bic_likelihood: search.bic_likelihood,
            ..LambdaSearch::pinned(&reference.specs)?
        };
        let trim = TrimSpec {
            alpha,
            lambda_tuning: LambdaTuning::Once,
            ..cfg.trim.clone()
        };
        let outcomes: Vec<Result<MixtureParams>> = resamples
            .par_iter()
            .enumerate()
            .map(|(b, boot)| {
                let controls = cfg
                    .controls
                    .with_starts(cfg.boot_starts)
                    .with_seed(rng::derive_seed(cfg.rng_seed, &[b as u64, 1]));
                let init = cfg.warm_start.then_some(&reference.theta);
                let fit = fit_trimmed_from(boot, m, &fixed, &trim, &controls, init)?;
                aligned(&fit.theta, &reference.theta)
            })
            .collect();
        let mut estimates = Vec::with_capacity(cfg.n_boot);
        let mut failures = 0;
        for o in outcomes {
            match o {
                Ok(t) => estimates.push(t),
                Err(e) if e.is_numerical() || matches!(e, Error::Domain(_) | Error::TooFewRows { .. }) => {
                    failures += 1
                }
                Err(e) => return Err(e),
            }
        }
        scores.push(score_alpha(alpha, &estimates, failures, cfg.n_boot, cfg.include_intercepts, lambdas)?);
    }
    let alpha = choose_alpha(&scores, cfg.criterion)?;
    Ok(AlphaSelectReport {
        alpha,
        criterion: cfg.criterion,
        scores,
    })
}
