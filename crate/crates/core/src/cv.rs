//! Cross-validated prediction error for the penalized mixture estimators:
//! k-fold and Monte Carlo (repeated random hold-out) splits.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::alpha::{select_alpha, AlphaSelectConfig};
use crate::em::{select_lambda, EmControls, LambdaSearch, DEFAULT_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::mixture::{Dataset, MixtureParams};
use crate::penalty::PenaltyFamily;
use crate::rng::{self, Rng};
use crate::trim::{fit_trimmed, TrimSpec};

/// The six estimators compared in the study: mixture (m) or trimmed
/// mixture (mt) with Lasso, SCAD or MCP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ml,
    Ms,
    Mmcp,
    Mtl,
    Mts,
    Mtmcp,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ml, Method::Ms, Method::Mmcp, Method::Mtl, Method::Mts, Method::Mtmcp];

    pub fn new(family: PenaltyFamily, trimmed: bool) -> Self {
        match (family, trimmed) {
            (PenaltyFamily::Lasso, false) => Method::Ml,
            (PenaltyFamily::Scad, false) => Method::Ms,
            (PenaltyFamily::Mcp, false) => Method::Mmcp,
            (PenaltyFamily::Lasso, true) => Method::Mtl,
            (PenaltyFamily::Scad, true) => Method::Mts,
            (PenaltyFamily::Mcp, true) => Method::Mtmcp,
        }
    }

    pub fn family(self) -> PenaltyFamily {
        match self {
            Method::Ml | Method::Mtl => PenaltyFamily::Lasso,
            Method::Ms | Method::Mts => PenaltyFamily::Scad,
            Method::Mmcp | Method::Mtmcp => PenaltyFamily::Mcp,
        }
    }

    pub fn trimmed(self) -> bool {
        matches!(self, Method::Mtl | Method::Mts | Method::Mtmcp)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Ms => "ms",
            Method::Mmcp => "mmcp",
            Method::Mtl => "mtl",
            Method::Mts => "mts",
            Method::Mtmcp => "mtmcp",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("method: unknown tag '{s}' (expected ml, ms, mmcp, mtl, mts, mtmcp)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Point prediction from a fitted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionRule {
    /// Σ_j π_j xᵀβ_j.
    #[default]
    Mean,
    /// xᵀβ_j of the component with the largest π_j.
    Major,
}

impl FromStr for PredictionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PredictionRule::Mean),
            "major" => Ok(PredictionRule::Major),
            other => Err(Error::Config(format!("prediction: unknown rule '{other}'"))),
        }
    }
}

/// Everything a method needs besides its tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub m: usize,
    pub lambda_grid: Vec<f64>,
    /// Concavity constant; the family default when unset.
    pub a: Option<f64>,
    pub controls: EmControls,
    /// Used by the trimmed methods.
    pub trim: TrimSpec,
    pub prediction: PredictionRule,
    /// Choose α by bootstrap on each training split instead of using
    /// `trim.alpha` throughout.
    pub alpha_per_split: Option<AlphaSelectConfig>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            m: 2,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            a: None,
            controls: EmControls::default(),
            trim: TrimSpec::default(),
            prediction: PredictionRule::Mean,
            alpha_per_split: None,
        }
    }
}

impl FitSettings {
    pub fn search(&self, family: PenaltyFamily) -> LambdaSearch {
        LambdaSearch {
            a: self.a,
            ..LambdaSearch::new(family, self.lambda_grid.clone())
        }
    }
}

/// Fits `method` on all rows of `data`.
pub fn fit_method(data: &Dataset, method: Method, settings: &FitSettings) -> Result<MixtureParams> {
    let search = settings.search(method.family());
    if !method.trimmed() {
        let sel = select_lambda(data, &data.all_rows(), settings.m, &search, &settings.controls, None)?;
        return Ok(sel.fit.theta);
    }
    let mut trim = settings.trim.clone();
    if let Some(cfg) = &settings.alpha_per_split {
        let cfg = AlphaSelectConfig {
            controls: settings.controls.clone(),
            trim: trim.clone(),
            ..cfg.clone()
        };
        trim.alpha = select_alpha(data, settings.m, &search, &cfg)?.alpha;
    }
    Ok(fit_trimmed(data, settings.m, &search, &trim, &settings.controls)?.theta)
}

pub fn predict(theta: &MixtureParams, x: &[f64], rule: PredictionRule) -> f64 {
    match rule {
        PredictionRule::Mean => theta.predict_mean(x),
        PredictionRule::Major => theta.predict_major(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub mspe: f64,
    pub splits: usize,
    pub failed_splits: usize,
}

/// Seeded partition of 0..n into k folds whose sizes differ by at most one.
pub fn kfold_partition(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::domain(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// `reps` seeded hold-out sets of size d.
pub fn mccv_splits(n: usize, d: usize, reps: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if d < 1 || d >= n || reps == 0 {
        return Err(Error::domain(format!("MCCV needs 1 <= d < n and reps >= 1, got d={d}, n={n}, reps={reps}")));
    }
    Ok((0..reps)
        .map(|_| {
            let mut h = index::sample(rng, n, d).into_vec();
            h.sort_unstable();
            h
        })
        .collect())
}

/// Squared prediction errors on each hold-out set, or `None` where the fit
/// on the complement failed numerically.
pub fn holdout_errors(
    data: &Dataset,
    method: Method,
    settings: &FitSettings,
    holdouts: &[Vec<usize>],
) -> Result<Vec<Option<Vec<f64>>>> {
    let n = data.len();
    holdouts
        .iter()
        .enumerate()
        .map(|(s, held)| {
            let mut out = vec![false; n];
            for &i in held {
                if i >= n {
                    return Err(Error::domain(format!("hold-out row {i} out of range")));
                }
                out[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !out[i]).collect();
            let controls = settings
                .controls
                .with_seed(rng::derive_seed(settings.controls.rng_seed, &[s as u64]));
            let split_settings = FitSettings {
                controls,
                ..settings.clone()
            };
            match fit_method(&data.select_rows(&train), method, &split_settings) {
                Ok(theta) => Ok(Some(
                    held.iter()
                        .map(|&i| (data.responses()[i] - predict(&theta, data.row(i), settings.prediction)).powi(2))
                        .collect(),
                )),
                Err(e) if e.is_numerical() || matches!(e, Error::TooFewRows { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn check_failures(errors: &[Option<Vec<f64>>]) -> Result<usize> {
    let failed = errors.iter().filter(|e| e.is_none()).count();
    if 2 * failed > errors.len() {
        return Err(Error::Failures(format!("{failed} of {} splits failed to fit", errors.len())));
    }
    Ok(failed)
}

/// Mean squared prediction error over all held-out rows of the folds that
/// fitted.
pub fn cv_error_on_folds(data: &Dataset, method: Method, settings: &FitSettings, folds: &[Vec<usize>]) -> Result<CvOutcome> {
    let errors = holdout_errors(data, method, settings, folds)?;
    let failed_splits = check_failures(&errors)?;
    let all: Vec<f64> = errors.into_iter().flatten().flatten().collect();
    Ok(CvOutcome {
        mspe: all.iter().sum::<f64>() / all.len() as f64,
        splits: folds.len(),
        failed_splits,
    })
}

/// Mean over splits of each split's MSPE.
pub fn cv_error_on_splits(data: &Dataset, method: Method, settings: &FitSettings, splits: &[Vec<usize>]) -> Result<CvOutcome> {
    let errors = holdout_errors(data, method, settings, splits)?;
    let failed_splits = check_failures(&errors)?;
    let per_split: Vec<f64> = errors
        .into_iter()
        .flatten()
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect();
    Ok(CvOutcome {
        mspe: per_split.iter().sum::<f64>() / per_split.len() as f64,
        splits: splits.len(),
        failed_splits,
    })
}

/// k-fold cross-validated MSPE.
pub fn kfold_cv_error(data: &Dataset, method: Method, settings: &FitSettings, k: usize, rng: &mut Rng) -> Result<CvOutcome> {
    let folds = kfold_partition(data.len(), k, rng)?;
    cv_error_on_folds(data, method, settings, &folds)
}

/// Monte Carlo cross-validated MSPE with hold-out size d.
pub fn mccv_error(
    data: &Dataset,
    method: Method,
    settings: &FitSettings,
    d: usize,
    reps: usize,
    rng: &mut Rng,
) -> Result<CvOutcome> {
    let splits = mccv_splits(data.len(), d, reps, rng)?;
    cv_error_on_splits(data, method, settings, &splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
            assert_eq!(Method::new(m.family(), m.trimmed()), m);
        }
        assert!("mx".parse::<Method>().is_err());
    }

    #[test]
    fn partition_covers_rows_once() {
        let folds = kfold_partition(23, 5, &mut rng::stream(1, &[])).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert!(kfold_partition(3, 4, &mut rng::stream(1, &[])).is_err());
        assert!(kfold_partition(3, 1, &mut rng::stream(1, &[])).is_err());
    }

    #[test]
    fn mccv_splits_have_size_d() {
        let s = mccv_splits(30, 7, 4, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|h| h.len() == 7 && h.windows(2).all(|w| w[0] < w[1])));
        assert!(mccv_splits(30, 30, 1, &mut rng::stream(2, &[])).is_err());
    }
}
