//! Trimmed penalized likelihood: the FAST-TLE alternation between trimming
//! under the current fit and refitting on the retained rows, plus an
//! exhaustive subset search used as a test oracle on tiny problems.

use itertools::Itertools;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{
    fit_penalized_fmr, min_rows, select_lambda, EmControls, FitResult, LambdaScore, LambdaSearch,
};
use crate::error::{Error, Result};
use crate::metrics::aligned;
use crate::mixture::{row_log_densities, total_penalty, Dataset, MixtureParams};
use crate::penalty::PenaltySpec;
use crate::rng;

/// Largest number of subsets [`exhaustive_tle`] will fit.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000;

/// Which count enters the √n penalty scaling of a trimmed fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyScale {
    /// The retained count h.
    #[default]
    Retained,
    /// The full sample size n.
    Full,
}

/// When λ is chosen during the trim/refit alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaTuning {
    /// Once, on the pilot's retained set.
    Once,
    /// After the pilot, then again each time the fixed-λ alternation
    /// converges, continuing while the choice changes.
    #[default]
    AtConvergence,
    /// On every retained set.
    EveryIteration,
}

/// Cap on re-selections under [`LambdaTuning::AtConvergence`].
pub const MAX_RETUNES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimSpec {
    /// Trimming proportion in [0, 0.5).
    pub alpha: f64,
    /// Stop once the max-norm change of the aligned parameters drops below
    /// this, or once the retained set repeats with a relative objective gain
    /// below the inner EM tolerance.
    pub outer_tol: f64,
    pub max_outer: usize,
    pub lambda_tuning: LambdaTuning,
    pub penalty_scale: PenaltyScale,
}

impl Default for TrimSpec {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            outer_tol: 1e-6,
            max_outer: 100,
            lambda_tuning: LambdaTuning::default(),
            penalty_scale: PenaltyScale::Retained,
        }
    }
}

impl TrimSpec {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    /// h = floor(n(1−α)).
    pub fn retained_count(&self, n: usize) -> usize {
        retained_count(n, self.alpha)
    }

    pub fn validate(&self, n: usize, m: usize, cols: usize) -> Result<()> {
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha must lie in [0, 0.5), got {}", self.alpha)));
        }
        if !(self.outer_tol > 0.0) || self.max_outer == 0 {
            return Err(Error::Config("outer_tol must be positive and max_outer at least 1".into()));
        }
        let h = self.retained_count(n);
        let required = min_rows(m, cols);
        if h < required {
            return Err(Error::TooFewRows { rows: h, required });
        }
        Ok(())
    }
}

fn retained_count(n: usize, alpha: f64) -> usize {
    // The small offset keeps e.g. 100·(1−0.07) from flooring to 92.
    ((n as f64) * (1.0 - alpha) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InnerFitStats {
    pub fits: usize,
    pub em_iterations: usize,
}

impl InnerFitStats {
    fn record(&mut self, fit: &FitResult) {
        self.fits += 1;
        self.em_iterations += fit.iterations;
    }
}

#[derive(Debug, Clone)]
pub struct TrimmedFit {
    pub theta: MixtureParams,
    /// Retained row indices, ascending; exactly floor(n(1−α)) of them.
    pub retained: Vec<usize>,
    /// Σ_{i∈Î} log f(y_i|x_i,θ) − p_n(θ) after each outer iteration.
    pub trimmed_objective_trace: Vec<f64>,
    /// Trace positions where a new λ takes effect; the trace is
    /// nondecreasing between consecutive positions.
    pub lambda_segments: Vec<usize>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub inner_fits: InnerFitStats,
    pub alpha: f64,
    pub specs: Vec<PenaltySpec>,
    pub lambda: f64,
    pub objective: f64,
    pub penalty_n: usize,
    /// BIC scores from the λ search on the retained rows.
    pub lambda_scores: Vec<LambdaScore>,
}

impl TrimmedFit {
    /// Rows excluded from the final fit, ascending.
    pub fn trimmed(&self, n: usize) -> Vec<usize> {
        let mut keep = vec![false; n];
        self.retained.iter().for_each(|&i| keep[i] = true);
        (0..n).filter(|&i| !keep[i]).collect()
    }
}

/// Indices of the h = floor(n(1−α)) rows with the largest mixture density
/// under `theta`, returned in ascending order. Density ties go to the lower
/// row index.
pub fn trim_index_set(data: &Dataset, theta: &MixtureParams, alpha: f64) -> Result<Vec<usize>> {
    let h = retained_count(data.len(), alpha);
    trim_to(data, theta, h)
}

fn trim_to(data: &Dataset, theta: &MixtureParams, h: usize) -> Result<Vec<usize>> {
    if h < 1 {
        return Err(Error::domain("trimming would retain no rows"));
    }
    if theta.dim() != data.cols() {
        return Err(Error::Dimension("parameters do not match the design width".into()));
    }
    let dens = row_log_densities(data, theta);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| dens[b].total_cmp(&dens[a]).then(a.cmp(&b)));
    let mut kept = order[..h.min(order.len())].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Σ_{i∈retained} log f(y_i|x_i,θ) − p_n(θ).
pub fn trimmed_objective(
    data: &Dataset,
    theta: &MixtureParams,
    retained: &[usize],
    specs: &[PenaltySpec],
    penalty_n: usize,
) -> Result<f64> {
    Ok(crate::mixture::log_likelihood(data, theta, Some(retained))? - total_penalty(theta, specs, penalty_n)?)
}

fn param_change(new: &MixtureParams, old: &MixtureParams) -> Result<f64> {
    let new = aligned(new, old)?;
    Ok(new
        .to_flat()
        .iter()
        .zip(old.to_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Unpenalized FAST-TLE run used to find a clean retained set before λ is
/// chosen.
struct Pilot {
    theta: MixtureParams,
    retained: Vec<usize>,
    loglik: f64,
}

fn pilot_run(
    data: &Dataset,
    m: usize,
    h: usize,
    trim: &TrimSpec,
    controls: &EmControls,
    start: PilotStart<'_>,
    stats: &mut InnerFitStats,
) -> Result<Pilot> {
    let zero = vec![PenaltySpec::zero(); m];
    let warm = controls.with_starts(0);
    let (mut theta, mut retained) = match start {
        PilotStart::Given(t) => {
            let kept = trim_to(data, t, h)?;
            let fit = fit_penalized_fmr(data, &kept, m, &zero, &warm, Some(t))?;
            stats.record(&fit);
            (fit.theta, kept)
        }
        PilotStart::Random(seed) => {
            let mut r = rng::stream(seed, &[]);
            let mut kept = index::sample(&mut r, data.len(), h).into_vec();
            kept.sort_unstable();
            let fit = fit_penalized_fmr(data, &kept, m, &zero, &controls.with_starts(1).with_seed(seed), None)?;
            stats.record(&fit);
            (fit.theta, kept)
        }
    };
    for _ in 0..trim.max_outer {
        let next = trim_to(data, &theta, h)?;
        if next == retained {
            break;
        }
        let fit = fit_penalized_fmr(data, &next, m, &zero, &warm, Some(&theta))?;
        stats.record(&fit);
        theta = fit.theta;
        retained = next;
    }
    let retained = trim_to(data, &theta, h)?;
    let loglik = crate::mixture::log_likelihood(data, &theta, Some(&retained))?;
    Ok(Pilot {
        theta,
        retained,
        loglik,
    })
}

#[derive(Clone, Copy)]
enum PilotStart<'a> {
    Given(&'a MixtureParams),
    Random(u64),
}

/// Fits the trimmed penalized mixture with FAST-TLE.
///
/// With h = n this is the untrimmed fit: λ is chosen by BIC on all rows.
/// Otherwise an unpenalized FAST-TLE pilot from `controls.n_starts` random
/// h-subsets picks a retained set, λ is chosen by BIC on it, and the
/// trim/refit alternation continues with that λ until the aligned parameters
/// move less than `trim.outer_tol`.
pub fn fit_trimmed(
    data: &Dataset,
    m: usize,
    search: &LambdaSearch,
    trim: &TrimSpec,
    controls: &EmControls,
) -> Result<TrimmedFit> {
    fit_trimmed_from(data, m, search, trim, controls, None)
}

/// As [`fit_trimmed`], additionally seeding the pilot with `init`.
pub fn fit_trimmed_from(
    data: &Dataset,
    m: usize,
    search: &LambdaSearch,
    trim: &TrimSpec,
    controls: &EmControls,
    init: Option<&MixtureParams>,
) -> Result<TrimmedFit> {
    controls.validate()?;
    search.specs()?;
    let n = data.len();
    trim.validate(n, m, data.cols())?;
    let h = trim.retained_count(n);
    let mut stats = InnerFitStats::default();

    if h == n {
        let sel = select_lambda(data, &data.all_rows(), m, search, controls, init)?;
        stats.record(&sel.fit);
        return Ok(TrimmedFit {
            retained: data.all_rows(),
            trimmed_objective_trace: vec![sel.fit.objective],
            lambda_segments: vec![0],
            outer_iterations: 0,
            converged: sel.fit.converged,
            inner_fits: stats,
            alpha: trim.alpha,
            specs: sel.specs,
            lambda: sel.lambda,
            objective: sel.fit.objective,
            penalty_n: sel.fit.penalty_n,
            lambda_scores: sel.scores,
            theta: sel.fit.theta,
        });
    }

    let penalty_n = match trim.penalty_scale {
        PenaltyScale::Retained => h,
        PenaltyScale::Full => n,
    };
    let inner = EmControls {
        penalty_n: Some(penalty_n),
        ..controls.clone()
    };

    let starts: Vec<PilotStart<'_>> = init
        .map(PilotStart::Given)
        .into_iter()
        .chain((0..controls.n_starts).map(|s| PilotStart::Random(rng::derive_seed(controls.rng_seed, &[7, s as u64]))))
        .collect();
    if starts.is_empty() {
        return Err(Error::Config("no initial value and zero random starts".into()));
    }
    let pilots: Vec<(Result<Pilot>, InnerFitStats)> = starts
        .par_iter()
        .map(|&s| {
            let mut st = InnerFitStats::default();
            (pilot_run(data, m, h, trim, &inner, s, &mut st), st)
        })
        .collect();
    let mut best: Option<Pilot> = None;
    let mut last_err = None;
    for (p, st) in pilots {
        stats.fits += st.fits;
        stats.em_iterations += st.em_iterations;
        match p {
            Ok(p) => {
                if best.as_ref().map_or(true, |b| p.loglik > b.loglik) {
                    best = Some(p);
                }
            }
            Err(e @ (Error::Monotonicity { .. } | Error::MStepDecrease { .. })) => return Err(e),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    let pilot = best.ok_or_else(|| Error::AllStartsFailed {
        starts: starts.len(),
        last: last_err.unwrap_or_default(),
    })?;

    let warm = inner.with_starts(0);
    let sel = select_lambda(data, &pilot.retained, m, search, &warm, Some(&pilot.theta))?;
    stats.record(&sel.fit);
    let mut specs = sel.specs;
    let mut lambda_scores = sel.scores;
    let mut theta = sel.fit.theta;
    let mut retained = pilot.retained;
    let mut objective = trimmed_objective(data, &theta, &retained, &specs, penalty_n)?;
    let mut trace = vec![objective];
    let mut segments = vec![0];
    let mut converged = false;
    let mut outer = 0;
    let mut retunes = 0;

    while outer < trim.max_outer {
        outer += 1;
        let wrap = |e: Error| Error::Outer {
            outer,
            source: Box::new(e),
        };
        let next = trim_to(data, &theta, h)?;
        let retrimmed = trimmed_objective(data, &theta, &next, &specs, penalty_n)?;
        if controls.monotonicity_assert && retrimmed < objective - controls.monotonicity_tol {
            return Err(wrap(Error::Monotonicity {
                iteration: outer,
                before: objective,
                after: retrimmed,
            }));
        }
        let mut lambda_changed = false;
        let fit = if trim.lambda_tuning == LambdaTuning::EveryIteration {
            let sel = select_lambda(data, &next, m, search, &warm, Some(&theta)).map_err(wrap)?;
            lambda_changed = sel.specs != specs;
            specs = sel.specs;
            lambda_scores = sel.scores;
            sel.fit
        } else {
            fit_penalized_fmr(data, &next, m, &specs, &warm, Some(&theta)).map_err(wrap)?
        };
        stats.record(&fit);
        let new_objective = trimmed_objective(data, &fit.theta, &next, &specs, penalty_n)?;
        if lambda_changed {
            segments.push(trace.len());
        } else if controls.monotonicity_assert && new_objective < objective - controls.monotonicity_tol {
            return Err(wrap(Error::Monotonicity {
                iteration: outer,
                before: objective,
                after: new_objective,
            }));
        }
        let change = param_change(&fit.theta, &theta)?;
        // A fixed retained set with a negligible objective gain is only inner
        // EM creep; treat it as converged too.
        let settled =
            next == retained && new_objective - objective <= controls.tol * objective.abs().max(1.0);
        trace.push(new_objective);
        theta = fit.theta;
        retained = next;
        objective = new_objective;
        if change < trim.outer_tol || settled {
            if trim.lambda_tuning == LambdaTuning::AtConvergence && retunes < MAX_RETUNES {
                retunes += 1;
                let sel = select_lambda(data, &retained, m, search, &warm, Some(&theta)).map_err(wrap)?;
                stats.record(&sel.fit);
                lambda_scores = sel.scores;
                let same = sel.specs == specs;
                let reselected = trimmed_objective(data, &sel.fit.theta, &retained, &sel.specs, penalty_n)?;
                // Same λ: only a strictly better fit on the same rows moves us.
                if !same || reselected > objective + controls.monotonicity_tol {
                    if !same {
                        segments.push(trace.len());
                    }
                    specs = sel.specs;
                    theta = sel.fit.theta;
                    objective = reselected;
                    trace.push(objective);
                    continue;
                }
            }
            converged = true;
            break;
        }
    }

    Ok(TrimmedFit {
        theta,
        retained,
        trimmed_objective_trace: trace,
        lambda_segments: segments,
        outer_iterations: outer,
        converged,
        inner_fits: stats,
        alpha: trim.alpha,
        lambda: specs[0].lambda,
        specs,
        objective,
        penalty_n,
        lambda_scores,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Fits every floor(n(1−α))-subset and returns the best trimmed penalized
/// objective. Intended for tests on tiny problems.
pub fn exhaustive_tle(
    data: &Dataset,
    m: usize,
    specs: &[PenaltySpec],
    alpha: f64,
    controls: &EmControls,
) -> Result<TrimmedFit> {
    let n = data.len();
    let h = retained_count(n, alpha);
    if h < 1 || h > n {
        return Err(Error::domain("alpha leaves no rows"));
    }
    let count = binomial(n, h);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::domain(format!(
            "{count} subsets exceed the exhaustive limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let subsets: Vec<Vec<usize>> = (0..n).combinations(h).collect();
    let fits: Vec<Result<FitResult>> = subsets
        .par_iter()
        .map(|s| fit_penalized_fmr(data, s, m, specs, controls, None))
        .collect();
    let mut best: Option<(usize, FitResult)> = None;
    let mut last_err = None;
    let mut stats = InnerFitStats::default();
    for (k, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(f) => {
                stats.record(&f);
                if best.as_ref().map_or(true, |(_, b)| f.objective > b.objective) {
                    best = Some((k, f));
                }
            }
            Err(e @ (Error::Monotonicity { .. } | Error::MStepDecrease { .. })) => return Err(e),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    let (k, fit) = best.ok_or_else(|| Error::AllStartsFailed {
        starts: subsets.len(),
        last: last_err.unwrap_or_default(),
    })?;
    Ok(TrimmedFit {
        retained: subsets[k].clone(),
        trimmed_objective_trace: vec![fit.objective],
        lambda_segments: vec![0],
        outer_iterations: 0,
        converged: fit.converged,
        inner_fits: stats,
        alpha,
        lambda: specs.first().map_or(0.0, |s| s.lambda),
        specs: specs.to_vec(),
        objective: fit.objective,
        penalty_n: fit.penalty_n,
        lambda_scores: Vec::new(),
        theta: fit.theta,
    })
}
