//! Penalized EM for mixtures of regressions with local quadratic
//! approximation (LQA) of the penalty.
//!
//! Each iteration maximizes a minorizer of ℓ₁(θ) = ℓ_n(θ) − p_n(θ), so the
//! recorded objective trace is nondecreasing. The loop checks this at run time
//! and reports a violation as [`Error::Monotonicity`].

use itertools::Itertools;
use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::mixture::{
    dot, log_joint_terms, log_likelihood, log_sum_exp, total_penalty, Dataset, MixtureParams,
    Responsibilities, PROPORTION_FLOOR, ZERO_THRESHOLD,
};
use crate::penalty::{PenaltyFamily, PenaltySpec};
use crate::rng;

/// Stopping rules and start settings for the EM loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmControls {
    pub max_iter: usize,
    /// Relative change in ℓ₁ below which the loop stops.
    pub tol: f64,
    /// Random starts in addition to any supplied initial value.
    pub n_starts: usize,
    pub rng_seed: u64,
    pub monotonicity_assert: bool,
    /// Absolute slack allowed when checking ℓ₁ monotonicity.
    pub monotonicity_tol: f64,
    /// Unpenalized iterations run from each random start before the penalty
    /// is switched on.
    pub warmup_iter: usize,
    /// Count used in the √n penalty scaling; the subset size when unset.
    pub penalty_n: Option<usize>,
}

impl Default for EmControls {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            n_starts: 10,
            rng_seed: 0,
            monotonicity_assert: true,
            monotonicity_tol: 1e-7,
            warmup_iter: 5,
            penalty_n: None,
        }
    }
}

impl EmControls {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    pub fn with_starts(&self, n_starts: usize) -> Self {
        Self {
            n_starts,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: MixtureParams,
    /// ℓ₁ after each iteration of the winning start, starting value first.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Per-component masks of nonzero slopes.
    pub active_sets: Vec<Vec<bool>>,
    pub specs: Vec<PenaltySpec>,
    /// Final ℓ₁ on the fitted subset.
    pub objective: f64,
    pub log_likelihood: f64,
    pub penalty_n: usize,
    /// Index of the winning start; 0 is the supplied initial value when given.
    pub start: usize,
}

/// E-step: r_ij ∝ π_j φ(y_i; x_iᵀβ_j, σ_j²) over `subset`, in log space.
///
/// A row whose normalizer is not finite gets uniform responsibilities.
pub fn e_step(data: &Dataset, theta: &MixtureParams, subset: &[usize]) -> Responsibilities {
    let m = theta.components();
    let mut values = vec![0.0; subset.len() * m];
    let mut buf = vec![0.0; m];
    let y = data.responses();
    for (t, &i) in subset.iter().enumerate() {
        let out = &mut values[t * m..(t + 1) * m];
        log_joint_terms(y[i], data.row(i), theta, &mut buf);
        let lse = log_sum_exp(&buf);
        if lse.is_finite() {
            for (o, &b) in out.iter_mut().zip(&buf) {
                *o = (b - lse).exp();
            }
        } else {
            warn!("row {i}: all component densities underflow; using uniform responsibilities");
            out.fill(1.0 / m as f64);
        }
    }
    Responsibilities::from_raw(values, m)
}

/// π_j = column mean of r, floored at the proportion floor and renormalized.
pub fn m_step_proportions(r: &Responsibilities) -> Vec<f64> {
    let m = r.components();
    let n = r.rows() as f64;
    let mut pi = vec![0.0; m];
    for i in 0..r.rows() {
        for (p, v) in pi.iter_mut().zip(r.row(i)) {
            *p += v;
        }
    }
    pi.iter_mut().for_each(|p| *p /= n);
    if pi.iter().any(|&p| p < PROPORTION_FLOOR) {
        pi.iter_mut().for_each(|p| *p = p.max(PROPORTION_FLOOR));
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
    }
    pi
}

/// Coordinates of β that enter the solve: the intercept and every slope not
/// frozen at zero. Nothing is frozen under a zero penalty.
fn active_coords(beta_prev: &[f64], freeze: bool) -> Vec<usize> {
    (0..beta_prev.len())
        .filter(|&k| k == 0 || !freeze || beta_prev[k].abs() >= ZERO_THRESHOLD)
        .collect()
}

/// LQA-penalized weighted least squares for one component's coefficients.
///
/// Solves (XᵀWX + σ²D)β = XᵀWy over the active coordinates, where
/// D = diag(0, w₁, …, w_p) holds the LQA curvatures at `beta_prev`. Frozen
/// coordinates come back as exact zeros, and slopes that land below the zero
/// threshold are frozen.
pub fn m_step_beta(
    data: &Dataset,
    subset: &[usize],
    r_col: &[f64],
    sigma2: f64,
    beta_prev: &[f64],
    spec: &PenaltySpec,
    penalty_n: usize,
) -> Result<Vec<f64>> {
    if beta_prev.len() != data.cols() || r_col.len() != subset.len() {
        return Err(Error::Dimension("m_step_beta: inconsistent input lengths".into()));
    }
    let freeze = !spec.is_zero();
    let active = active_coords(beta_prev, freeze);
    let beta = solve_active(data, subset, r_col, sigma2, beta_prev, spec, penalty_n, &active)?;
    Ok(if freeze { snapped(&beta) } else { beta })
}

fn snapped(beta: &[f64]) -> Vec<f64> {
    beta.iter()
        .enumerate()
        .map(|(k, &v)| if k > 0 && v.abs() < ZERO_THRESHOLD { 0.0 } else { v })
        .collect()
}

/// Solve restricted to `active`; every other coordinate is returned as zero.
#[allow(clippy::too_many_arguments)]
fn solve_active(
    data: &Dataset,
    subset: &[usize],
    r_col: &[f64],
    sigma2: f64,
    beta_prev: &[f64],
    spec: &PenaltySpec,
    penalty_n: usize,
    active: &[usize],
) -> Result<Vec<f64>> {
    let k = active.len();
    let weights: Vec<f64> = active
        .iter()
        .map(|&c| {
            if c == 0 || spec.is_zero() {
                0.0
            } else {
                let b = beta_prev[c].abs();
                spec.derivative(b, penalty_n) / b
            }
        })
        .collect();

    let y = data.responses();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut xa = vec![0.0; k];
    for (t, &i) in subset.iter().enumerate() {
        let w = r_col[t];
        if w == 0.0 {
            continue;
        }
        let row = data.row(i);
        for (dst, &c) in xa.iter_mut().zip(active) {
            *dst = row[c];
        }
        for a in 0..k {
            let wa = w * xa[a];
            rhs[a] += wa * y[i];
            for b in a..k {
                gram[a * k + b] += wa * xa[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[a * k + b] = gram[b * k + a];
        }
        gram[a * k + a] += sigma2 * weights[a];
    }
    let sol = solve_spd(&gram, &rhs)?;

    // Surrogate objective (scaled by σ²): −½Σr(y−xβ)² − ½σ²Σwβ². The solve
    // is its exact maximizer, so it cannot fall below the value at beta_prev.
    let surrogate = |b: &[f64]| -> f64 {
        let quad: f64 = (0..k)
            .map(|a| b[a] * (0..k).map(|c| gram[a * k + c] * b[c]).sum::<f64>())
            .sum();
        -0.5 * quad + dot(&rhs, b)
    };
    let prev_active: Vec<f64> = active.iter().map(|&c| beta_prev[c]).collect();
    let (before, after) = (surrogate(&prev_active), surrogate(&sol));
    if after < before - 1e-9 * (1.0 + before.abs()) {
        return Err(Error::MStepDecrease { before, after });
    }

    let mut beta = vec![0.0; beta_prev.len()];
    for (&c, v) in active.iter().zip(sol) {
        beta[c] = v;
    }
    Ok(beta)
}

/// One component's share of the penalized Q-function:
/// Σ r log φ(y; xᵀβ, σ²) − Σ_k p(β_k).
fn component_q(
    data: &Dataset,
    subset: &[usize],
    r_col: &[f64],
    beta: &[f64],
    sigma2: f64,
    spec: &PenaltySpec,
    penalty_n: usize,
) -> f64 {
    let y = data.responses();
    let half_log = 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
    let fit: f64 = subset
        .iter()
        .zip(r_col)
        .map(|(&i, &r)| {
            let res = y[i] - dot(data.row(i), beta);
            r * (-half_log - 0.5 * res * res / sigma2)
        })
        .sum();
    fit - beta[1..].iter().map(|&b| spec.value(b, penalty_n)).sum::<f64>()
}

/// Coefficients and variance update for one component.
///
/// Freezing a small slope, or snapping a new one, to exactly zero is not an
/// ascent step by itself: with a variance near its floor the likelihood
/// curvature can outweigh the penalty saved. Each such move is kept only
/// when the component's penalized Q value does not fall below its value at
/// the previous parameters; otherwise the small coefficient stays in the
/// LQA solve.
#[allow(clippy::too_many_arguments)]
fn component_update(
    data: &Dataset,
    subset: &[usize],
    r_col: &[f64],
    sigma2: f64,
    beta_prev: &[f64],
    spec: &PenaltySpec,
    penalty_n: usize,
    freeze: bool,
    variance_floor: f64,
) -> Result<(Vec<f64>, f64)> {
    let all: Vec<usize> = (0..beta_prev.len()).collect();
    if !freeze {
        let beta = solve_active(data, subset, r_col, sigma2, beta_prev, spec, penalty_n, &all)?;
        let s2 = m_step_sigma(data, subset, r_col, &beta, variance_floor);
        return Ok((beta, s2));
    }
    let q = |b: &[f64], s2: f64| component_q(data, subset, r_col, b, s2, spec, penalty_n);
    let baseline = q(beta_prev, sigma2);

    let active = active_coords(beta_prev, true);
    let mut beta = solve_active(data, subset, r_col, sigma2, beta_prev, spec, penalty_n, &active)?;
    let mut s2 = m_step_sigma(data, subset, r_col, &beta, variance_floor);
    let newly_frozen = beta_prev[1..].iter().any(|&b| b != 0.0 && b.abs() < ZERO_THRESHOLD);
    if newly_frozen && q(&beta, s2) < baseline {
        let keep: Vec<usize> = all.iter().copied().filter(|&c| c == 0 || beta_prev[c] != 0.0).collect();
        beta = solve_active(data, subset, r_col, sigma2, beta_prev, spec, penalty_n, &keep)?;
        s2 = m_step_sigma(data, subset, r_col, &beta, variance_floor);
    }

    let snap = snapped(&beta);
    if snap != beta {
        let snap_s2 = m_step_sigma(data, subset, r_col, &snap, variance_floor);
        if q(&snap, snap_s2) >= baseline {
            return Ok((snap, snap_s2));
        }
    }
    Ok((beta, s2))
}

/// σ² = Σ r (y − xᵀβ)² / Σ r, floored at `floor`.
pub fn m_step_sigma(data: &Dataset, subset: &[usize], r_col: &[f64], beta: &[f64], floor: f64) -> f64 {
    let y = data.responses();
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &i) in subset.iter().enumerate() {
        let res = y[i] - dot(data.row(i), beta);
        num += r_col[t] * res * res;
        den += r_col[t];
    }
    let s2 = num / den;
    if s2.is_finite() {
        s2.max(floor)
    } else {
        floor
    }
}

/// One full E+M iteration. β updates use the previous variances; variances
/// then update with the new β.
pub fn em_iteration(
    data: &Dataset,
    subset: &[usize],
    theta: &MixtureParams,
    specs: &[PenaltySpec],
    penalty_n: usize,
    variance_floor: f64,
) -> Result<MixtureParams> {
    let r = e_step(data, theta, subset);
    m_step(data, subset, &r, theta, specs, penalty_n, variance_floor, false)
}

#[allow(clippy::too_many_arguments)]
fn m_step(
    data: &Dataset,
    subset: &[usize],
    r: &Responsibilities,
    theta: &MixtureParams,
    specs: &[PenaltySpec],
    penalty_n: usize,
    variance_floor: f64,
    hold_support: bool,
) -> Result<MixtureParams> {
    let m = theta.components();
    let pi = m_step_proportions(r);
    let mut betas = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for j in 0..m {
        let col = r.column(j);
        if !(col.iter().sum::<f64>() > 0.0) {
            return Err(Error::domain(format!("component {j} has no responsibility mass")));
        }
        let (beta, s2) = component_update(
            data,
            subset,
            &col,
            theta.variances()[j],
            &theta.coefficients()[j],
            &specs[j],
            penalty_n,
            hold_support || !specs[j].is_zero(),
            variance_floor,
        )?;
        vars.push(s2);
        betas.push(beta);
    }
    Ok(MixtureParams::from_parts(pi, betas, vars))
}

/// Number of rows needed to fit m components with p+1 coefficients each.
pub fn min_rows(m: usize, cols: usize) -> usize {
    m * (cols + 1)
}

fn max_abs_diff(a: &MixtureParams, b: &MixtureParams) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct Problem<'a> {
    data: &'a Dataset,
    subset: &'a [usize],
    specs: &'a [PenaltySpec],
    controls: &'a EmControls,
    penalty_n: usize,
    variance_floor: f64,
    /// Keep exact zeros of the start frozen (used by support refits).
    hold_support: bool,
}

impl Problem<'_> {
    fn objective(&self, theta: &MixtureParams) -> Result<f64> {
        Ok(log_likelihood(self.data, theta, Some(self.subset))?
            - total_penalty(theta, self.specs, self.penalty_n)?)
    }

    /// Random balanced hard assignment, one unpenalized M-step, then the
    /// warm-up iterations.
    fn random_start(&self, m: usize, seed: u64) -> Result<MixtureParams> {
        let mut rng = rng::stream(seed, &[]);
        let mut order: Vec<usize> = (0..self.subset.len()).collect();
        order.shuffle(&mut rng);
        let mut values = vec![0.0; self.subset.len() * m];
        for (t, &pos) in order.iter().enumerate() {
            values[pos * m + t % m] = 1.0;
        }
        let r = Responsibilities::from_raw(values, m);
        let zero = vec![PenaltySpec::zero(); m];
        let blank = MixtureParams::from_parts(
            vec![1.0 / m as f64; m],
            vec![vec![1.0; self.data.cols()]; m],
            vec![1.0; m],
        );
        let mut theta = m_step(self.data, self.subset, &r, &blank, &zero, self.penalty_n, self.variance_floor, false)?;
        for _ in 0..self.controls.warmup_iter {
            theta = em_iteration(self.data, self.subset, &theta, &zero, self.penalty_n, self.variance_floor)?;
        }
        Ok(theta)
    }

    fn run(&self, start: MixtureParams, start_index: usize) -> Result<FitResult> {
        let c = self.controls;
        let mut theta = start;
        let mut obj = self.objective(&theta)?;
        let mut trace = vec![obj];
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=c.max_iter {
            let r = e_step(self.data, &theta, self.subset);
            let next = m_step(
                self.data,
                self.subset,
                &r,
                &theta,
                self.specs,
                self.penalty_n,
                self.variance_floor,
                self.hold_support,
            )?;
            let next_obj = self.objective(&next)?;
            if c.monotonicity_assert && next_obj < obj - c.monotonicity_tol {
                return Err(Error::Monotonicity {
                    iteration: it,
                    before: obj,
                    after: next_obj,
                });
            }
            trace.push(next_obj);
            iterations = it;
            let change = max_abs_diff(&next, &theta);
            let rel = (next_obj - obj).abs() / obj.abs().max(1.0);
            theta = next;
            obj = next_obj;
            if change < 1e-12 || rel < c.tol {
                converged = true;
                break;
            }
        }
        let log_likelihood = log_likelihood(self.data, &theta, Some(self.subset))?;
        Ok(FitResult {
            active_sets: theta.active_sets(),
            theta,
            objective_trace: trace,
            converged,
            iterations,
            specs: self.specs.to_vec(),
            objective: obj,
            log_likelihood,
            penalty_n: self.penalty_n,
            start: start_index,
        })
    }
}

/// Fits the penalized mixture on `subset`, keeping the best of the supplied
/// initial value (if any) and `controls.n_starts` random starts.
pub fn fit_penalized_fmr(
    data: &Dataset,
    subset: &[usize],
    m: usize,
    specs: &[PenaltySpec],
    controls: &EmControls,
    init: Option<&MixtureParams>,
) -> Result<FitResult> {
    controls.validate()?;
    if m == 0 {
        return Err(Error::domain("need at least one component"));
    }
    if specs.len() != m {
        return Err(Error::Dimension(format!("{} penalty specs for {m} components", specs.len())));
    }
    let required = min_rows(m, data.cols());
    if subset.len() < required {
        return Err(Error::TooFewRows {
            rows: subset.len(),
            required,
        });
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= data.len()) {
        return Err(Error::domain(format!("row index {i} out of range")));
    }
    if let Some(t) = init {
        if t.components() != m || t.dim() != data.cols() {
            return Err(Error::Dimension("initial value does not match m or the design width".into()));
        }
    }
    let problem = Problem {
        data,
        subset,
        specs,
        controls,
        penalty_n: controls.penalty_n.unwrap_or(subset.len()),
        variance_floor: data.variance_floor(),
        hold_support: false,
    };

    let offset = usize::from(init.is_some());
    let total = offset + controls.n_starts;
    if total == 0 {
        return Err(Error::Config("no initial value and zero random starts".into()));
    }
    let outcomes: Vec<Result<FitResult>> = (0..total)
        .into_par_iter()
        .map(|s| {
            let start = match (s, init) {
                (0, Some(t)) => t.clone(),
                _ => problem.random_start(m, rng::derive_seed(controls.rng_seed, &[(s - offset) as u64]))?,
            };
            problem.run(start, s)
        })
        .collect();

    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.objective > b.objective) {
                    best = Some(fit);
                }
            }
            Err(e @ (Error::Monotonicity { .. } | Error::MStepDecrease { .. })) => return Err(e),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    best.ok_or_else(|| Error::AllStartsFailed {
        starts: total,
        last: last_err.unwrap_or_default(),
    })
}

/// Unpenalized EM from `theta` with its zero slopes held at zero. Gives the
/// likelihood of the selected submodel without shrinkage bias.
pub fn refit_support(
    data: &Dataset,
    subset: &[usize],
    theta: &MixtureParams,
    controls: &EmControls,
) -> Result<FitResult> {
    let zero = vec![PenaltySpec::zero(); theta.components()];
    let problem = Problem {
        data,
        subset,
        specs: &zero,
        controls,
        penalty_n: controls.penalty_n.unwrap_or(subset.len()),
        variance_floor: data.variance_floor(),
        hold_support: true,
    };
    problem.run(theta.clone(), 0)
}

/// Which likelihood enters the BIC of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicLikelihood {
    /// ℓ_n at the penalized estimate.
    Penalized,
    /// ℓ_n after an unpenalized refit on the selected support.
    #[default]
    Refit,
}

/// Penalty family and the λ grid searched by [`select_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub family: PenaltyFamily,
    /// Concavity constant; the family default when unset.
    pub a: Option<f64>,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub bic_likelihood: BicLikelihood,
    #[serde(default)]
    pub mode: LambdaMode,
}

/// How grid values map to components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// One λ from the grid shared by all components.
    #[default]
    Shared,
    /// Every combination of grid values across components.
    PerComponent,
    /// A single candidate: `grid[j]` is component j's λ.
    Pinned,
}

/// Default λ grid for the √n-scaled penalties.
pub const DEFAULT_LAMBDA_GRID: [f64; 12] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0];

impl LambdaSearch {
    pub fn new(family: PenaltyFamily, grid: Vec<f64>) -> Self {
        Self {
            family,
            a: None,
            grid,
            bic_likelihood: BicLikelihood::default(),
            mode: LambdaMode::Shared,
        }
    }

    /// A single fixed λ.
    pub fn fixed(family: PenaltyFamily, lambda: f64) -> Self {
        Self::new(family, vec![lambda])
    }

    /// The given specs as the only candidate.
    pub fn pinned(specs: &[PenaltySpec]) -> Result<Self> {
        let first = specs.first().ok_or_else(|| Error::domain("no penalty specs to pin"))?;
        if specs.iter().any(|s| s.family != first.family || s.a != first.a) {
            return Err(Error::domain("pinned specs must share family and concavity"));
        }
        Ok(Self {
            family: first.family,
            a: Some(first.a),
            grid: specs.iter().map(|s| s.lambda).collect(),
            bic_likelihood: BicLikelihood::default(),
            mode: LambdaMode::Pinned,
        })
    }

    pub fn with_default_grid(family: PenaltyFamily) -> Self {
        Self::new(family, DEFAULT_LAMBDA_GRID.to_vec())
    }

    /// The candidate specs, validated.
    pub fn specs(&self) -> Result<Vec<PenaltySpec>> {
        if self.grid.is_empty() {
            return Err(Error::domain("lambda grid is empty"));
        }
        let a = self.a.unwrap_or_else(|| self.family.default_a());
        self.grid.iter().map(|&l| PenaltySpec::new(self.family, l, a)).collect()
    }
}

/// BIC score of one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaScore {
    /// λ of the first component.
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    /// Score used for selection; `None` when the fit failed.
    pub bic: Option<f64>,
    /// BIC with the likelihood of the penalized fit itself.
    pub bic_penalized: Option<f64>,
    pub df: usize,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub specs: Vec<PenaltySpec>,
    pub fit: FitResult,
    pub scores: Vec<LambdaScore>,
}

/// Degrees of freedom: nonzero coefficients (intercepts included) plus
/// m−1 free proportions plus m variances.
pub fn degrees_of_freedom(theta: &MixtureParams) -> usize {
    let m = theta.components();
    let nonzero = theta.coefficients().iter().flatten().filter(|&&b| b != 0.0).count();
    nonzero + (m - 1) + m
}

/// −2ℓ_n + df·log(rows).
pub fn bic(log_likelihood: f64, theta: &MixtureParams, rows: usize) -> f64 {
    -2.0 * log_likelihood + degrees_of_freedom(theta) as f64 * (rows as f64).ln()
}

/// Chooses λ from `grid` by BIC on `subset`, shared across components or
/// per component.
///
/// An unpenalized pilot fit (multi-start, plus `init` when given) supplies the
/// starting value for every penalized grid point. When `init` is given each
/// grid point is also fitted from it and the higher ℓ₁ kept, so the score
/// reflects the basin a caller iterating from `init` would reach. Ties go to the larger λ
/// (larger total over components when λ is per component).
pub fn select_lambda(
    data: &Dataset,
    subset: &[usize],
    m: usize,
    search: &LambdaSearch,
    controls: &EmControls,
    init: Option<&MixtureParams>,
) -> Result<LambdaSelection> {
    let grid_specs = search.specs()?;
    let candidates: Vec<Vec<PenaltySpec>> = match search.mode {
        LambdaMode::Shared => grid_specs.iter().map(|&s| vec![s; m]).collect(),
        LambdaMode::PerComponent => (0..m)
            .map(|_| grid_specs.iter().copied())
            .multi_cartesian_product()
            .collect(),
        LambdaMode::Pinned if grid_specs.len() == m => vec![grid_specs],
        LambdaMode::Pinned => {
            return Err(Error::Dimension(format!("{} pinned λ values for {m} components", grid_specs.len())))
        }
    };
    let zero = vec![PenaltySpec::zero(); m];
    let pilot = fit_penalized_fmr(data, subset, m, &zero, controls, init)?;
    let warm = controls.with_starts(0);

    let fits: Vec<Result<(FitResult, f64)>> = candidates
        .par_iter()
        .map(|specs| {
            if specs.iter().all(PenaltySpec::is_zero) {
                let mut f = pilot.clone();
                f.specs = specs.clone();
                let ll = f.log_likelihood;
                return Ok((f, ll));
            }
            let mut fit = fit_penalized_fmr(data, subset, m, specs, &warm, Some(&pilot.theta))?;
            if let Some(t) = init.filter(|t| **t != pilot.theta) {
                let other = fit_penalized_fmr(data, subset, m, specs, &warm, Some(t))?;
                if other.objective > fit.objective {
                    fit = other;
                }
            }
            let ll = match search.bic_likelihood {
                BicLikelihood::Penalized => fit.log_likelihood,
                BicLikelihood::Refit => refit_support(data, subset, &fit.theta, &warm)?.log_likelihood,
            };
            Ok((fit, ll))
        })
        .collect();

    let mut scores = Vec::with_capacity(candidates.len());
    let mut ok = Vec::new();
    let mut last_err = None;
    for (specs, fit) in candidates.iter().zip(fits) {
        let lambdas: Vec<f64> = specs.iter().map(|s| s.lambda).collect();
        match fit {
            Ok((fit, ll)) => {
                let score = bic(ll, &fit.theta, subset.len());
                let penalized = bic(fit.log_likelihood, &fit.theta, subset.len());
                scores.push(LambdaScore {
                    lambda: lambdas[0],
                    lambdas,
                    bic: Some(score),
                    bic_penalized: Some(penalized),
                    df: degrees_of_freedom(&fit.theta),
                });
                ok.push((score, penalized, fit));
            }
            Err(e @ (Error::Monotonicity { .. } | Error::MStepDecrease { .. })) => return Err(e),
            Err(e) => {
                last_err = Some(e.to_string());
                scores.push(LambdaScore {
                    lambda: lambdas[0],
                    lambdas,
                    bic: None,
                    bic_penalized: None,
                    df: 0,
                });
            }
        }
    }
    let first = argmin_bic(ok.iter().map(|(b, _, f)| (*b, f))).ok_or_else(|| Error::AllStartsFailed {
        starts: candidates.len(),
        last: last_err.unwrap_or_default(),
    })?;
    // Candidates sharing the winning support have the same refitted
    // likelihood up to convergence noise; among them the penalized-fit BIC
    // decides, which favors the least shrinkage.
    let support = ok[first].2.active_sets.clone();
    let chosen = argmin_bic(
        ok.iter()
            .filter(|(_, _, f)| f.active_sets == support)
            .map(|(_, p, f)| (*p, f)),
    )
    .expect("the winning candidate has its own support");
    let fit = ok
        .into_iter()
        .filter(|(_, _, f)| f.active_sets == support)
        .nth(chosen)
        .map(|(_, _, f)| f)
        .expect("index from the same filter");
    Ok(LambdaSelection {
        lambda: fit.specs[0].lambda,
        specs: fit.specs.clone(),
        fit,
        scores,
    })
}

/// Position of the smallest score; within 1e-9 the larger total λ wins.
fn argmin_bic<'a>(items: impl Iterator<Item = (f64, &'a FitResult)>) -> Option<usize> {
    let total = |f: &FitResult| f.specs.iter().map(|s| s.lambda).sum::<f64>();
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, (score, fit)) in items.enumerate() {
        let t = total(fit);
        let better = match best {
            None => true,
            Some((_, b, bt)) => score < b - 1e-9 || ((score - b).abs() <= 1e-9 && t > bt),
        };
        if better {
            best = Some((k, score, t));
        }
    }
    best.map(|(k, _, _)| k)
}
