//! Simulation design: two-component models, correlated Gaussian covariates,
//! response contamination, and the replication study driver.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::cv::{fit_method, FitSettings, Method};
use crate::em::{EmControls, DEFAULT_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_replications, score_replication, Aggregate, ReplicationScore};
use crate::mixture::{Dataset, MixtureParams, Truth};
use crate::penalty::PenaltyFamily;
use crate::rng::{self, Rng};
use crate::trim::TrimSpec;

/// Number of covariates in the study models (excluding the intercept).
pub const STUDY_COVARIATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Model1,
    Model2,
}

impl ModelId {
    /// Component coefficient vectors (intercept first).
    pub fn coefficients(self) -> [[f64; STUDY_COVARIATES + 1]; 2] {
        match self {
            ModelId::Model1 => [[1.0, 0.0, 0.0, 3.0, 0.0], [-1.0, 2.0, 0.0, 0.0, 3.0]],
            ModelId::Model2 => [[1.0, 0.6, 0.0, 3.0, 0.0], [-1.0, 0.0, 0.0, 4.0, 0.7]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Model1 => "model1",
            ModelId::Model2 => "model2",
        }
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model1" | "1" => Ok(ModelId::Model1),
            "model2" | "2" => Ok(ModelId::Model2),
            other => Err(Error::Config(format!("model_id: unknown model '{other}'"))),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Covariate correlation structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum RhoKind {
    /// ρ_ij = 0.
    Independent,
    /// ρ_ij = 0.5^|i−j|.
    ArHalf,
}

impl RhoKind {
    pub fn correlation(self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = match self {
                    RhoKind::Independent => f64::from(u8::from(i == j)),
                    RhoKind::ArHalf => 0.5f64.powi((i as i32 - j as i32).abs()),
                };
            }
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            RhoKind::Independent => "independent",
            RhoKind::ArHalf => "ar_half",
        }
    }
}

impl FromStr for RhoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" | "0" => Ok(RhoKind::Independent),
            "ar_half" | "0.5" => Ok(RhoKind::ArHalf),
            other => Err(Error::Config(format!("rho: unknown correlation structure '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelId,
    pub pi1: f64,
    pub rho: RhoKind,
    pub n: usize,
}

impl ModelSpec {
    pub fn new(model: ModelId, pi1: f64, rho: RhoKind, n: usize) -> Result<Self> {
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::Config(format!("pi1 must lie in (0,1), got {pi1}")));
        }
        if n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        Ok(Self { model, pi1, rho, n })
    }

    /// Generating parameters with σ₁² = σ₂² = 1.
    pub fn params(&self) -> MixtureParams {
        let [b1, b2] = self.model.coefficients();
        MixtureParams::new(vec![self.pi1, 1.0 - self.pi1], vec![b1.to_vec(), b2.to_vec()], vec![1.0, 1.0])
            .expect("study parameters are valid")
    }

    /// E(XXᵀ) = blockdiag(1, Σ) for the zero-mean covariates.
    pub fn exx(&self) -> Vec<f64> {
        let p = STUDY_COVARIATES;
        let sigma = self.rho.correlation(p);
        let c = p + 1;
        let mut out = vec![0.0; c * c];
        out[0] = 1.0;
        for i in 0..p {
            for j in 0..p {
                out[(i + 1) * c + j + 1] = sigma[i * p + j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub alpha0: f64,
    pub shift_low: f64,
    pub shift_high: f64,
}

impl ContaminationSpec {
    pub fn new(alpha0: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&alpha0) {
            return Err(Error::Config(format!("alpha0 must lie in [0, 0.5), got {alpha0}")));
        }
        Ok(Self {
            alpha0,
            shift_low: 7.0,
            shift_high: 10.0,
        })
    }

    /// floor(α₀·n), guarded against representation error.
    pub fn count(&self, n: usize) -> usize {
        (self.alpha0 * n as f64 + 1e-9).floor() as usize
    }
}

/// Draws one dataset from the study model.
pub fn generate_dataset(spec: &ModelSpec, rng: &mut Rng) -> Dataset {
    let p = STUDY_COVARIATES;
    let chol = DMatrix::from_row_slice(p, p, &spec.rho.correlation(p))
        .cholesky()
        .expect("correlation matrix is positive definite")
        .l();
    let theta = spec.params();
    let mut y = Vec::with_capacity(spec.n);
    let mut design = Vec::with_capacity(spec.n * (p + 1));
    let mut labels = Vec::with_capacity(spec.n);
    let mut z = vec![0.0; p];
    for _ in 0..spec.n {
        let j = usize::from(rng.random::<f64>() >= spec.pi1);
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        let start = design.len();
        design.push(1.0);
        for a in 0..p {
            design.push((0..=a).map(|b| chol[(a, b)] * z[b]).sum());
        }
        let eps: f64 = StandardNormal.sample(rng);
        let mean: f64 = design[start..].iter().zip(&theta.coefficients()[j]).map(|(x, b)| x * b).sum();
        y.push(mean + eps);
        labels.push(j);
    }
    Dataset::new(y, design, p + 1)
        .and_then(|d| {
            d.with_truth(Truth {
                params: theta,
                exx: spec.exx(),
                labels,
            })
        })
        .expect("generated data are well formed")
}

/// Adds U(shift_low, shift_high) to floor(α₀·n) distinct random responses.
pub fn contaminate(data: &Dataset, spec: &ContaminationSpec, rng: &mut Rng) -> Dataset {
    let mut out = data.clone();
    let k = spec.count(data.len());
    if k == 0 {
        return out;
    }
    let rows = index::sample(rng, data.len(), k).into_vec();
    let shift = Uniform::new(spec.shift_low, spec.shift_high).expect("valid shift range");
    for i in rows {
        out.responses_mut()[i] += shift.sample(rng);
        out.contaminated_mut()[i] = true;
    }
    out
}

/// Replication study over a grid of data-generating cells and methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub replications: usize,
    pub seed: u64,
    pub models: Vec<ModelId>,
    pub pi1: Vec<f64>,
    pub rho: Vec<RhoKind>,
    pub n: Vec<usize>,
    /// Contamination levels; the k-th is reported as "Cont k".
    pub alpha0: Vec<f64>,
    pub methods: Vec<Method>,
    /// Trimming proportion of the trimmed methods.
    pub trim_alpha: f64,
    pub lambda_grid: Vec<f64>,
    pub a: Option<f64>,
    pub controls: EmControls,
    pub trim: TrimSpec,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replications: 200,
            seed: 1,
            models: vec![ModelId::Model1],
            pi1: vec![0.5],
            rho: vec![RhoKind::Independent],
            n: vec![100, 200],
            alpha0: vec![0.01, 0.03, 0.05],
            methods: Method::ALL.to_vec(),
            trim_alpha: 0.05,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            a: None,
            controls: EmControls::default(),
            trim: TrimSpec::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        for (field, empty) in [
            ("models", self.models.is_empty()),
            ("pi1", self.pi1.is_empty()),
            ("rho", self.rho.is_empty()),
            ("n", self.n.is_empty()),
            ("alpha0", self.alpha0.is_empty()),
            ("methods", self.methods.is_empty()),
            ("lambda_grid", self.lambda_grid.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("{field} must not be empty")));
            }
        }
        for &p in &self.pi1 {
            ModelSpec::new(ModelId::Model1, p, RhoKind::Independent, 1).map_err(|e| Error::Config(format!("pi1: {e}")))?;
        }
        for &a in &self.alpha0 {
            ContaminationSpec::new(a).map_err(|e| Error::Config(format!("alpha0: {e}")))?;
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 10) {
            return Err(Error::Config(format!("n: {n} is too small for a two-component fit")));
        }
        if !(0.0..0.5).contains(&self.trim_alpha) {
            return Err(Error::Config(format!("trim_alpha must lie in [0, 0.5), got {}", self.trim_alpha)));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambda_grid values must be finite and nonnegative".into()));
        }
        self.controls.validate()
    }

    /// Data-generating cells in output order: model, π₁, ρ, n, contamination.
    pub fn data_cells(&self) -> Vec<DataCell> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &pi1 in &self.pi1 {
                for &rho in &self.rho {
                    for &n in &self.n {
                        for (k, &alpha0) in self.alpha0.iter().enumerate() {
                            out.push(DataCell {
                                index: out.len(),
                                model,
                                pi1,
                                rho,
                                n,
                                cont: k + 1,
                                alpha0,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn fit_settings(&self) -> FitSettings {
        FitSettings {
            m: 2,
            lambda_grid: self.lambda_grid.clone(),
            a: self.a,
            controls: self.controls.clone(),
            trim: TrimSpec {
                alpha: self.trim_alpha,
                ..self.trim.clone()
            },
            ..FitSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataCell {
    /// Position in [`StudyConfig::data_cells`]; the first seed component.
    pub index: usize,
    pub model: ModelId,
    pub pi1: f64,
    pub rho: RhoKind,
    pub n: usize,
    pub cont: usize,
    pub alpha0: f64,
}

impl DataCell {
    /// The contaminated dataset of replication `rep`. Every method sees the
    /// same one.
    pub fn dataset(&self, seed: u64, rep: usize) -> Result<Dataset> {
        let spec = ModelSpec::new(self.model, self.pi1, self.rho, self.n)?;
        let clean = generate_dataset(&spec, &mut rng::stream(seed, &[self.index as u64, rep as u64, 0]));
        Ok(contaminate(
            &clean,
            &ContaminationSpec::new(self.alpha0)?,
            &mut rng::stream(seed, &[self.index as u64, rep as u64, 1]),
        ))
    }

    pub fn fit_seed(&self, seed: u64, rep: usize) -> u64 {
        rng::derive_seed(seed, &[self.index as u64, rep as u64, 2])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: DataCell,
    pub method: Method,
    /// `None` when every replication failed.
    pub aggregate: Option<Aggregate>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub cells: Vec<CellSummary>,
}

impl StudySummary {
    pub fn total_failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures).sum()
    }
}

/// Runs every (cell, method) pair for `cfg.replications` replications and
/// aggregates the scores. Numerical fit failures are counted, not fatal.
pub fn run_study(cfg: &StudyConfig) -> Result<StudySummary> {
    cfg.validate()?;
    let settings = cfg.fit_settings();
    let mut cells = Vec::new();
    for cell in cfg.data_cells() {
        let per_rep: Vec<Vec<Option<ReplicationScore>>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let data = cell.dataset(cfg.seed, rep)?;
                let truth = data.truth().expect("simulated data carry truth");
                let settings = FitSettings {
                    controls: settings.controls.with_seed(cell.fit_seed(cfg.seed, rep)),
                    ..settings.clone()
                };
                cfg.methods
                    .iter()
                    .map(|&method| match fit_method(&data, method, &settings) {
                        Ok(theta) => score_replication(&theta, &truth.params, &truth.exx).map(Some),
                        Err(e) if e.is_numerical() || matches!(e, Error::TooFewRows { .. }) => {
                            log::warn!("cell {} {method} rep {rep}: {e}", cell.index);
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (k, &method) in cfg.methods.iter().enumerate() {
            let scores: Vec<ReplicationScore> = per_rep.iter().filter_map(|r| r[k].clone()).collect();
            let failures = cfg.replications - scores.len();
            let aggregate = if scores.is_empty() {
                None
            } else {
                Some(aggregate_replications(&scores, failures)?)
            };
            cells.push(CellSummary {
                cell,
                method,
                aggregate,
                failures,
            });
        }
    }
    Ok(StudySummary { cells })
}

const METRICS: [&str; 4] = ["correct", "incorrect", "mme", "accuracy"];

fn metric_values(agg: &Aggregate, metric: &str) -> Vec<f64> {
    match metric {
        "correct" => agg.mean_correct.clone(),
        "incorrect" => agg.mean_incorrect.clone(),
        "mme" => agg.median_model_error.clone(),
        _ => agg.accuracy.clone(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per (cell, method) with every metric, for downstream tooling.
pub fn write_long_csv<W: Write>(summary: &StudySummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model", "pi1", "rho", "n", "cont", "alpha0", "method", "estimator", "penalty", "metric", "comp1", "comp2",
        "replications", "failures",
    ])?;
    for c in &summary.cells {
        let estimator = if c.method.trimmed() { "trim" } else { "fmr" };
        for metric in METRICS {
            let (vals, reps) = match &c.aggregate {
                Some(a) => (metric_values(a, metric).into_iter().map(num).collect(), a.replications),
                None => (vec![String::new(); 2], 0),
            };
            let mut rec = vec![
                c.cell.model.to_string(),
                c.cell.pi1.to_string(),
                c.cell.rho.name().to_string(),
                c.cell.n.to_string(),
                c.cell.cont.to_string(),
                c.cell.alpha0.to_string(),
                c.method.to_string(),
                estimator.to_string(),
                c.method.family().to_string(),
                metric.to_string(),
            ];
            rec.extend(vals.into_iter().chain(std::iter::repeat(String::new())).take(2));
            rec.push(reps.to_string());
            rec.push(c.failures.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per (model, π₁, ρ) in the layout of the published tables:
/// rows are contamination level × penalty, column groups are estimator ×
/// metric × component × n. Returns the paths written.
pub fn write_table_csvs(summary: &StudySummary, cfg: &StudyConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let families: Vec<PenaltyFamily> = cfg.methods.iter().map(|m| m.family()).unique().collect();
    let mut written = Vec::new();
    for &model in &cfg.models {
        for &pi1 in &cfg.pi1 {
            for &rho in &cfg.rho {
                let path = dir.join(format!("table_{}_pi{}_{}.csv", model, pi1, rho.name()));
                let mut w = csv::Writer::from_path(&path)?;
                let mut header = vec!["cont".to_string(), "penalty".to_string()];
                for est in ["fmr", "trim"] {
                    for metric in METRICS {
                        for comp in 1..=2 {
                            for n in &cfg.n {
                                header.push(format!("{est}_{metric}_comp{comp}_n{n}"));
                            }
                        }
                    }
                }
                header.push("failures".into());
                w.write_record(&header)?;
                for (k, _) in cfg.alpha0.iter().enumerate() {
                    for &family in &families {
                        let mut rec = vec![format!("Cont {}", k + 1), family.to_string()];
                        let mut failures = 0;
                        for trimmed in [false, true] {
                            let method = Method::new(family, trimmed);
                            for metric in METRICS {
                                for comp in 0..2 {
                                    for &n in &cfg.n {
                                        let found = summary.cells.iter().find(|c| {
                                            c.method == method
                                                && c.cell.model == model
                                                && c.cell.pi1 == pi1
                                                && c.cell.rho == rho
                                                && c.cell.n == n
                                                && c.cell.cont == k + 1
                                        });
                                        if metric == METRICS[0] && comp == 0 {
                                            failures += found.map_or(0, |c| c.failures);
                                        }
                                        rec.push(
                                            found
                                                .and_then(|c| c.aggregate.as_ref())
                                                .map(|a| num(metric_values(a, metric)[comp]))
                                                .unwrap_or_default(),
                                        );
                                    }
                                }
                            }
                        }
                        rec.push(failures.to_string());
                        w.write_record(&rec)?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
