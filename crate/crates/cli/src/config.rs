use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use trimfmr::alpha::{alpha_grid, AlphaSelectConfig, DispersionCriterion};
use trimfmr::cv::{FitSettings, Method, PredictionRule};
use trimfmr::em::DEFAULT_LAMBDA_GRID;
use trimfmr::{EmControls, LambdaSearch, PenaltyFamily, TrimSpec};

use crate::error::{CliError, CliResult};

/// Bootstrap settings for choosing α.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSearch {
    pub step: f64,
    pub max: f64,
    /// Explicit grid; overrides step and max.
    pub grid: Option<Vec<f64>>,
    pub n_boot: usize,
    pub criterion: DispersionCriterion,
    pub boot_starts: usize,
    pub warm_start: bool,
    pub include_intercepts: bool,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        let d = AlphaSelectConfig::default();
        Self {
            step: 0.01,
            max: 0.2,
            grid: None,
            n_boot: d.n_boot,
            criterion: d.criterion,
            boot_starts: d.boot_starts,
            warm_start: d.warm_start,
            include_intercepts: d.include_intercepts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub methods: Vec<Method>,
    /// Number of folds; exclusive with `mccv_d`.
    pub kfold: Option<usize>,
    /// Hold-out size for Monte Carlo CV.
    pub mccv_d: Option<usize>,
    pub mccv_reps: usize,
    pub prediction: PredictionRule,
    /// Re-choose α by bootstrap on every training split.
    pub refit_alpha: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Ml, Method::Mtl],
            kfold: None,
            mccv_d: None,
            mccv_reps: 100,
            prediction: PredictionRule::Mean,
            refit_alpha: false,
        }
    }
}

/// Resolved settings of the `fit`, `select-alpha` and `cv` commands.
/// Sub-seeds of the EM starts and the bootstrap are taken from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub response: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub m: usize,
    pub penalty: PenaltyFamily,
    pub lambda_grid: Vec<f64>,
    pub a: Option<f64>,
    pub alpha: f64,
    pub select_alpha: bool,
    pub alpha_search: AlphaSearch,
    pub controls: EmControls,
    pub trim: TrimSpec,
    pub cv: CvOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            response: String::new(),
            out_dir: PathBuf::from("trimfmr-out"),
            seed: 1,
            m: 2,
            penalty: PenaltyFamily::Lasso,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            a: None,
            alpha: 0.05,
            select_alpha: false,
            alpha_search: AlphaSearch::default(),
            controls: EmControls::default(),
            trim: TrimSpec::default(),
            cv: CvOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.response.is_empty() {
            return Err(CliError::Usage("response: no response column given (--response)".into()));
        }
        if self.data.as_os_str().is_empty() {
            return Err(CliError::Usage("data: no input CSV given".into()));
        }
        if self.m == 0 {
            return Err(CliError::Usage("m: need at least one component".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(CliError::Usage("lambda_grid: values must be finite and nonnegative".into()));
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(CliError::Usage(format!("alpha: must lie in [0, 0.5), got {}", self.alpha)));
        }
        self.controls.validate()?;
        Ok(())
    }

    pub fn controls(&self) -> EmControls {
        self.controls.with_seed(self.seed)
    }

    pub fn search(&self) -> LambdaSearch {
        LambdaSearch {
            a: self.a,
            ..LambdaSearch::new(self.penalty, self.lambda_grid.clone())
        }
    }

    pub fn trim_spec(&self, alpha: f64) -> TrimSpec {
        TrimSpec { alpha, ..self.trim.clone() }
    }

    pub fn alpha_config(&self) -> CliResult<AlphaSelectConfig> {
        let s = &self.alpha_search;
        let grid = match &s.grid {
            Some(g) => g.clone(),
            None => alpha_grid(s.step, s.max)?,
        };
        let cfg = AlphaSelectConfig {
            grid,
            n_boot: s.n_boot,
            criterion: s.criterion,
            rng_seed: self.seed,
            trim: self.trim.clone(),
            controls: self.controls(),
            boot_starts: s.boot_starts,
            warm_start: s.warm_start,
            include_intercepts: s.include_intercepts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fit_settings(&self) -> CliResult<FitSettings> {
        Ok(FitSettings {
            m: self.m,
            lambda_grid: self.lambda_grid.clone(),
            a: self.a,
            controls: self.controls(),
            trim: self.trim_spec(self.alpha),
            prediction: self.cv.prediction,
            alpha_per_split: if self.cv.refit_alpha { Some(self.alpha_config()?) } else { None },
        })
    }
}

/// Recursively overlays `patch` onto `base`; tables merge key by key.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

pub fn read_toml(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

/// `base` with the keys of the TOML file at `path` laid over it.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> CliResult<T> {
    let mut value = serde_json::to_value(base).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = path {
        merge(&mut value, read_toml(path)?);
    }
    from_value(value)
}

pub fn from_value<T: DeserializeOwned>(value: Value) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
}
