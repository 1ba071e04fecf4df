use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use trimfmr::alpha::select_alpha;
use trimfmr::cv::{cv_error_on_folds, cv_error_on_splits, kfold_partition, mccv_splits};
use trimfmr::em::LambdaScore;
use trimfmr::rng;
use trimfmr::sim::{run_study, write_long_csv, write_table_csvs, StudyConfig};
use trimfmr::{fit_trimmed, select_lambda, MixtureParams};

use crate::config::RunConfig;
use crate::data::load_csv;
use crate::error::{CliError, CliResult};

/// Files written by a command and its headline results.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: Value,
    /// Set when outputs were written but the run is incomplete.
    pub failure: Option<CliError>,
}

/// Formats a number for output; zero is always written as "0".
fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        v.to_string()
    }
}

struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str) -> CliResult<csv::Writer<std::fs::File>> {
        self.written.push(name.to_string());
        Ok(csv::Writer::from_path(self.dir.join(name))?)
    }

    fn file(&mut self, name: &str) -> CliResult<std::fs::File> {
        self.written.push(name.to_string());
        Ok(std::fs::File::create(self.dir.join(name))?)
    }
}

fn write_coefficients(out: &mut OutDir, theta: &MixtureParams, lambdas: &[f64], names: &[String]) -> CliResult<()> {
    let mut w = out.csv("coefficients.csv")?;
    let mut header = vec!["component".to_string(), "proportion".into(), "variance".into(), "lambda".into(), "intercept".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for j in 0..theta.components() {
        let mut rec = vec![
            (j + 1).to_string(),
            num(theta.proportions()[j]),
            num(theta.variances()[j]),
            num(lambdas[j]),
        ];
        rec.extend(theta.coefficients()[j].iter().map(|&b| num(b)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows(out: &mut OutDir, n: usize, retained: &[usize]) -> CliResult<()> {
    let mut keep = vec![false; n];
    retained.iter().for_each(|&i| keep[i] = true);
    let mut w = out.csv("rows.csv")?;
    w.write_record(["row", "status"])?;
    for (i, k) in keep.into_iter().enumerate() {
        w.write_record([i.to_string().as_str(), if k { "retained" } else { "trimmed" }])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(out: &mut OutDir, trace: &[f64], segments: &[usize]) -> CliResult<()> {
    let mut w = out.csv("trace.csv")?;
    w.write_record(["step", "objective", "lambda_segment"])?;
    for (s, v) in trace.iter().enumerate() {
        let seg = segments.iter().filter(|&&p| p <= s && p > 0).count();
        w.write_record([s.to_string(), num(*v), seg.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_lambda_scores(out: &mut OutDir, scores: &[LambdaScore]) -> CliResult<()> {
    let mut w = out.csv("lambda_bic.csv")?;
    let m = scores.first().map_or(0, |s| s.lambdas.len());
    let mut header: Vec<String> = (1..=m).map(|j| format!("lambda_comp{j}")).collect();
    header.extend(["bic", "bic_penalized", "df"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for s in scores {
        let mut rec: Vec<String> = s.lambdas.iter().map(|&l| num(l)).collect();
        rec.extend([opt(s.bic), opt(s.bic_penalized), s.df.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let loaded = load_csv(&cfg.data, &cfg.response)?;
    let data = &loaded.dataset;
    let mut out = OutDir::new(&cfg.out_dir)?;
    let search = cfg.search();
    let controls = cfg.controls();

    let alpha = if cfg.select_alpha {
        let report = select_alpha(data, cfg.m, &search, &cfg.alpha_config()?)?;
        report.write_csv(out.file("alpha_scores.csv")?)?;
        report.alpha
    } else {
        cfg.alpha
    };

    let (theta, lambdas, retained, trace, segments) = if alpha == 0.0 {
        let sel = select_lambda(data, &data.all_rows(), cfg.m, &search, &controls, None)?;
        write_lambda_scores(&mut out, &sel.scores)?;
        let lambdas: Vec<f64> = sel.specs.iter().map(|s| s.lambda).collect();
        (sel.fit.theta, lambdas, data.all_rows(), sel.fit.objective_trace, vec![])
    } else {
        let tf = fit_trimmed(data, cfg.m, &search, &cfg.trim_spec(alpha), &controls)?;
        write_lambda_scores(&mut out, &tf.lambda_scores)?;
        let lambdas: Vec<f64> = tf.specs.iter().map(|s| s.lambda).collect();
        (tf.theta, lambdas, tf.retained, tf.trimmed_objective_trace, tf.lambda_segments)
    };
    write_coefficients(&mut out, &theta, &lambdas, &loaded.covariate_names)?;
    write_rows(&mut out, data.len(), &retained)?;
    write_trace(&mut out, &trace, &segments)?;
    Ok(Outcome {
        outputs: out.written,
        summary: json!({
            "alpha": alpha,
            "lambdas": lambdas,
            "retained": retained.len(),
            "objective": trace.last(),
        }),
        failure: None,
    })
}

pub fn select_alpha_cmd(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let loaded = load_csv(&cfg.data, &cfg.response)?;
    let mut out = OutDir::new(&cfg.out_dir)?;
    let report = select_alpha(&loaded.dataset, cfg.m, &cfg.search(), &cfg.alpha_config()?)?;
    report.write_csv(out.file("alpha_scores.csv")?)?;
    Ok(Outcome {
        outputs: out.written,
        summary: json!({ "alpha": report.alpha, "criterion": report.criterion }),
        failure: None,
    })
}

pub fn cv(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let opts = &cfg.cv;
    if opts.methods.is_empty() {
        return Err(CliError::Usage("cv.methods: no methods given".into()));
    }
    let loaded = load_csv(&cfg.data, &cfg.response)?;
    let data = &loaded.dataset;
    let settings = cfg.fit_settings()?;
    // One set of splits, drawn before any fit, shared by every method.
    let mut split_rng = rng::stream(cfg.seed, &[0x5eed]);
    let (scheme, splits) = match (opts.kfold, opts.mccv_d) {
        (Some(k), None) => (format!("kfold{k}"), kfold_partition(data.len(), k, &mut split_rng)?),
        (None, Some(d)) => (
            format!("mccv_d{d}_reps{}", opts.mccv_reps),
            mccv_splits(data.len(), d, opts.mccv_reps, &mut split_rng)?,
        ),
        _ => return Err(CliError::Usage("cv: give exactly one of --kfold or --mccv".into())),
    };
    let mut out = OutDir::new(&cfg.out_dir)?;
    let mut w = out.csv("splits.csv")?;
    w.write_record(["split", "row"])?;
    for (s, rows) in splits.iter().enumerate() {
        for r in rows {
            w.write_record([s.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;

    let mut results = Vec::new();
    for &method in &opts.methods {
        let res = if opts.kfold.is_some() {
            cv_error_on_folds(data, method, &settings, &splits)?
        } else {
            cv_error_on_splits(data, method, &settings, &splits)?
        };
        results.push((method, res));
    }
    let mut w = out.csv("cv_mspe.csv")?;
    w.write_record(["method", "scheme", "mspe", "splits", "failed_splits"])?;
    for (method, r) in &results {
        w.write_record([method.to_string(), scheme.clone(), num(r.mspe), r.splits.to_string(), r.failed_splits.to_string()])?;
    }
    w.flush()?;
    let mspe: serde_json::Map<String, Value> = results.iter().map(|(m, r)| (m.to_string(), json!(r.mspe))).collect();
    Ok(Outcome {
        outputs: out.written,
        summary: json!({ "scheme": scheme, "shared_splits": true, "mspe": mspe }),
        failure: None,
    })
}

/// Configuration of a `simulate` run as recorded in its manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub out_dir: PathBuf,
    pub study: StudyConfig,
}

pub fn simulate(cfg: &SimulateConfig) -> CliResult<Outcome> {
    let summary = run_study(&cfg.study)?;
    let mut out = OutDir::new(&cfg.out_dir)?;
    write_long_csv(&summary, out.file("summary_long.csv")?)?;
    for path in write_table_csvs(&summary, &cfg.study, &cfg.out_dir)? {
        let name = path.file_name().expect("table path has a file name").to_string_lossy().into_owned();
        out.written.push(name);
    }
    let empty: Vec<String> = summary
        .cells
        .iter()
        .filter(|c| c.aggregate.is_none())
        .map(|c| format!("{} {} n={} cont {} {}", c.cell.model, c.cell.pi1, c.cell.n, c.cell.cont, c.method))
        .collect();
    let failure = (!empty.is_empty()).then(|| CliError::Numerical(format!("cells with no successful replication: {}", empty.join("; "))));
    Ok(Outcome {
        outputs: out.written,
        summary: json!({
            "cells": summary.cells.len(),
            "failed_replications": summary.total_failures(),
        }),
        failure,
    })
}
