use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trimfmr"));
    c.env("TRIMFMR_THREADS", "1");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("trimfmr-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary starts")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// y = 1 + 2 x1 − 0.5 x2 + small deterministic noise.
fn linear_csv(dir: &Path) -> PathBuf {
    let path = dir.join("lin.csv");
    let mut text = String::from("x1,x2,y\n");
    for i in 0..30 {
        let x1 = (i as f64 * 0.37).sin() * 2.0;
        let x2 = (i as f64 * 1.3).cos();
        let noise = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        text += &format!("{x1},{x2},{}\n", 1.0 + 2.0 * x1 - 0.5 * x2 + 0.1 * noise);
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn read_coefficients(dir: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(dir.join("coefficients.csv")).unwrap();
    let rec = r.records().next().unwrap().unwrap();
    rec.iter().skip(4).map(|v| v.parse().unwrap()).collect()
}

/// Least squares via the normal equations, solved by Gaussian elimination.
fn ols(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for row in &rows {
        let x: Vec<f64> = std::iter::once(1.0).chain(row[..k - 1].iter().copied()).collect();
        for i in 0..k {
            for j in 0..k {
                a[i][j] += x[i] * x[j];
            }
            a[i][k] += x[i] * row[k - 1];
        }
    }
    for c in 0..k {
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

#[test]
fn missing_response_is_a_usage_error() {
    let dir = scratch("noresp");
    let csv = linear_csv(&dir);
    let out = run(bin().arg("fit").arg(&csv).arg("--out-dir").arg(dir.join("o")));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("response"));
}

#[test]
fn unknown_response_column_is_a_data_error() {
    let dir = scratch("badcol");
    let csv = linear_csv(&dir);
    let out = run(bin().arg("fit").arg(&csv).args(["--response", "z", "--out-dir"]).arg(dir.join("o")));
    assert_eq!(code(&out), 3);
}

#[test]
fn non_numeric_cell_names_line_and_column() {
    let dir = scratch("nan");
    let csv = dir.join("bad.csv");
    std::fs::write(&csv, "x1,y\n1,2\nabc,3\n").unwrap();
    let out = run(bin().arg("fit").arg(&csv).args(["--response", "y", "--out-dir"]).arg(dir.join("o")));
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("x1"), "{err}");
}

#[test]
fn single_unpenalized_untrimmed_component_is_ols() {
    let dir = scratch("ols");
    let csv = linear_csv(&dir);
    let out_dir = dir.join("o");
    let out = run(bin()
        .arg("fit")
        .arg(&csv)
        .args(["--response", "y", "--m", "1", "--lambda", "0", "--alpha", "0", "--out-dir"])
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let got = read_coefficients(&out_dir);
    let want = ols(&csv);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-8, "{got:?} vs {want:?}");
    }
}

#[test]
fn cv_needs_exactly_one_scheme() {
    let dir = scratch("cvscheme");
    let csv = linear_csv(&dir);
    let out = run(bin().arg("cv").arg(&csv).args(["--response", "y", "--out-dir"]).arg(dir.join("o")));
    assert_eq!(code(&out), 2);
    let out = run(bin().arg("cv").arg(&csv).args(["--response", "y", "--kfold", "3", "--mccv", "5"]));
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_model_id_is_rejected() {
    let dir = scratch("model");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "replications = 1\nmodels = [\"model9\"]\n").unwrap();
    let out = run(bin().arg("simulate").arg(&cfg).arg("--out-dir").arg(dir.join("o")));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model9"));
}

#[test]
fn misspelled_config_key_is_rejected() {
    let dir = scratch("typo");
    let csv = linear_csv(&dir);
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "lamda_grid = [0.1]\n").unwrap();
    let out = run(bin().arg("fit").arg(&csv).args(["--response", "y", "--config"]).arg(&cfg));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda_grid"));
}

#[test]
fn config_file_overrides_flags() {
    let dir = scratch("precedence");
    let csv = linear_csv(&dir);
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "m = 1\nalpha = 0.1\nlambda_grid = [0.0]\n").unwrap();
    let out_dir = dir.join("o");
    let out = run(bin()
        .arg("fit")
        .arg(&csv)
        .args(["--response", "y", "--m", "2", "--alpha", "0.2", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["m"], 1);
    assert_eq!(manifest["config"]["alpha"], 0.1);
    assert_eq!(manifest["summary"]["retained"], 27);
}

#[test]
fn smoke_study_runs_quickly() {
    let dir = scratch("smoke");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let t = Instant::now();
    let out = run(bin().arg("simulate").arg(&cfg).arg("--out-dir").arg(&dir));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed() < Duration::from_secs(60));
    assert!(dir.join("summary_long.csv").exists());
    assert!(dir.join("table_model1_pi0.5_independent.csv").exists());
}

#[test]
fn replay_detects_a_changed_output() {
    let dir = scratch("replay");
    let csv = linear_csv(&dir);
    let first = dir.join("a");
    let out = run(bin()
        .arg("fit")
        .arg(&csv)
        .args(["--response", "y", "--m", "1", "--lambda", "0.2", "--alpha", "0.1", "--out-dir"])
        .arg(&first));
    assert_eq!(code(&out), 0);
    let replayed = run(bin().arg("replay").arg(&first).arg("--out-dir").arg(dir.join("b")).arg("--check"));
    assert_eq!(code(&replayed), 0, "{}", String::from_utf8_lossy(&replayed.stderr));

    std::fs::write(first.join("rows.csv"), "tampered\n").unwrap();
    let replayed = run(bin().arg("replay").arg(&first).arg("--out-dir").arg(dir.join("c")).arg("--check"));
    assert_eq!(code(&replayed), 1);
    assert!(String::from_utf8_lossy(&replayed.stderr).contains("rows.csv"));
}
