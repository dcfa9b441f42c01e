use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msde_cli::ExperimentConfig;

fn msde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msde")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn artifacts(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn report(dir: &Path) -> serde_json::Value {
    let js = artifacts(dir, "json");
    assert_eq!(js.len(), 1, "{js:?}");
    serde_json::from_slice(&std::fs::read(&js[0]).unwrap()).unwrap()
}

const PINNED: &str = r#"
zoo = "box_linear"
[sim]
step_h = 0.01
horizon_t = 2.0
n_paths = 2000
master_seed = 1
record_stride = 10
[experiment.pinned]
x0 = [1.0, 0.0]
y0 = [0.0, 0.0]
m = 10.0
"#;

#[test]
fn pinned_run_reports_constants_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pinned.toml", PINNED);
    let out_dir = dir.path().join("out");
    let o = msde(&["--quiet", "--output", out_dir.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out_dir);
    assert_eq!(r["experiment"], "pinned");
    assert_eq!(r["details"]["constants"]["C(m)"], 15.0);
    assert_eq!(r["details"]["constants"]["C0"], 2.0);
    assert_eq!(r["passed"], true);
    let checks = r["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        for k in ["empirical", "bound", "se", "pass"] {
            assert!(c.get(k).is_some(), "{c}");
        }
    }
    let csv = artifacts(&out_dir, "csv");
    assert!(csv[0].file_name().unwrap().to_str().unwrap().starts_with("pinned-"));
}

#[test]
fn malformed_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &PINNED.replace("master_seed = 1", "master_seed = 1\nstep_size = 0.1"));
    let o = msde(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_size"));

    let typo = write_config(dir.path(), "typo.toml", &PINNED.replace("m = 10.0", "m = 10.0\nlambda_1 = 1.0"));
    let o = msde(&["run", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda_1"));

    let o = msde(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_bound_exits_two() {
    // OU with an understated λ4: the time-average bound λ4/λ3 = 0.05 is far below E x² = 1
    let text = r#"
[model]
dim_x = 1
dim_w = 1
operator = { kind = "zero" }
drift = { kind = "linear", matrix = [[1.0]] }
diffusion = { kind = "constant_matrix", matrix = [[1.4142135623730951]] }
[model.constants]
lambda0 = 0.0
lambda1 = 1.4142135623730951
lambda3 = 2.0
lambda4 = 0.1
p = 2.0
eta = 1.0
[sim]
step_h = 0.01
horizon_t = 5.0
n_paths = 500
master_seed = 3
[experiment.moments]
x0 = [0.0]
times = [1.0, 2.0]
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.toml", text);
    let o = msde(&["--output", dir.path().to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(report(dir.path())["passed"], false);
}

const TVDECAY: &str = r#"
zoo = "ou"
[sim]
step_h = 0.01
horizon_t = 1.0
n_paths = 2000
master_seed = 4
record_stride = 10
[experiment.tvdecay]
x0 = [3.0]
times = [0.5, 1.0, 1.5, 2.0]
reference_paths = 200
burn_in = 5.0
sample = 100.0
grid = { lower = [-5.0], upper = [5.0], bins = 20 }
"#;

#[test]
fn tvdecay_writes_series_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tv.toml", TVDECAY);
    let o = msde(&["--quiet", "--output", dir.path().to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert!(r["details"]["alpha_hat"].as_f64().is_some());
    let csv = std::fs::read_to_string(&artifacts(dir.path(), "csv")[0]).unwrap();
    assert!(csv.starts_with("t,value,se,in_fit_window"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn catalogue_lists_six_models_with_constants() {
    let o = msde(&["list-models"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 6);
    for l in lines {
        for k in ["lambda0=", "lambda1=", "lambda3=", "lambda4=", "p="] {
            assert!(l.contains(k), "{l}");
        }
    }
    assert_eq!(msde(&["schema"]).status.code(), Some(0));
    let v = msde(&["version"]);
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("msde "));
}

#[test]
fn every_zoo_entry_passes_its_own_checkhyp() {
    for e in msde_core::zoo::catalogue() {
        let text = format!(
            "zoo = \"{}\"\n[sim]\nstep_h = 0.01\nhorizon_t = 1.0\nn_paths = 1\nmaster_seed = 5\n[experiment.checkhyp]\nn_samples = 2000\n",
            e.name
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = msde_cli::run(&cfg, Some(dir.path())).unwrap();
        assert!(out.passed, "{}: {:?}", e.name, out.summary);
        // the inline model form parses back to the same model
        let mut table = toml::Table::new();
        table.insert("model".into(), toml::Value::try_from(&e.model).unwrap());
        let model = toml::to_string(&table).unwrap();
        let inline = format!(
            "{model}\n[sim]\nstep_h = 0.01\nhorizon_t = 1.0\nn_paths = 1\nmaster_seed = 5\n[experiment.checkhyp]\nn_samples = 10\n"
        );
        assert_eq!(ExperimentConfig::parse(&inline).unwrap().resolved_model().unwrap(), e.model);
    }
}

#[test]
fn artifacts_are_byte_identical_across_runs_and_threads() {
    let configs = [("pinned.toml", PINNED), ("tv.toml", TVDECAY)];
    for (name, text) in configs {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), name, text);
        let mut outputs = Vec::new();
        for (i, threads) in ["1", "8", "8"].iter().enumerate() {
            let out = dir.path().join(format!("o{i}"));
            let o = msde(&["--quiet", "--threads", threads, "--output", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0));
            let csv = artifacts(&out, "csv");
            outputs.push((csv[0].file_name().unwrap().to_owned(), std::fs::read(&csv[0]).unwrap()));
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[1], outputs[2]);
    }
}
