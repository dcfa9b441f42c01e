//! Executes one experiment and writes `<experiment>-<fingerprint>.{csv,json}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use msde_core::coupling::{
    coupling_time_stats, girsanov_weight, irreducibility_check, simulate_coupled, strong_feller_ladder, CouplingParams,
};
use msde_core::ergodicity::{
    cube_root_bins, estimate_invariant, moment_domination_check, observable_decay, time_average_moment_check, tv_decay,
    Grid, Observable,
};
use msde_core::export;
use msde_core::model::{check_hypotheses, Hypothesis};
use msde_core::rng::NORMAL_METHOD;
use msde_core::simulate::{pinned_moment_check, simulate_paths, simulate_pinned, strong_error_table};
use msde_core::stats::{BoundCheck, MeanSe};
use msde_core::{zoo, ModelSpec, SimConfig};

use crate::config::{Experiment, ExperimentConfig, GridSpec};

/// Pass/fail item that is not an upper-bound comparison.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub label: String,
    pub pass: bool,
}

fn verdict(label: impl Into<String>, pass: bool) -> Verdict {
    Verdict { label: label.into(), pass }
}

struct Artifacts {
    csv: Vec<u8>,
    checks: Vec<BoundCheck>,
    verdicts: Vec<Verdict>,
    details: Value,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: &'static str,
    pub fingerprint: String,
    pub passed: bool,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

fn grid_of(spec: &GridSpec, n_samples: usize) -> anyhow::Result<Grid> {
    let bins = spec.bins.unwrap_or_else(|| cube_root_bins(n_samples));
    Ok(Grid::uniform(&spec.lower, &spec.upper, bins)?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn simple_csv(header: &[&str], rows: Vec<Vec<String>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

fn mean_check(label: &str, est: MeanSe, target: f64) -> Verdict {
    verdict(format!("{label}: |{} - {target}| <= 3 SE ({})", est.mean, est.se), (est.mean - target).abs() <= 3.0 * est.se)
}

fn run_experiment(cfg: &ExperimentConfig, model: &ModelSpec) -> anyhow::Result<Artifacts> {
    let sim = &cfg.sim;
    let c = &model.constants;
    let out = match &cfg.experiment {
        Experiment::Simulate(e) => {
            let ens = simulate_paths(model, &e.x0, sim)?;
            Artifacts {
                csv: csv_bytes(|b| export::write_ensemble(&ens, b))?,
                checks: vec![],
                verdicts: vec![],
                details: json!({
                    "n_paths": ens.n_paths,
                    "n_times": ens.n_times(),
                    "flags": ens.flags,
                    "scheme": ens.scheme,
                }),
            }
        }
        Experiment::Pinned(e) => {
            let ens = simulate_pinned(model, e.m, &e.y0, &e.x0, sim)?;
            let lambda1 = e.lambda1.unwrap_or(c.lambda1);
            let rep = pinned_moment_check(&ens, &model.operator, e.m, &e.y0, &e.x0, lambda1)?;
            let constants: serde_json::Map<String, Value> =
                rep.constants.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
            Artifacts {
                csv: csv_bytes(|b| export::write_bound_report(&rep, b))?,
                checks: rep.checks.clone(),
                verdicts: vec![],
                details: json!({ "constants": constants, "notes": rep.notes, "flags": ens.flags }),
            }
        }
        Experiment::Couple(e) => {
            let mut params = CouplingParams::new(model, &e.x0, &e.y0, sim.horizon_t, sim.step_h)?;
            if let Some(a) = e.alpha {
                params.alpha = a;
            }
            if let Some(eps) = e.eps_couple {
                params.eps_couple = eps;
            }
            params.localization_radius = e.localization_radius;
            let run = simulate_coupled(model, &params, sim)?;
            let g = girsanov_weight(&run, &params)?;
            let stats = coupling_time_stats(&run, &params, c.lambda0, c.eta)?;
            let mut notes = stats.notes.clone();
            if !params.eps_is_small() {
                notes.push(format!("eps_couple = {} is not small against |x0-y0| = {}", params.eps_couple, params.separation()));
            }
            if params.localization_radius.is_some() {
                notes.push("local lambda2: Girsanov sums frozen outside the localization ball".into());
            }
            let mut checks = stats.distance_checks.clone();
            checks.extend(stats.stopping_check.clone());
            checks.push(g.second_moment_check.clone());
            let taus: Vec<Option<f64>> = run.coupling_time.iter().map(|t| t.is_finite().then_some(*t)).collect();
            Artifacts {
                csv: csv_bytes(|b| export::write_coupling(&run, b))?,
                checks,
                verdicts: vec![
                    mean_check("E[U_T] = 1", g.mean, 1.0),
                    verdict("separation below eta", stats.within_validity),
                ],
                details: json!({
                    "params": params,
                    "girsanov": { "mean": g.mean, "second_moment": g.second_moment, "bound": g.second_moment_bound },
                    "prob_not_coupled": stats.prob_not_coupled,
                    "coupling_times": taus,
                    "notes": notes,
                    "flags": run.flags,
                }),
            }
        }
        Experiment::Strongfeller(e) => {
            let rep = strong_feller_ladder(
                model,
                &e.x0,
                &e.direction,
                &e.separations,
                &e.test_function,
                sim,
                e.common_random_numbers,
            )?;
            let rows = rep
                .gaps
                .iter()
                .map(|g| {
                    [g.separation, g.gap, g.se, g.mean_x.mean, g.mean_y.mean].iter().map(|v| format!("{v}")).collect()
                })
                .collect();
            Artifacts {
                csv: simple_csv(&["separation", "gap", "se", "mean_x", "mean_y"], rows)?,
                checks: vec![],
                verdicts: vec![
                    verdict("gap nonincreasing as separation shrinks (2 SE)", rep.monotone),
                    verdict(
                        format!("log-log slope {} >= {} - 0.15", rep.loglog_slope, rep.predicted_exponent),
                        rep.slope_ok,
                    ),
                ],
                details: json!({ "report": rep }),
            }
        }
        Experiment::Irreducibility(e) => {
            let rep = irreducibility_check(model, &e.x0, &e.target, e.radius, e.m, sim)?;
            let rows = vec![vec![
                rep.hits.to_string(),
                rep.trials.to_string(),
                format!("{}", rep.hit_probability),
                format!("{}", rep.cp_lower),
                format!("{}", rep.cp_upper),
                format!("{}", rep.chebyshev_bound),
                format!("{}", rep.pinned_exceedance.empirical),
                format!("{}", rep.pinned_exceedance.se),
            ]];
            Artifacts {
                csv: simple_csv(
                    &["hits", "trials", "hit_probability", "cp_lower", "cp_upper", "chebyshev_bound", "pinned_exceedance", "se"],
                    rows,
                )?,
                checks: vec![rep.pinned_exceedance.clone()],
                verdicts: vec![verdict("at least one hit of the target ball", rep.hits > 0)],
                details: json!({ "report": rep }),
            }
        }
        Experiment::Invariant(e) => {
            let grid = grid_of(&e.grid, sim.n_paths)?;
            let inv = estimate_invariant(model, &e.x0, e.burn_in, e.sample, sim, &grid)?;
            Artifacts {
                csv: csv_bytes(|b| export::write_measure(&inv.measure, b))?,
                checks: vec![],
                verdicts: vec![],
                details: json!({
                    "bins_per_dim": grid.bins_per_dim(),
                    "total": inv.measure.total,
                    "out_of_range": inv.measure.out_of_range,
                    "second_moment": inv.second_moment,
                    "coordinate_means": inv.coordinate_means,
                    "warnings": inv.warnings,
                }),
            }
        }
        Experiment::Tvdecay(e) => {
            let grid = grid_of(&e.grid, sim.n_paths)?;
            let rcfg = SimConfig { n_paths: e.reference_paths, ..sim.clone() };
            let inv = estimate_invariant(model, &e.x0, e.burn_in, e.sample, &rcfg, &grid)?;
            let s = tv_decay(model, &e.x0, &inv.measure, &e.times, sim, &grid)?;
            Artifacts {
                csv: csv_bytes(|b| export::write_decay(&s, b))?,
                checks: vec![],
                verdicts: vec![verdict("decay fit valid", s.fit_valid)],
                details: json!({
                    "alpha_hat": s.alpha_hat,
                    "r_squared": s.r_squared,
                    "fit_window": s.fit_window,
                    "kind": s.kind,
                    "bins_per_dim": grid.bins_per_dim(),
                    "reference_total": inv.measure.total,
                    "notes": s.notes,
                    "warnings": inv.warnings,
                }),
            }
        }
        Experiment::Moments(e) => {
            let avg = time_average_moment_check(model, &e.x0, sim)?;
            let dom = moment_domination_check(model, &e.x0, &e.times, sim)?;
            let mut rep = avg.clone();
            rep.checks.extend(dom.checks.clone());
            Artifacts {
                csv: csv_bytes(|b| export::write_bound_report(&rep, b))?,
                checks: rep.checks.clone(),
                verdicts: vec![],
                details: json!({ "constants": avg.constants }),
            }
        }
        Experiment::Observable(e) => {
            let grid = grid_of(&e.grid, e.reference_paths)?;
            let rcfg = SimConfig { n_paths: e.reference_paths, ..sim.clone() };
            let inv = estimate_invariant(model, &e.x0, e.burn_in, e.sample, &rcfg, &grid)?;
            let rep = observable_decay(model, &e.observable, e.q, &inv.measure, &e.times, e.n_outer, sim, None)?;
            let s = &rep.series;
            let constant = matches!(e.observable, Observable::Constant { .. });
            let ok = if constant { s.values.iter().all(|v| *v == 0.0) } else { s.fit_valid };
            Artifacts {
                csv: csv_bytes(|b| export::write_decay(s, b))?,
                checks: vec![],
                verdicts: vec![verdict(if constant { "series identically zero" } else { "decay fit valid" }, ok)],
                details: json!({
                    "q": rep.q,
                    "alpha_hat": s.alpha_hat,
                    "r_squared": s.r_squared,
                    "fit_window": s.fit_window,
                    "phi_norm": rep.phi_norm,
                    "notes": s.notes,
                }),
            }
        }
        Experiment::Checkhyp(e) => {
            let entry = cfg.zoo.as_deref().and_then(zoo::by_name);
            let which = e.hypotheses.clone().unwrap_or_else(|| {
                entry.as_ref().map(|z| z.claims.clone()).unwrap_or_else(|| {
                    vec![Hypothesis::H1, Hypothesis::H2, Hypothesis::H3, Hypothesis::H4]
                })
            });
            let radius = e.radius.or(entry.as_ref().map(|z| z.check_radius)).unwrap_or(5.0);
            let reports = check_hypotheses(model, &which, e.n_samples, radius, sim.master_seed)?;
            let rows = reports
                .iter()
                .map(|r| {
                    vec![
                        format!("{:?}", r.hypothesis),
                        r.evaluations.to_string(),
                        format!("{}", r.worst_margin),
                        format!("{}", r.tolerance),
                        if r.passed() { "no_violation_found" } else { "refuted" }.to_string(),
                        format!("{}", r.sample_constant),
                    ]
                })
                .collect();
            Artifacts {
                csv: simple_csv(&["hypothesis", "evaluations", "worst_margin", "tolerance", "verdict", "sample_constant"], rows)?,
                checks: vec![],
                verdicts: reports.iter().map(|r| verdict(r.summary(), r.passed())).collect(),
                details: json!({ "radius": radius, "reports": reports }),
            }
        }
        Experiment::Converge(e) => {
            let t = strong_error_table(model, &e.x0, e.base_h, e.levels, sim.horizon_t, sim.n_paths, sim.master_seed)?;
            let rows = t
                .step_sizes
                .iter()
                .zip(&t.errors)
                .map(|(h, m)| vec![format!("{h}"), format!("{}", m.mean), format!("{}", m.se)])
                .collect();
            Artifacts {
                csv: simple_csv(&["h", "strong_error", "se"], rows)?,
                checks: vec![],
                verdicts: vec![],
                details: json!({ "reference_step": t.reference_step, "fitted_order": t.fitted_order, "r_squared": t.r_squared }),
            }
        }
    };
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)?;
    Ok(())
}

/// Runs `cfg`, writing artifacts into `output_dir` (falling back to the config's own, then `.`).
pub fn run(cfg: &ExperimentConfig, output_dir: Option<&Path>) -> anyhow::Result<Outcome> {
    cfg.validate()?;
    let model = cfg.resolved_model()?;
    let dir = output_dir.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| ".".into());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let name = cfg.experiment.name();
    let fp = cfg.fingerprint();
    let art = run_experiment(cfg, &model)?;
    let passed = art.checks.iter().all(|c| c.pass) && art.verdicts.iter().all(|v| v.pass);

    let mut summary: Vec<String> = art
        .checks
        .iter()
        .map(|c| {
            let t = c.t.map(|t| format!(" t={t}")).unwrap_or_default();
            format!(
                "{} {}{}: {} <= {} + {}*{}",
                if c.pass { "PASS" } else { "FAIL" },
                c.label,
                t,
                c.empirical,
                c.bound,
                c.slack_se,
                c.se
            )
        })
        .collect();
    summary.extend(art.verdicts.iter().map(|v| format!("{} {}", if v.pass { "PASS" } else { "FAIL" }, v.label)));

    let report = json!({
        "experiment": name,
        "fingerprint": fp,
        "model_fingerprint": model.fingerprint(),
        "sim_fingerprint": cfg.sim.fingerprint(),
        "master_seed": cfg.sim.master_seed,
        "normal_method": NORMAL_METHOD,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "passed": passed,
        "checks": art.checks,
        "verdicts": art.verdicts,
        "details": art.details,
    });
    let csv_path = dir.join(format!("{name}-{fp}.csv"));
    let json_path = dir.join(format!("{name}-{fp}.json"));
    write_file(&csv_path, &art.csv)?;
    let mut js = serde_json::to_vec_pretty(&report)?;
    js.push(b'\n');
    write_file(&json_path, &js)?;
    Ok(Outcome { experiment: name, fingerprint: fp, passed, csv_path, json_path, summary })
}
