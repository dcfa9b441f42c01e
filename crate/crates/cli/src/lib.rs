//! Experiment runner: TOML config in, deterministic CSV and JSON artifacts out.

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run, Outcome};

/// One line per zoo entry with its declared constants and claimed hypotheses.
pub fn list_models() -> String {
    let mut out = String::new();
    for e in msde_core::zoo::catalogue() {
        let c = &e.model.constants;
        let l2 = c.lambda2.map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
        let claims: Vec<String> = e.claims.iter().map(|h| format!("{h:?}")).collect();
        out.push_str(&format!(
            "{:<18} d={} lambda0={} lambda1={} lambda2={} lambda3={} lambda4={} p={} eta={} claims=[{}]  {}\n",
            e.name,
            e.model.dim_x,
            c.lambda0,
            c.lambda1,
            l2,
            c.lambda3,
            c.lambda4,
            c.p,
            c.eta,
            claims.join(","),
            e.description
        ));
    }
    out
}
