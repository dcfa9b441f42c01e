//! Experiment configuration files (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use msde_core::coupling::TestFunction;
use msde_core::ergodicity::Observable;
use msde_core::model::Hypothesis;
use msde_core::zoo;
use msde_core::{ModelSpec, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of a built-in model; exclusive with `[model]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub sim: SimConfig,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub report_format: ReportFormat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    #[default]
    #[serde(rename = "csv+json")]
    CsvJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Simulate(SimulateExp),
    Pinned(PinnedExp),
    Couple(CoupleExp),
    Strongfeller(StrongFellerExp),
    Irreducibility(IrreducibilityExp),
    Invariant(InvariantExp),
    Tvdecay(TvDecayExp),
    Moments(MomentsExp),
    Observable(ObservableExp),
    Checkhyp(CheckHypExp),
    Converge(ConvergeExp),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Pinned(_) => "pinned",
            Experiment::Couple(_) => "couple",
            Experiment::Strongfeller(_) => "strongfeller",
            Experiment::Irreducibility(_) => "irreducibility",
            Experiment::Invariant(_) => "invariant",
            Experiment::Tvdecay(_) => "tvdecay",
            Experiment::Moments(_) => "moments",
            Experiment::Observable(_) => "observable",
            Experiment::Checkhyp(_) => "checkhyp",
            Experiment::Converge(_) => "converge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateExp {
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedExp {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub m: f64,
    /// Defaults to the model's `lambda1`.
    #[serde(default)]
    pub lambda1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleExp {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub eps_couple: Option<f64>,
    #[serde(default)]
    pub localization_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongFellerExp {
    pub x0: Vec<f64>,
    pub direction: Vec<f64>,
    pub separations: Vec<f64>,
    pub test_function: TestFunction,
    #[serde(default)]
    pub common_random_numbers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrreducibilityExp {
    pub x0: Vec<f64>,
    pub target: Vec<f64>,
    pub radius: f64,
    pub m: f64,
}

/// Histogram box `[lower, upper]`; `bins` per dimension defaults to the cube-root rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantExp {
    pub x0: Vec<f64>,
    pub burn_in: f64,
    pub sample: f64,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvDecayExp {
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    /// Reference occupation measure: paths, burn-in and sampling window.
    pub reference_paths: usize,
    pub burn_in: f64,
    pub sample: f64,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsExp {
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableExp {
    pub observable: Observable,
    pub q: f64,
    pub times: Vec<f64>,
    pub n_outer: usize,
    pub x0: Vec<f64>,
    pub reference_paths: usize,
    pub burn_in: f64,
    pub sample: f64,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckHypExp {
    /// Defaults to the zoo entry's claims, or all four for a custom model.
    #[serde(default)]
    pub hypotheses: Option<Vec<Hypothesis>>,
    pub n_samples: usize,
    /// Defaults to the zoo entry's radius, or 5.
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeExp {
    pub x0: Vec<f64>,
    pub base_h: f64,
    pub levels: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn resolved_model(&self) -> anyhow::Result<ModelSpec> {
        match (&self.zoo, &self.model) {
            (Some(name), None) => Ok(zoo::by_name(name).with_context(|| format!("unknown zoo model `{name}`"))?.model),
            (None, Some(m)) => Ok(m.clone()),
            (Some(_), Some(_)) => bail!("give either `zoo` or `[model]`, not both"),
            (None, None) => bail!("missing model: give `zoo = \"name\"` or a `[model]` block"),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let model = self.resolved_model()?;
        model.validate().context("in [model]")?;
        self.sim.validate().context("in [sim]")?;
        if let Experiment::Couple(_) = &self.experiment {
            if model.constants.lambda2.is_none() {
                bail!("experiment `couple` needs `lambda2` in [model.constants]");
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the artifacts; the output location is excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        msde_core::fingerprint(&c)
    }
}

/// Text of the `schema` subcommand.
pub const SCHEMA: &str = r#"# Experiment config (TOML). Unknown keys are errors.
#
# zoo = "ou"                 # built-in model (see list-models), or a [model] block:
# [model]
# dim_x = 1
# dim_w = 1
# operator = { kind = "zero" }
#   | { kind = "linear_psd", matrix = [[..]] }
#   | { kind = "normal_cone", set = { kind = "box", lower = [..], upper = [..] } }
#   |                                 { kind = "ball", center = [..], radius = r }
#   |                                 { kind = "half_space", normal = [..], offset = c }   # <n,x> <= c
#   | { kind = "subdiff_power", coefficient = c, exponent = q }                          # A = ∂(c|x|^q/q)
# drift = { kind = "linear", matrix = [[..]] }                                           # b = -Bx
#   | { kind = "poly_confining", c1 = c, exponent = r, matrix = [[..]] }                 # b = -c|x|^(r-1)x - Bx
#   | { kind = "constant", vector = [..] }
# diffusion = { kind = "constant_matrix", matrix = [[..]] }                              # d x n
#   | { kind = "diagonal_affine", s0 = a, s1 = b }                                       # σ_ii = a + b/(1+|x|²)
# [model.constants]
# lambda0, lambda1, lambda2 (optional), lambda3, lambda4, p, eta
#
# [sim]
# step_h, horizon_t, n_paths, master_seed (u64)
# scheme = { kind = "resolvent_split" } | { kind = "yosida_euler", lambda_n = l }   # optional
# record_stride = k                                                                # optional, default 1
#
# output_dir = "dir"          # optional; overridden by --output
# report_format = "csv+json"  # optional, the only format
#
# exactly one experiment block:
# [experiment.simulate]        x0
# [experiment.pinned]          x0, y0, m, lambda1?
# [experiment.couple]          x0, y0, alpha?, eps_couple?, localization_radius?
# [experiment.strongfeller]    x0, direction, separations, common_random_numbers?,
#                              test_function = { kind = "smoothed_ball", center, radius, width }
#                                            | { kind = "tanh_coord", coord } | { kind = "sign_first" }
# [experiment.irreducibility]  x0, target, radius, m
# [experiment.invariant]       x0, burn_in, sample, grid = { lower, upper, bins? }
# [experiment.tvdecay]         x0, times, reference_paths, burn_in, sample, grid
# [experiment.moments]         x0, times
# [experiment.observable]      observable = { kind = "tanh", coord } | { kind = "clipped_poly", coord, degree, clip }
#                                         | { kind = "constant", value },
#                              q, times, n_outer, x0, reference_paths, burn_in, sample, grid
# [experiment.checkhyp]        n_samples, hypotheses? (["H1".."H4"]), radius?
# [experiment.converge]        x0, base_h, levels
"#;
