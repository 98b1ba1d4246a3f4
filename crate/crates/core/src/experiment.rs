//! Config-driven experiments: preset instances, per-variant runs, the
//! artifacts they write and the comparison between variants.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.json                      resolved configuration
//! summary.json                     instance facts and one entry per run
//! comparison.csv                   rounds/scalars to each error threshold
//! <variant>/mixing/constraint-<e>.csv
//! <variant>/<form>/trace.csv
//! <variant>/<form>/report.json     step limits, rate constants, certificates
//! <variant>/<form>/summary.json
//! <variant>/<form>/state.json      final iterates
//! <variant>/<form>/plotdata/error_vs_round.csv
//! <variant>/<form>/plotdata/error_vs_comm.csv
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    kkt_residuals, rate_bound, step_size_limits, CertificateSummary, CertificateTracker,
    KktResiduals, RateBound, StepLimits,
};
use crate::combiners::CombinationSet;
use crate::error::Error;
use crate::oracle::{Method, ReferenceCache, ReferenceSolution, DEFAULT_TOL};
use crate::problem::generators::{
    economic_dispatch, logistic_experiment, random_instance, regression_experiment,
    two_agent_quadratic, LogisticParams, RandomInstanceOptions, RegressionParams,
};
use crate::problem::{content_hash, smoothness_params, ProblemFile, ProblemSpec, Smoothness};
use crate::solver::{
    communication_cost, flatten_to_single_constraint, run_observed, Context, Form, Init,
    RunOptions, RunResult, StepSizes, Trace,
};

/// Error levels reported in the comparison table.
pub const THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// Fraction of the convergence limits used by `"auto"` step sizes.
pub const AUTO_STEP_FRACTION: f64 = 0.9;

/// A registered instance generator.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// Hand-tuned `(μ_w, μ_v)`, used when the config does not choose steps.
    pub steps: Option<(f64, f64)>,
    /// Whether the geometric radius can be overridden.
    pub takes_radius: bool,
    build: fn(u64, Option<f64>) -> crate::Result<ProblemSpec>,
}

impl Preset {
    pub fn build(&self, seed: u64, radius: Option<f64>) -> crate::Result<ProblemSpec> {
        (self.build)(seed, radius)
    }
}

static PRESETS: [Preset; 5] = [
    Preset {
        name: "sparse-regression",
        description: "20 agents on a geometric graph (radius 0.3), L1-regularized least squares in 10 dimensions, \
                      one 3-row constraint per neighborhood",
        steps: Some((0.28, 0.28)),
        takes_radius: true,
        build: |seed, radius| {
            let mut p = RegressionParams::default();
            p.radius = radius.unwrap_or(p.radius);
            regression_experiment(&p, seed)
        },
    },
    Preset {
        name: "sparse-logistic",
        description: "20 agents on a geometric graph (radius 0.3), elastic-net logistic regression in 5 dimensions, \
                      one 3-row constraint per neighborhood",
        steps: Some((0.2, 0.2)),
        takes_radius: true,
        build: |seed, radius| {
            let mut p = LogisticParams::default();
            p.radius = radius.unwrap_or(p.radius);
            logistic_experiment(&p, seed)
        },
    },
    Preset {
        name: "two-agent-quadratic",
        description: "two scalar agents, J_k = (w_k - c_k)^2 / 2 with c = (1, 3), coupled by w_1 + w_2 = 2",
        steps: Some((0.1, 0.1)),
        takes_radius: false,
        build: |_, _| Ok(two_agent_quadratic()),
    },
    Preset {
        name: "economic-dispatch",
        description: "six nodes balancing generation and load in three overlapping areas, with capacity boxes",
        steps: None,
        takes_radius: false,
        build: |_, _| Ok(economic_dispatch()),
    },
    Preset {
        name: "random-instance",
        description: "random desk-scale quadratic instance with zero or L1 regularizers",
        steps: None,
        takes_radius: false,
        build: |seed, _| random_instance(seed, &RandomInstanceOptions::default()),
    },
];

pub fn presets() -> &'static [Preset] {
    &PRESETS
}

pub fn find_preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSource {
    Preset {
        name: String,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    /// A problem JSON file, relative to the config file.
    File {
        path: PathBuf,
    },
    Inline {
        spec: Box<ProblemFile>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKeyword {
    /// A fixed fraction of the convergence limits.
    Auto,
    /// The preset's hand-tuned values.
    Preset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepChoice {
    Keyword(StepKeyword),
    Explicit { mu_w: f64, mu_v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    /// Rewrite all constraints as one over the whole network first.
    #[serde(default)]
    pub flatten: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<StepChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Cache directory; defaults to `<output>/oracle-cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            cache: None,
            enabled: true,
        }
    }
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_true() -> bool {
    true
}

fn default_forms() -> Vec<Form> {
    vec![Form::Agent]
}

fn default_rounds() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    #[serde(default = "default_forms")]
    pub forms: Vec<Form>,
    /// Default steps for every variant; when absent, the preset's values or `"auto"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<StepChoice>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Empty means a single unflattened variant named `structured`.
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub init: Init,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Check the per-round Lyapunov, primal/dual and rate certificates.
    #[serde(default = "default_true")]
    pub certificates: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub forms: Option<Vec<Form>>,
    pub rounds: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> crate::Result<Self> {
        let mut c: Self =
            serde_json::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// A config for a preset with default settings.
    pub fn for_preset(name: &str, seed: u64) -> crate::Result<Self> {
        let c = Self {
            problem: ProblemSource::Preset {
                name: name.into(),
                seed,
                radius: None,
            },
            forms: default_forms(),
            steps: None,
            rounds: default_rounds(),
            output: None,
            variants: Vec::new(),
            init: Init::Zero,
            stop_below: None,
            oracle: OracleConfig::default(),
            certificates: true,
            base_dir: PathBuf::from("."),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) -> crate::Result<()> {
        if let Some(s) = o.seed {
            match &mut self.problem {
                ProblemSource::Preset { seed, .. } => *seed = s,
                _ => return Err(config_err("--seed applies only to preset problem sources")),
            }
        }
        if let Some(out) = &o.out {
            self.output = Some(out.clone());
        }
        if let Some(f) = &o.forms {
            self.forms = f.clone();
        }
        if let Some(r) = o.rounds {
            self.rounds = r;
        }
        self.validate()
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let ProblemSource::Preset { name, radius, .. } = &self.problem {
            let preset = find_preset(name).ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                config_err(format!(
                    "unknown preset `{name}`; known presets: {}",
                    known.join(", ")
                ))
            })?;
            if let Some(r) = radius {
                if !preset.takes_radius {
                    return Err(config_err(format!(
                        "preset `{name}` has no radius parameter"
                    )));
                }
                if !(*r > 0.0 && *r <= std::f64::consts::SQRT_2) {
                    return Err(config_err(format!("radius must lie in (0, √2], got {r}")));
                }
            }
        }
        if self.forms.is_empty() {
            return Err(config_err("at least one solver form is required"));
        }
        if self.forms.iter().collect::<HashSet<_>>().len() != self.forms.len() {
            return Err(config_err("solver forms must be distinct"));
        }
        let mut names = HashSet::new();
        for v in self.variants() {
            let safe = !v.name.is_empty()
                && v.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !safe {
                return Err(config_err(format!(
                    "variant name `{}` must be non-empty ASCII letters, digits, `-` or `_`",
                    v.name
                )));
            }
            if !names.insert(v.name.clone()) {
                return Err(config_err(format!("duplicate variant name `{}`", v.name)));
            }
        }
        for choice in self
            .variants()
            .iter()
            .filter_map(|v| v.steps)
            .chain(self.steps)
        {
            match choice {
                StepChoice::Explicit { mu_w, mu_v } => {
                    StepSizes::new(mu_w, mu_v).map_err(|e| config_err(e.to_string()))?;
                }
                StepChoice::Keyword(StepKeyword::Preset) => {
                    let has = matches!(&self.problem, ProblemSource::Preset { name, .. }
                        if find_preset(name).is_some_and(|p| p.steps.is_some()));
                    if !has {
                        return Err(config_err(
                            "`\"preset\"` steps need a preset with hand-tuned step sizes",
                        ));
                    }
                }
                StepChoice::Keyword(StepKeyword::Auto) => {}
            }
        }
        if let Some(t) = self.stop_below {
            if !(t > 0.0) {
                return Err(config_err(format!("stop_below must be positive, got {t}")));
            }
        }
        if !(self.oracle.tol > 0.0) {
            return Err(config_err(format!(
                "oracle tolerance must be positive, got {}",
                self.oracle.tol
            )));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<VariantConfig> {
        if self.variants.is_empty() {
            vec![VariantConfig {
                name: "structured".into(),
                flatten: false,
                steps: None,
            }]
        } else {
            self.variants.clone()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.base_dir.join(p),
            None => self.base_dir.join("out"),
        }
    }

    pub fn preset(&self) -> Option<&'static Preset> {
        match &self.problem {
            ProblemSource::Preset { name, .. } => find_preset(name),
            _ => None,
        }
    }

    pub fn build_problem(&self) -> crate::Result<ProblemSpec> {
        let built = match &self.problem {
            ProblemSource::Preset { name, seed, radius } => find_preset(name)
                .ok_or_else(|| config_err(format!("unknown preset `{name}`")))?
                .build(*seed, *radius),
            ProblemSource::File { path } => {
                let path = self.base_dir.join(path);
                let text = fs::read_to_string(&path).map_err(|e| {
                    config_err(format!("cannot read problem file {}: {e}", path.display()))
                })?;
                ProblemFile::from_json(&text).and_then(|f| f.to_problem(path.parent()))
            }
            ProblemSource::Inline { spec } => spec.to_problem(Some(&self.base_dir)),
        };
        built.map_err(|e| match e {
            Error::Config(_) => e,
            other => config_err(format!("cannot build the problem: {other}")),
        })
    }

    /// Steps for a variant of `problem`.
    pub fn resolve_steps(
        &self,
        variant: &VariantConfig,
        problem: &ProblemSpec,
    ) -> crate::Result<StepSizes> {
        let preset_steps = self.preset().and_then(|p| p.steps);
        let choice = variant.steps.or(self.steps).unwrap_or(match preset_steps {
            Some(_) => StepChoice::Keyword(StepKeyword::Preset),
            None => StepChoice::Keyword(StepKeyword::Auto),
        });
        match choice {
            StepChoice::Explicit { mu_w, mu_v } => StepSizes::new(mu_w, mu_v),
            StepChoice::Keyword(StepKeyword::Preset) => {
                let (w, v) = preset_steps
                    .ok_or_else(|| config_err("the preset has no hand-tuned step sizes"))?;
                StepSizes::new(w, v)
            }
            StepChoice::Keyword(StepKeyword::Auto) => {
                let l = step_size_limits(problem)
                    .map_err(|e| config_err(format!("\"auto\" steps: {e}")))?;
                let mu_v = if l.mu_v_max.is_finite() {
                    AUTO_STEP_FRACTION * l.mu_v_max
                } else {
                    1.0
                };
                StepSizes::new(AUTO_STEP_FRACTION * l.mu_w_max, mu_v)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error("oracle failure: {0}")]
    Oracle(Error),
    #[error("{0}")]
    Mismatch(Error),
    #[error("cannot write artifacts: {0}")]
    Output(Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Mismatch(_) => 2,
            ExperimentError::Oracle(_) => 4,
            ExperimentError::Output(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub round: Option<usize>,
    pub comm_scalars: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceInfo {
    pub method: Method,
    pub achieved: f64,
    pub duals_unique: bool,
    pub tol: f64,
    pub content_hash: String,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub variant: String,
    pub form: Form,
    pub steps: StepSizes,
    /// Absent when the cost is not strongly convex.
    pub step_limits: Option<StepLimits>,
    pub steps_within_limits: bool,
    pub smoothness: Smoothness,
    pub lambda_min_bbt: f64,
    pub lambda_max_btb: f64,
    pub one_minus_lambda_r: f64,
    pub rate: RateBound,
    pub reference: Option<ReferenceInfo>,
    pub certificates: Option<CertificateSummary>,
    pub certificates_skipped: Option<String>,
    /// At the final iterate.
    pub final_kkt: KktResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub form: Form,
    pub flattened: bool,
    pub steps: StepSizes,
    pub rounds_requested: usize,
    pub rounds_completed: usize,
    pub stopped_early: bool,
    /// Divergence diagnostic; the run produced no trace.
    pub diverged: Option<String>,
    pub one_minus_lambda_r: f64,
    pub comm_per_round: u64,
    pub total_comm_scalars: u64,
    pub final_rel_error: Option<f64>,
    pub absolute_error: bool,
    pub final_constraint_residual: Option<f64>,
    pub final_consensus_residual: Option<f64>,
    /// Largest deviation of a dual copy from its constraint's average.
    pub final_max_consensus_deviation: Option<f64>,
    pub thresholds: Vec<ThresholdHit>,
    pub certificates_passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub content_hash: String,
    pub agents: usize,
    pub constraints: usize,
    pub primal_dim: usize,
    pub dual_dim: usize,
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn diverged(&self) -> bool {
        self.runs.iter().any(|r| r.diverged.is_some())
    }

    pub fn run(&self, variant: &str, form: Form) -> Option<&RunSummary> {
        self.runs
            .iter()
            .find(|r| r.variant == variant && r.form == form)
    }

    /// One row per run: rounds and scalars needed for each threshold.
    pub fn comparison_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<8} {:>10} {:>12}",
            "variant", "form", "1-λ_r", "scalars/rnd"
        );
        for t in THRESHOLDS {
            out += &format!(
                " {:>9} {:>13}",
                format!("rnd<{t:.0e}"),
                format!("scal<{t:.0e}")
            );
        }
        out.push('\n');
        let cell = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.runs {
            out += &format!(
                "{:<16} {:<8} {:>10.6} {:>12}",
                r.variant,
                r.form.name(),
                r.one_minus_lambda_r,
                r.comm_per_round
            );
            for h in &r.thresholds {
                out += &format!(
                    " {:>9} {:>13}",
                    cell(h.round.map(|x| x.to_string())),
                    cell(h.comm_scalars.map(|x| x.to_string()))
                );
            }
            if let Some(d) = &r.diverged {
                out += &format!("  diverged: {}", d.split(';').next().unwrap_or(d));
            }
            out.push('\n');
        }
        out
    }

    fn write_comparison_csv(&self, path: &Path) -> crate::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "variant".to_string(),
            "form".into(),
            "one_minus_lambda_r".into(),
            "comm_per_round".into(),
        ];
        for t in THRESHOLDS {
            header.push(format!("rounds_to_{t:e}"));
            header.push(format!("comm_to_{t:e}"));
        }
        header.push("diverged".into());
        w.write_record(&header)?;
        for r in &self.runs {
            let mut row = vec![
                r.variant.clone(),
                r.form.name().into(),
                r.one_minus_lambda_r.to_string(),
                r.comm_per_round.to_string(),
            ];
            for h in &r.thresholds {
                row.push(h.round.map(|x| x.to_string()).unwrap_or_default());
                row.push(h.comm_scalars.map(|x| x.to_string()).unwrap_or_default());
            }
            row.push(r.diverged.is_some().to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct StateFile<'a> {
    round: Option<usize>,
    w: Vec<Vec<f64>>,
    y: &'a [f64],
    x: &'a [f64],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_plotdata(dir: &Path, trace: &Trace) -> crate::Result<()> {
    fs::create_dir_all(dir)?;
    let mut by_round = csv::Writer::from_path(dir.join("error_vs_round.csv"))?;
    let mut by_comm = csv::Writer::from_path(dir.join("error_vs_comm.csv"))?;
    by_round.write_record(["round", "rel_error"])?;
    by_comm.write_record(["comm_scalars", "rel_error"])?;
    for r in &trace.records {
        let e = r.rel_error.map(|e| e.to_string()).unwrap_or_default();
        by_round.write_record([r.round.to_string(), e.clone()])?;
        by_comm.write_record([r.comm_scalars.to_string(), e])?;
    }
    by_round.flush()?;
    by_comm.flush()?;
    Ok(())
}

fn threshold_hits(trace: &Trace) -> Vec<ThresholdHit> {
    THRESHOLDS
        .iter()
        .map(|&t| {
            let hit = trace.first_below(t);
            ThresholdHit {
                threshold: t,
                round: hit.map(|r| r.round),
                comm_scalars: hit.map(|r| r.comm_scalars),
            }
        })
        .collect()
}

/// Runs every variant and form of `config`, writing artifacts under its
/// output directory. Divergent runs are recorded in the summary rather than
/// aborting the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    let base = config.build_problem().map_err(ExperimentError::Config)?;
    let out = config.output_dir();
    let io = ExperimentError::Output;
    fs::create_dir_all(&out).map_err(|e| io(e.into()))?;
    write_json(&out.join("config.json"), config).map_err(io)?;

    let hash = content_hash(&base);
    let cache = ReferenceCache::new(
        config
            .oracle
            .cache
            .as_ref()
            .map_or_else(|| out.join("oracle-cache"), |c| config.base_dir.join(c)),
    );
    let base_solution = if config.oracle.enabled {
        let (s, hit) = cache
            .get_or_solve(&base, config.oracle.tol)
            .map_err(|e| match e {
                Error::Io(_) | Error::Json(_) => ExperimentError::Output(e),
                other => ExperimentError::Oracle(other),
            })?;
        Some((s, hit))
    } else {
        None
    };

    let mut runs = Vec::new();
    for variant in config.variants() {
        let problem = if variant.flatten {
            flatten_to_single_constraint(&base).map_err(ExperimentError::Config)?
        } else {
            base.clone()
        };
        let set = CombinationSet::metropolis(&problem.subnetworks(), &problem.block_sizes())
            .map_err(ExperimentError::Config)?;
        let sd = &set.spectral;
        let steps = config
            .resolve_steps(&variant, &problem)
            .map_err(ExperimentError::Config)?;
        let ctx = Context::new(&problem, &set, steps).map_err(ExperimentError::Config)?;

        let solution: Option<(ReferenceSolution, bool)> = base_solution.as_ref().map(|(s, hit)| {
            let s = if variant.flatten && problem.constraint_count() == 1 {
                s.flattened()
            } else {
                s.clone()
            };
            (s, *hit)
        });
        let reference = match &solution {
            Some((s, _)) => {
                let r = s
                    .reference(&problem, sd)
                    .map_err(ExperimentError::Mismatch)?;
                let k = kkt_residuals(&problem, sd, &r.w, &r.y);
                let allowed = 10.0 * config.oracle.tol.max(s.achieved);
                if k.stationarity.max(k.max_feasibility()) > allowed {
                    return Err(ExperimentError::Mismatch(Error::MismatchedVariants(
                        format!(
                            "the reference solution does not solve variant `{}` (residual {:e})",
                            variant.name,
                            k.max()
                        ),
                    )));
                }
                Some(r)
            }
            None => None,
        };

        let vdir = out.join(&variant.name);
        let mdir = vdir.join("mixing");
        fs::create_dir_all(&mdir).map_err(|e| io(e.into()))?;
        for m in &set.matrices {
            let f = fs::File::create(mdir.join(format!("constraint-{}.csv", m.constraint + 1)))
                .map_err(|e| io(e.into()))?;
            m.write_csv(f).map_err(io)?;
        }

        let limits = step_size_limits(&problem).ok();
        for &form in &config.forms {
            let opts = RunOptions {
                rounds: config.rounds,
                init: config.init,
                stop_below: config.stop_below,
                record_snapshots: false,
            };
            let mut tracker = match (&reference, config.certificates) {
                (Some(r), true) => CertificateTracker::new(&problem, sd, r, steps),
                _ => None,
            };
            let certificates_skipped = match (&reference, config.certificates) {
                (_, false) => Some("disabled in the config".to_string()),
                (None, true) => Some("no reference solution".to_string()),
                (Some(_), true) if tracker.is_none() => {
                    Some("multipliers are not unique".to_string())
                }
                _ => None,
            };
            let result = run_observed(&ctx, form, &opts, reference.as_ref(), &mut |s| {
                if let Some(t) = tracker.as_mut() {
                    t.observe(s);
                }
            });
            let certificates = tracker.map(|t| t.finish());
            let rdir = vdir.join(form.name());
            fs::create_dir_all(&rdir).map_err(|e| io(e.into()))?;
            let per_round = communication_cost(&problem) as u64;
            let mut summary = RunSummary {
                variant: variant.name.clone(),
                form,
                flattened: variant.flatten,
                steps,
                rounds_requested: config.rounds,
                rounds_completed: 0,
                stopped_early: false,
                diverged: None,
                one_minus_lambda_r: sd.one_minus_lambda_r(),
                comm_per_round: per_round,
                total_comm_scalars: 0,
                final_rel_error: None,
                absolute_error: false,
                final_constraint_residual: None,
                final_consensus_residual: None,
                final_max_consensus_deviation: None,
                thresholds: Vec::new(),
                certificates_passed: None,
            };
            match result {
                Ok(RunResult {
                    trace,
                    final_state,
                    rounds_completed,
                    stopped_early,
                    ..
                }) => {
                    trace.write_csv(&rdir.join("trace.csv")).map_err(io)?;
                    write_plotdata(&rdir.join("plotdata"), &trace).map_err(io)?;
                    let report = AnalysisReport {
                        variant: variant.name.clone(),
                        form,
                        steps,
                        step_limits: limits,
                        steps_within_limits: limits.is_some_and(|l| l.admits(steps)),
                        smoothness: smoothness_params(&problem),
                        lambda_min_bbt: problem.coupling_lambda_min(),
                        lambda_max_btb: problem.coupling_lambda_max(),
                        one_minus_lambda_r: sd.one_minus_lambda_r(),
                        rate: rate_bound(&problem, sd, steps),
                        reference: solution.as_ref().map(|(s, hit)| ReferenceInfo {
                            method: s.method,
                            achieved: s.achieved,
                            duals_unique: s.duals_unique,
                            tol: config.oracle.tol,
                            content_hash: hash.clone(),
                            from_cache: *hit,
                        }),
                        certificates: certificates.clone(),
                        certificates_skipped,
                        final_kkt: kkt_residuals(&problem, sd, &final_state.w, &final_state.y),
                    };
                    write_json(&rdir.join("report.json"), &report).map_err(io)?;
                    write_json(
                        &rdir.join("state.json"),
                        &StateFile {
                            round: rounds_completed.checked_sub(1),
                            w: problem
                                .split_primal(&final_state.w)
                                .iter()
                                .map(|v| v.as_slice().to_vec())
                                .collect(),
                            y: final_state.y.as_slice(),
                            x: final_state.x.as_slice(),
                        },
                    )
                    .map_err(io)?;
                    let last = trace.last();
                    summary.rounds_completed = rounds_completed;
                    summary.stopped_early = stopped_early;
                    summary.total_comm_scalars = last.map_or(0, |r| r.comm_scalars);
                    summary.final_rel_error = last.and_then(|r| r.rel_error);
                    summary.absolute_error = trace.absolute_error;
                    summary.final_constraint_residual = last.map(|r| r.constraint_residual);
                    summary.final_consensus_residual = last.map(|r| r.consensus_residual);
                    summary.final_max_consensus_deviation =
                        last.map(|_| sd.max_consensus_deviation(&final_state.y));
                    summary.thresholds = threshold_hits(&trace);
                    summary.certificates_passed =
                        certificates.as_ref().map(CertificateSummary::all_passed);
                }
                Err(Error::Divergence { round, diagnostic }) => {
                    summary.rounds_completed = round;
                    summary.diverged = Some(format!("round {round}: {diagnostic}"));
                    summary.thresholds = threshold_hits(&Trace::default());
                }
                Err(other) => return Err(ExperimentError::Config(other)),
            }
            write_json(&rdir.join("summary.json"), &summary).map_err(io)?;
            runs.push(summary);
        }
    }

    let summary = ExperimentSummary {
        content_hash: hash,
        agents: base.agent_count(),
        constraints: base.constraint_count(),
        primal_dim: base.primal_dim(),
        dual_dim: base.dual_dim(),
        runs,
    };
    write_json(&out.join("summary.json"), &summary).map_err(io)?;
    summary
        .write_comparison_csv(&out.join("comparison.csv"))
        .map_err(io)?;
    Ok(summary)
}

/// [`run_experiment`] for configs that compare at least two variants.
pub fn compare(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    if config.variants().len() < 2 {
        return Err(ExperimentError::Config(config_err(
            "compare needs at least two variants",
        )));
    }
    run_experiment(config)
}
