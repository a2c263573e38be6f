//! JSON run configuration and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use panda_core::engine::DEFAULT_REL_TOL;
use panda_core::simgen::{CovariateLaw, GlmScenario, GraphKind, PrecisionSpec};
use panda_core::{Convergence, NodeFamily, NoiseSpec, PandaConfig, Symmetrization};
use serde::{Deserialize, Serialize};

use crate::error::{validation, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FitGraph,
    FitGlm,
    Infer,
    Simulate,
    RocBench,
    CoverageBench,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Ns,
    Cd,
    Scio,
    Space,
    Gridge,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ns => "ns",
            Method::Cd => "cd",
            Method::Scio => "scio",
            Method::Space => "space",
            Method::Gridge => "gridge",
        }
    }
}

/// Column types of the input file. Columns not listed take `default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub default: NodeFamily,
    pub families: BTreeMap<String, NodeFamily>,
    /// Columns expanded into k-1 Bernoulli indicators.
    pub categorical: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            default: NodeFamily::Gaussian,
            families: BTreeMap::new(),
            categorical: Vec::new(),
        }
    }
}

impl Schema {
    pub fn family(&self, column: &str) -> NodeFamily {
        self.families.get(column).copied().unwrap_or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub graph: GraphKind,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    /// Gaussian data come from the precision matrix; Bernoulli and Poisson
    /// data from a Gibbs sampler on the same edge set.
    pub family: NodeFamily,
    pub precision: PrecisionSpec,
    pub intercept: f64,
    pub burnin: usize,
    pub thin: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            graph: GraphKind::Lattice {
                bandwidth: 1,
                target_edges: None,
            },
            p: 20,
            n: 100,
            seed: 0,
            family: NodeFamily::Gaussian,
            precision: PrecisionSpec::default(),
            intercept: 0.0,
            burnin: 1000,
            thin: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThirtyDef {
    pub family: NodeFamily,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioDef {
    Thirty { thirty_coefficients: ThirtyDef },
    Custom(Box<ScenarioBody>),
}

/// A scenario whose noise may come from the top-level `noise` instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBody {
    pub family: NodeFamily,
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub intercept: Option<f64>,
    pub covariates: CovariateLaw,
    #[serde(default = "one")]
    pub error_sd: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub scenario: ScenarioDef,
    pub replicates: usize,
}

impl CoverageSpec {
    pub fn build(&self, noise: Option<&NoiseSpec>) -> Result<GlmScenario, CliError> {
        match &self.scenario {
            ScenarioDef::Thirty {
                thirty_coefficients: t,
            } => {
                let noise = noise.ok_or_else(|| {
                    CliError::Validation("coverage-bench needs a noise specification".into())
                })?;
                Ok(GlmScenario::thirty_coefficients(
                    t.family,
                    t.n,
                    noise.clone(),
                    t.seed,
                ))
            }
            ScenarioDef::Custom(b) => {
                let noise = noise.or(b.noise.as_ref()).ok_or_else(|| {
                    CliError::Validation("coverage-bench needs a noise specification".into())
                })?;
                Ok(GlmScenario {
                    family: b.family,
                    n: b.n,
                    beta: b.beta.clone(),
                    intercept: b.intercept,
                    covariates: b.covariates,
                    error_sd: b.error_sd,
                    noise: noise.clone(),
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    /// Edge list of the true graph (roc-bench).
    pub truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub schema: Schema,
    pub standardize: bool,
    pub noise: Option<NoiseSpec>,
    /// Engine settings; commands pick their own defaults when absent.
    pub panda: Option<PandaConfig>,
    pub method: Method,
    pub lambda_grid: Vec<f64>,
    /// Response column (fit-glm, infer).
    pub response: Option<String>,
    /// Defaults to true for non-Gaussian responses.
    pub intercept: Option<bool>,
    pub level: f64,
    pub simulate: Option<SimulateSpec>,
    pub coverage: Option<CoverageSpec>,
    #[serde(skip)]
    pub overrides: EngineOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            input: None,
            truth: None,
            output: None,
            schema: Schema::default(),
            standardize: true,
            noise: None,
            panda: None,
            method: Method::Ns,
            lambda_grid: Vec::new(),
            response: None,
            intercept: None,
            level: 0.95,
            simulate: None,
            coverage: None,
            overrides: EngineOverrides::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvergenceFlag {
    Rel,
    Ztest,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SymmetrizeFlag {
    Intersection,
    Union,
}

/// Engine settings given on the command line. They win over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EngineOverrides {
    pub seed: Option<u64>,
    pub n_e: Option<usize>,
    pub window: Option<usize>,
    pub tau0: Option<f64>,
    pub banked: Option<usize>,
    pub max_iter: Option<usize>,
    pub convergence: Option<ConvergenceFlag>,
    pub alpha: Option<f64>,
    pub symmetrize: Option<SymmetrizeFlag>,
}

impl EngineOverrides {
    pub fn apply(&self, cfg: &mut PandaConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n_e {
            cfg.n_e = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.tau0 {
            cfg.tau0 = v;
        }
        if let Some(v) = self.banked {
            cfg.banked = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        match self.convergence {
            Some(ConvergenceFlag::Rel) => {
                cfg.convergence = Convergence::RelativeChange {
                    tol: DEFAULT_REL_TOL,
                }
            }
            Some(ConvergenceFlag::Ztest) => {
                cfg.convergence = Convergence::ZTest {
                    alpha: self.alpha.unwrap_or(0.05),
                }
            }
            Some(ConvergenceFlag::Off) => cfg.convergence = Convergence::Off,
            None => {
                if let (Some(a), Convergence::ZTest { .. }) = (self.alpha, cfg.convergence) {
                    cfg.convergence = Convergence::ZTest { alpha: a };
                }
            }
        }
        match self.symmetrize {
            Some(SymmetrizeFlag::Intersection) => cfg.symmetrization = Symmetrization::Intersection,
            Some(SymmetrizeFlag::Union) => cfg.symmetrization = Symmetrization::Union,
            None => {}
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Edge list of the true graph (roc-bench).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// `lasso:λ`, `ridge:λ`, `bridge:λ:γ`, `enet:λ:σ²`, `alasso:λ:γ`,
    /// `scad:λ:a`, or a JSON object.
    #[arg(long)]
    pub noise: Option<String>,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_e: Option<usize>,
    /// Moving-average window.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Banked iterations.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub convergence: Option<ConvergenceFlag>,
    /// Significance level of the z-test stopping rule.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub symmetrize: Option<SymmetrizeFlag>,
    /// Response column (fit-glm, infer).
    #[arg(long)]
    pub response: Option<String>,
    /// Confidence level of the intervals.
    #[arg(long)]
    pub level: Option<f64>,
}

/// Parses the compact `--noise` syntax.
pub fn parse_noise(s: &str) -> Result<NoiseSpec, CliError> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| CliError::Validation(format!("--noise: {e}")));
    }
    let mut parts = s.split(':');
    let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
    let nums = parts
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                CliError::Validation(format!("--noise: cannot parse '{v}' as a number"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let arity = |k: usize| -> Result<(), CliError> {
        if nums.len() == k {
            Ok(())
        } else {
            validation(format!(
                "--noise {kind} takes {k} number(s), got {}",
                nums.len()
            ))
        }
    };
    let spec = match kind.as_str() {
        "lasso" => {
            arity(1)?;
            NoiseSpec::lasso(nums[0])
        }
        "ridge" => {
            arity(1)?;
            NoiseSpec::ridge(nums[0])
        }
        "bridge" => {
            arity(2)?;
            NoiseSpec::Bridge {
                lambda: nums[0],
                gamma: nums[1],
            }
        }
        "enet" | "elastic_net" => {
            arity(2)?;
            NoiseSpec::ElasticNet {
                lambda: nums[0],
                sigma2: nums[1],
            }
        }
        "alasso" | "adaptive_lasso" => {
            arity(2)?;
            NoiseSpec::AdaptiveLasso {
                lambda: nums[0],
                gamma: nums[1],
                consistent: None,
            }
        }
        "scad" => {
            arity(2)?;
            NoiseSpec::Scad {
                lambda: nums[0],
                a: nums[1],
            }
        }
        _ => return validation(format!("--noise: unknown noise type '{kind}'")),
    };
    spec.validate(None)?;
    Ok(spec)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Loads `--config` if given, then lays the remaining flags over it.
    pub fn from_flags(command: Command, flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.command = Some(command);
        if let Some(v) = &flags.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &flags.truth {
            cfg.truth = Some(v.clone());
        }
        if let Some(v) = &flags.output {
            cfg.output = Some(v.clone());
        }
        if let Some(v) = flags.method {
            cfg.method = v;
        }
        if let Some(v) = &flags.noise {
            cfg.noise = Some(parse_noise(v)?);
        }
        if let Some(v) = &flags.lambda_grid {
            cfg.lambda_grid = v.clone();
        }
        if let Some(v) = &flags.response {
            cfg.response = Some(v.clone());
        }
        if let Some(v) = flags.level {
            cfg.level = v;
        }
        cfg.overrides = EngineOverrides {
            seed: flags.seed,
            n_e: flags.n_e,
            window: flags.m,
            tau0: flags.tau0,
            banked: flags.r,
            max_iter: flags.max_iter,
            convergence: flags.convergence,
            alpha: flags.alpha,
            symmetrize: flags.symmetrize,
        };
        Ok(cfg)
    }

    pub fn command(&self) -> Result<Command, CliError> {
        self.command
            .ok_or_else(|| CliError::Validation("no command given".into()))
    }

    /// Engine settings: the file's `panda` block or `base`, then the flags.
    pub fn engine(&self, base: PandaConfig) -> PandaConfig {
        let mut cfg = self.panda.clone().unwrap_or(base);
        self.overrides.apply(&mut cfg);
        cfg
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::Validation("no output directory given".into()))
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        let p = self
            .input
            .as_deref()
            .ok_or_else(|| CliError::Validation("no input file given".into()))?;
        if !p.is_file() {
            return validation(format!("input file {} does not exist", p.display()));
        }
        Ok(p)
    }

    pub fn truth_path(&self) -> Result<&Path, CliError> {
        let p = self
            .truth
            .as_deref()
            .ok_or_else(|| CliError::Validation("no truth file given".into()))?;
        if !p.is_file() {
            return validation(format!("truth file {} does not exist", p.display()));
        }
        Ok(p)
    }

    /// Noise for a single fit. A one-point λ grid replaces the λ.
    pub fn single_noise(&self) -> Result<NoiseSpec, CliError> {
        let spec = self
            .noise
            .clone()
            .ok_or_else(|| CliError::Validation("a noise specification is required".into()))?;
        match self.lambda_grid.as_slice() {
            [] => Ok(spec),
            [l] => Ok(spec.with_lambda(*l)),
            _ => validation("this command fits one λ; use roc-bench for a grid"),
        }
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let command = self.command()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return validation(format!("level {} must lie in (0, 1)", self.level));
        }
        if let Some(a) = self.overrides.alpha {
            if !(a > 0.0 && a < 1.0) {
                return validation(format!("alpha {a} must lie in (0, 1)"));
            }
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return validation("λ grid values must be finite and non-negative");
        }
        self.output_dir()?;
        match command {
            Command::FitGraph | Command::FitGlm | Command::Infer => {
                self.input_path()?;
                self.single_noise()?;
            }
            Command::RocBench => {
                self.input_path()?;
                self.truth_path()?;
                if self.noise.is_none() {
                    return validation("a noise specification is required");
                }
                if self.lambda_grid.len() < 2 {
                    return validation("roc-bench needs a λ grid with at least two values");
                }
            }
            Command::Simulate => {}
            Command::CoverageBench => {
                if self.coverage.is_none() {
                    return validation(
                        "coverage-bench needs a `coverage` block in the configuration",
                    );
                }
            }
        }
        if matches!(command, Command::FitGlm | Command::Infer) && self.response.is_none() {
            return validation("a response column is required");
        }
        Ok(())
    }
}
