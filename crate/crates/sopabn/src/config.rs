//! Experiment configuration: a TOML document with one model block, an output
//! selector, an algorithm block and optional experiment blocks.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sopabn_core::allocation::{AllocationBudget, GroupRule, PointSampler};
use sopabn_core::estimators::NestedBudget;
use sopabn_core::feedback::{DilutionPolicy, FeedbackFamily, FeedbackModel, FeedbackParams, PhCorrelation};
use sopabn_core::linear::{LinearFamily, LinearModelParams, LinearPolicyReward};
use sopabn_core::sampling::{derive_seed, ParameterPosterior};
use sopabn_core::{Dims, ModelFamily, OutputSelector, ResidualLaw};

const LABEL_SCRAMBLE: u64 = 0x5c;
const LABEL_TRUTH: u64 = 0x7e;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Model(#[from] sopabn_core::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub macro_replications: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependence: Option<DependenceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.1
}

fn default_group_size() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Linear(LinearConfig),
    Feedback(FeedbackConfig),
}

/// Linear Gaussian model. Matrices are lists of rows; per-period lists run
/// over `t = 1..H` (`mu_s`, `m`, `b`, `c`) or `t = 1..H-1` (the rest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub mu_s: Vec<Vec<f64>>,
    pub mu_a: Vec<Vec<f64>>,
    /// `d_s × d_s` per transition.
    pub beta_s: Vec<Vec<Vec<f64>>>,
    /// `d_a × d_s` per transition.
    pub beta_a: Vec<Vec<Vec<f64>>>,
    /// `d_s × d_a` per decision period.
    pub theta: Vec<Vec<Vec<f64>>>,
    pub m: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// Residual covariance over the flat input order.
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackConfig {
    pub horizon: usize,
    pub initial_state: [f64; 3],
    pub growth_rate: f64,
    pub conversion_rate: f64,
    pub death_rate: f64,
    pub inhibitor_production: f64,
    pub inhibitor_sensitivity: f64,
    pub inhibitor_threshold: f64,
    pub period_length: f64,
    pub step: f64,
    /// Constant dilution fraction, used when `fractions` is absent.
    pub fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    pub dilution_cost: f64,
    pub product_value: f64,
    pub loadings: [f64; 3],
    pub ph_variance: f64,
    pub idiosyncratic: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorConfig>,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        let p = FeedbackParams::default();
        let c = PhCorrelation::default();
        FeedbackConfig {
            horizon: 5,
            initial_state: [1.0, 0.0, 0.0],
            growth_rate: p.growth_rate,
            conversion_rate: p.conversion_rate,
            death_rate: p.death_rate,
            inhibitor_production: p.inhibitor_production,
            inhibitor_sensitivity: p.inhibitor_sensitivity,
            inhibitor_threshold: p.inhibitor_threshold,
            period_length: p.period_length,
            step: p.step,
            fraction: 0.5,
            fractions: None,
            dilution_cost: 0.1,
            product_value: 1.0,
            loadings: c.loadings,
            ph_variance: c.ph_variance,
            idiosyncratic: c.idiosyncratic,
            posterior: None,
        }
    }
}

/// Gaussian posterior over selected slots of the family's flat parameter
/// vector. Give either `std_dev` (independent slots) or `covariance`; the mean
/// defaults to the configured parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub slots: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_dev: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectorConfig {
    #[default]
    CumulativeReward,
    /// State component `n` of period `t`, both 1-based.
    State { period: usize, component: usize },
}

impl From<SelectorConfig> for OutputSelector {
    fn from(s: SelectorConfig) -> Self {
        match s {
            SelectorConfig::CumulativeReward => OutputSelector::CumulativeReward,
            SelectorConfig::State { period, component } => OutputSelector::StateComponent { period, component },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    Alg1(Alg1Config),
    Alg2(Alg2Config),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alg1Config {
    #[serde(alias = "K")]
    pub parameter_draws: usize,
    #[serde(alias = "M")]
    pub permutations: usize,
    #[serde(alias = "N_O")]
    pub outer: usize,
    #[serde(alias = "N_I")]
    pub inner: usize,
    /// Level of the reported intervals.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Alg1Config {
    pub fn budget(&self) -> NestedBudget {
        NestedBudget::new(self.parameter_draws, self.permutations, self.outer, self.inner)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Mc,
    Qmc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRuleKind {
    #[default]
    Unbiased,
    LeftmostPrefix,
}

impl From<GroupRuleKind> for GroupRule {
    fn from(k: GroupRuleKind) -> Self {
        match k {
            GroupRuleKind::Unbiased => GroupRule::Unbiased,
            GroupRuleKind::LeftmostPrefix => GroupRule::LeftmostPrefix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alg2Config {
    #[serde(alias = "N")]
    pub iterations: u64,
    #[serde(alias = "N_0")]
    pub pilot: u64,
    #[serde(alias = "m", default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub sampler: SamplerKind,
    /// Scrambling seed for the QMC sampler; derived from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scramble_seed: Option<u64>,
    #[serde(default)]
    pub freeze_sigma: bool,
    #[serde(default)]
    pub group_rule: GroupRuleKind,
    /// Stop once this many trajectory simulations are spent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation_cap: Option<u64>,
}

impl Alg2Config {
    pub fn budget(&self) -> AllocationBudget {
        AllocationBudget {
            freeze_sigma: self.freeze_sigma,
            group_rule: self.group_rule.into(),
            simulation_cap: self.simulation_cap,
            ..AllocationBudget::new(self.iterations, self.pilot, self.group_size, self.alpha)
        }
    }

    pub fn point_sampler(&self, seed: u64) -> PointSampler {
        match self.sampler {
            SamplerKind::Mc => PointSampler::MonteCarlo,
            SamplerKind::Qmc => PointSampler::Qmc {
                scramble_seed: self.scramble_seed.unwrap_or_else(|| derive_seed(seed, &[LABEL_SCRAMBLE])),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(alias = "K_truth")]
    pub k_truth: usize,
    /// Seed of the posterior draws; derived from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TruthConfig {
    pub fn seed(&self, run_seed: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(run_seed, &[LABEL_TRUTH]))
    }
}

/// Algorithm 1 level ratios `K:M:N_O:N_I`, each scaled to a nominal budget
/// `K·M·N_O·N_I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub budget: u64,
    pub ratios: Vec<[u64; 4]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Alg1,
    Alg2Mc,
    Alg2Qmc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Alg1 => "alg1",
            Method::Alg2Mc => "alg2_mc",
            Method::Alg2Qmc => "alg2_qmc",
        }
    }
}

/// Matched-budget comparison; budgets count trajectory simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub budgets: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_alg1_ratio")]
    pub alg1_ratio: [u64; 4],
    /// Share of the budget spent in the Algorithm 2 pilot.
    #[serde(default = "default_pilot_fraction")]
    pub pilot_fraction: f64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Alg1, Method::Alg2Mc]
}

fn default_alg1_ratio() -> [u64; 4] {
    [6, 3, 6, 1]
}

fn default_pilot_fraction() -> f64 {
    0.02
}

/// Loading vectors `l = (l^S, l^P, l^I)` of the PH factor; the algorithm block
/// must be `alg2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceConfig {
    pub levels: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
    /// File stem; the subcommand name when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            format: OutputFormat::Both,
            stem: None,
        }
    }
}

/// A model family ready for the estimators.
#[derive(Clone, Debug)]
pub enum Instance {
    Linear(LinearFamily),
    Feedback(FeedbackFamily),
}

impl Instance {
    pub fn dims(&self) -> Dims {
        match self {
            Instance::Linear(f) => f.dims(),
            Instance::Feedback(f) => f.dims(),
        }
    }

    pub fn base_parameters(&self) -> Vec<f64> {
        match self {
            Instance::Linear(f) => f.base_parameters(),
            Instance::Feedback(f) => f.base_parameters(),
        }
    }
}

fn vector(what: &str, v: &[f64], len: usize) -> Result<DVector<f64>, ConfigError> {
    if v.len() != len {
        return invalid(format!("{what}: expected {len} entries, found {}", v.len()));
    }
    Ok(DVector::from_column_slice(v))
}

fn matrix(what: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return invalid(format!("{what}: expected a {nr}x{nc} matrix"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn per_period<T, U>(
    what: &str,
    items: &[T],
    count: usize,
    build: impl Fn(&str, &T) -> Result<U, ConfigError>,
) -> Result<Vec<U>, ConfigError> {
    if items.len() != count {
        return invalid(format!("{what}: expected {count} periods, found {}", items.len()));
    }
    items.iter().map(|x| build(what, x)).collect()
}

impl LinearConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            state: self.state_dim,
            action: self.action_dim,
            horizon: self.horizon,
        }
    }

    pub fn build(&self) -> Result<LinearFamily, ConfigError> {
        let (ds, da, h) = (self.state_dim, self.action_dim, self.horizon);
        if ds < 1 || da < 1 || h < 2 {
            return invalid("linear model needs state_dim >= 1, action_dim >= 1, horizon >= 2");
        }
        let de = ds * h;
        let params = LinearModelParams {
            dims: self.dims(),
            mu_s: per_period("mu_s", &self.mu_s, h, |w, v| vector(w, v, ds))?,
            mu_a: per_period("mu_a", &self.mu_a, h - 1, |w, v| vector(w, v, da))?,
            beta_s: per_period("beta_s", &self.beta_s, h - 1, |w, m| matrix(w, m, ds, ds))?,
            beta_a: per_period("beta_a", &self.beta_a, h - 1, |w, m| matrix(w, m, da, ds))?,
            law: ResidualLaw::new(matrix("covariance", &self.covariance, de, de)?)?,
        };
        if self.m.len() != h {
            return invalid(format!("m: expected {h} periods, found {}", self.m.len()));
        }
        let policy = LinearPolicyReward {
            theta: per_period("theta", &self.theta, h - 1, |w, m| matrix(w, m, ds, da))?,
            m: self.m.clone(),
            b: per_period("b", &self.b, h, |w, v| vector(w, v, da))?,
            c: per_period("c", &self.c, h, |w, v| vector(w, v, ds))?,
        };
        Ok(LinearFamily::new(params, policy)?)
    }
}

impl FeedbackConfig {
    pub fn params(&self) -> FeedbackParams {
        FeedbackParams {
            growth_rate: self.growth_rate,
            conversion_rate: self.conversion_rate,
            death_rate: self.death_rate,
            inhibitor_production: self.inhibitor_production,
            inhibitor_sensitivity: self.inhibitor_sensitivity,
            inhibitor_threshold: self.inhibitor_threshold,
            period_length: self.period_length,
            step: self.step,
        }
    }

    pub fn correlation(&self) -> PhCorrelation {
        PhCorrelation {
            loadings: self.loadings,
            ph_variance: self.ph_variance,
            idiosyncratic: self.idiosyncratic,
        }
    }

    pub fn build(&self) -> Result<FeedbackFamily, ConfigError> {
        let policy = match &self.fractions {
            Some(f) => DilutionPolicy {
                fractions: f.clone(),
                dilution_cost: self.dilution_cost,
                product_value: self.product_value,
            },
            None => DilutionPolicy::constant(self.fraction, self.horizon, self.dilution_cost, self.product_value),
        };
        let model = FeedbackModel::new(self.params(), policy, self.initial_state, &self.correlation(), self.horizon)?;
        Ok(FeedbackFamily::new(model))
    }
}

impl PosteriorConfig {
    pub fn build(&self, base: &[f64]) -> Result<ParameterPosterior, ConfigError> {
        let d = self.slots.len();
        if let Some(&s) = self.slots.iter().find(|&&s| s >= base.len()) {
            return invalid(format!("posterior slot {s} is outside the {} model parameters", base.len()));
        }
        let mean = match &self.mean {
            Some(m) if m.len() != d => return invalid("posterior mean and slots differ in length"),
            Some(m) => m.clone(),
            None => self.slots.iter().map(|&s| base[s]).collect(),
        };
        let covariance = match (&self.std_dev, &self.covariance) {
            (Some(sd), None) => {
                if sd.len() != d || sd.iter().any(|v| !(*v >= 0.0)) {
                    return invalid("posterior std_dev needs one non-negative entry per slot");
                }
                DMatrix::from_diagonal(&DVector::from_iterator(d, sd.iter().map(|v| v * v)))
            }
            (None, Some(c)) => matrix("posterior covariance", c, d, d)?,
            _ => return invalid("posterior needs exactly one of std_dev and covariance"),
        };
        Ok(ParameterPosterior::new(mean, covariance, self.slots.clone())?)
    }
}

impl ModelConfig {
    pub fn instance(&self) -> Result<Instance, ConfigError> {
        match self {
            ModelConfig::Linear(c) => c.build().map(Instance::Linear),
            ModelConfig::Feedback(c) => c.build().map(Instance::Feedback),
        }
    }

    pub fn posterior(&self, instance: &Instance) -> Result<ParameterPosterior, ConfigError> {
        let spec = match self {
            ModelConfig::Linear(c) => &c.posterior,
            ModelConfig::Feedback(c) => &c.posterior,
        };
        match spec {
            Some(p) => p.build(&instance.base_parameters()),
            None => Ok(ParameterPosterior::degenerate()),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModelConfig::Linear(_))
    }
}

/// Level of one ratio scaled towards a nominal budget: `r·s` with
/// `s = (B / Π r)^{1/4}`, rounded, never below `floor`.
pub fn scaled_levels(ratio: [u64; 4], nominal: f64) -> [usize; 4] {
    let prod: f64 = ratio.iter().map(|&r| r as f64).product();
    let s = (nominal / prod).powf(0.25);
    let floors = [1.0, 1.0, 2.0, 1.0];
    let mut out = [0usize; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (ratio[k] as f64 * s).round().max(floors[k]) as usize;
    }
    out
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ratios.is_empty() {
            return invalid("ablation needs at least one ratio");
        }
        for r in &self.ratios {
            if r.contains(&0) {
                return invalid(format!("ratio {r:?} has a zero level"));
            }
            let prod: u64 = r.iter().product();
            if self.budget % prod != 0 {
                return invalid(format!(
                    "ratio {}:{}:{}:{} has product {prod}, which does not divide the budget {}",
                    r[0], r[1], r[2], r[3], self.budget
                ));
            }
        }
        Ok(())
    }
}

impl ComparisonConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budgets.is_empty() || self.methods.is_empty() {
            return invalid("comparison needs budgets and methods");
        }
        if self.alg1_ratio.contains(&0) {
            return invalid("alg1_ratio levels must be positive");
        }
        if !(self.pilot_fraction > 0.0 && self.pilot_fraction < 1.0) {
            return invalid("pilot_fraction must lie in (0, 1)");
        }
        if self.group_size < 1 {
            return invalid("group_size must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    pub fn selector(&self) -> OutputSelector {
        self.selector.into()
    }

    /// Checks every numeric constraint the runs rely on, building the model
    /// and posterior along the way.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.macro_replications < 1 {
            return invalid("macro_replications must be positive");
        }
        let instance = self.model.instance()?;
        let dims = instance.dims();
        if dims.n_inputs() < 2 {
            return invalid("at least two random inputs are required");
        }
        self.model.posterior(&instance)?;
        self.selector().validate(dims)?;
        match &self.algorithm {
            AlgorithmConfig::Alg1(a) => {
                a.budget().validate()?;
                if !(a.alpha > 0.0 && a.alpha < 1.0) {
                    return invalid("alpha must lie in (0, 1)");
                }
            }
            AlgorithmConfig::Alg2(a) => {
                a.budget().validate()?;
            }
        }
        if let Some(t) = &self.truth {
            if t.k_truth < 1 {
                return invalid("k_truth must be positive");
            }
            if !self.model.is_linear() {
                return invalid("a truth block needs the linear model");
            }
        }
        if let Some(a) = &self.ablation {
            a.validate()?;
        }
        if let Some(c) = &self.comparison {
            c.validate()?;
        }
        if let Some(d) = &self.dependence {
            if d.levels.is_empty() {
                return invalid("dependence needs at least one level");
            }
            if self.model.is_linear() {
                return invalid("the dependence study needs the feedback model");
            }
            if !matches!(self.algorithm, AlgorithmConfig::Alg2(_)) {
                return invalid("the dependence study runs Algorithm 2; use an alg2 block");
            }
        }
        Ok(())
    }
}
