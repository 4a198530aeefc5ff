//! Experiment drivers: single estimates, exact truth, Algorithm 1 level
//! ablations, matched-budget comparisons and the feedback dependence study.
//!
//! Macro-replications run on the rayon pool with seeds derived from the run
//! seed and the replication index, so results do not depend on scheduling.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use sopabn_core::allocation::{algorithm2_nonnested, z_value};
use sopabn_core::estimators::algorithm1_nested;
use sopabn_core::oracle::{mean_evaluations_per_permutation, mse, posterior_truth, GroundTruth};
use sopabn_core::sampling::{derive_seed, ParameterPosterior};
use sopabn_core::sets::pairs;
use sopabn_core::{Dims, InputIndex, ModelFamily, OutputSelector, Pair, PairTable};

use crate::config::{
    scaled_levels, Alg1Config, Alg2Config, AlgorithmConfig, ConfigError, ExperimentConfig, Instance, Method,
    ModelConfig, SamplerKind,
};
use crate::output::{Artifact, OutputError};

const LABEL_REPLICATION: u64 = 0x52;
const LABEL_CELL: u64 = 0x43;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numeric(#[from] sopabn_core::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl RunError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
            RunError::Output(_) => 4,
        }
    }
}

fn config_error<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(ConfigError::Invalid(msg.into())))
}

/// A validated config together with the effective seed and the config hash.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub config_hash: String,
}

impl RunContext {
    /// `seed` overrides the config seed; the hash always covers the config as given.
    pub fn new(config: ExperimentConfig, seed: Option<u64>) -> Result<Self, ConfigError> {
        config.validate()?;
        let config_hash = config.hash()?;
        let seed = seed.unwrap_or(config.seed);
        Ok(RunContext {
            config,
            seed,
            config_hash,
        })
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        derive_seed(self.seed, &[LABEL_REPLICATION, replication as u64])
    }

    /// The model family and posterior the config describes.
    pub fn instance(&self) -> Result<(Instance, ParameterPosterior), RunError> {
        let instance = self.config.model.instance()?;
        let posterior = self.config.model.posterior(&instance)?;
        Ok((instance, posterior))
    }

    /// Posterior-averaged exact indices of the linear model.
    pub fn truth(&self) -> Result<GroundTruth, RunError> {
        let Some(t) = &self.config.truth else {
            return config_error("this run needs a truth block");
        };
        let (instance, posterior) = self.instance()?;
        let Instance::Linear(family) = &instance else {
            return config_error("exact truth is only available for the linear model");
        };
        Ok(posterior_truth(family, &posterior, t.k_truth, t.seed(self.seed))?)
    }
}

/// Per-pair output of one algorithm run.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEstimates {
    pub estimates: PairTable<f64>,
    pub counts: PairTable<u64>,
    pub intervals: PairTable<(f64, f64)>,
    pub simulations: u64,
}

fn run_alg1<F: ModelFamily>(
    family: &F,
    posterior: &ParameterPosterior,
    selector: OutputSelector,
    cfg: &Alg1Config,
    seed: u64,
) -> Result<PairEstimates, RunError> {
    let budget = cfg.budget();
    let r = algorithm1_nested(family, posterior, budget, selector, seed)?;
    let draws = (budget.parameter_draws * budget.permutations) as u64;
    let z = z_value(cfg.alpha);
    let n = family.dims().n_inputs();
    let intervals = pairs(n)
        .map(|p| {
            let mean = *r.estimates.at(p);
            let half = z * (r.delta_variances.at(p) / draws as f64).sqrt();
            (mean - half, mean + half)
        })
        .collect();
    Ok(PairEstimates {
        counts: r.estimates.map(|_| draws),
        intervals: PairTable::from_values(n, intervals)?,
        estimates: r.estimates,
        simulations: r.simulations,
    })
}

fn run_alg2<F: ModelFamily>(
    family: &F,
    posterior: &ParameterPosterior,
    selector: OutputSelector,
    cfg: &Alg2Config,
    seed: u64,
) -> Result<PairEstimates, RunError> {
    let r = algorithm2_nonnested(family, posterior, cfg.budget(), cfg.point_sampler(seed), selector, seed)?;
    Ok(PairEstimates {
        estimates: r.estimates,
        counts: r.counts,
        intervals: r.intervals,
        simulations: r.simulations,
    })
}

/// Runs the given algorithm block on a model instance.
pub fn estimate_pairs(
    instance: &Instance,
    posterior: &ParameterPosterior,
    selector: OutputSelector,
    algorithm: &AlgorithmConfig,
    seed: u64,
) -> Result<PairEstimates, RunError> {
    match (instance, algorithm) {
        (Instance::Linear(f), AlgorithmConfig::Alg1(a)) => run_alg1(f, posterior, selector, a, seed),
        (Instance::Linear(f), AlgorithmConfig::Alg2(a)) => run_alg2(f, posterior, selector, a, seed),
        (Instance::Feedback(f), AlgorithmConfig::Alg1(a)) => run_alg1(f, posterior, selector, a, seed),
        (Instance::Feedback(f), AlgorithmConfig::Alg2(a)) => run_alg2(f, posterior, selector, a, seed),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub macro_replications: usize,
    /// Trajectory simulations summed over every run behind the table.
    pub simulations: u64,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_variance: Option<f64>,
}

impl RunMetadata {
    fn new(command: &'static str, ctx: &RunContext, replications: usize) -> Self {
        RunMetadata {
            command,
            seed: ctx.seed,
            config_hash: ctx.config_hash.clone(),
            macro_replications: replications,
            simulations: 0,
            wall_time_seconds: 0.0,
            mse: None,
            total_variance: None,
        }
    }
}

/// 1-based flat indices of a pair with their periods and components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub i_period: usize,
    pub i_component: usize,
    pub j_period: usize,
    pub j_component: usize,
}

impl PairLabel {
    pub fn new(pair: Pair, dims: Dims) -> Self {
        let a = InputIndex::from_flat(pair.low, dims).expect("pair within dims");
        let b = InputIndex::from_flat(pair.high, dims).expect("pair within dims");
        PairLabel {
            i: pair.low + 1,
            j: pair.high + 1,
            i_period: a.period(),
            i_component: a.component(),
            j_period: b.period(),
            j_component: b.component(),
        }
    }

    pub fn same_period(&self) -> bool {
        self.i_period == self.j_period
    }
}

/// One row of an estimate table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRow {
    #[serde(flatten)]
    pub label: PairLabel,
    pub estimate: f64,
    pub count: u64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub squared_error: Option<f64>,
}

// The csv serializer does not support flattening, so rows are re-emitted as
// plain structs for the CSV encoding.
#[derive(Serialize)]
struct PairCsv {
    i: usize,
    j: usize,
    i_period: usize,
    i_component: usize,
    j_period: usize,
    j_component: usize,
    estimate: f64,
    count: u64,
    ci_lo: f64,
    ci_hi: f64,
    seed: u64,
    config_hash: String,
}

#[derive(Serialize)]
struct PairTruthCsv {
    i: usize,
    j: usize,
    i_period: usize,
    i_component: usize,
    j_period: usize,
    j_component: usize,
    estimate: f64,
    count: u64,
    ci_lo: f64,
    ci_hi: f64,
    truth: f64,
    squared_error: f64,
    seed: u64,
    config_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultTable {
    pub metadata: RunMetadata,
    pub rows: Vec<PairRow>,
}

impl ResultTable {
    pub fn has_truth(&self) -> bool {
        self.rows.iter().all(|r| r.truth.is_some())
    }

    pub fn csv(&self) -> Result<Vec<u8>, OutputError> {
        let (seed, hash) = (self.metadata.seed, &self.metadata.config_hash);
        if self.has_truth() {
            let rows: Vec<PairTruthCsv> = self
                .rows
                .iter()
                .map(|r| PairTruthCsv {
                    i: r.label.i,
                    j: r.label.j,
                    i_period: r.label.i_period,
                    i_component: r.label.i_component,
                    j_period: r.label.j_period,
                    j_component: r.label.j_component,
                    estimate: r.estimate,
                    count: r.count,
                    ci_lo: r.ci_lo,
                    ci_hi: r.ci_hi,
                    truth: r.truth.unwrap_or(f64::NAN),
                    squared_error: r.squared_error.unwrap_or(f64::NAN),
                    seed,
                    config_hash: hash.clone(),
                })
                .collect();
            crate::output::csv_bytes(&rows)
        } else {
            let rows: Vec<PairCsv> = self
                .rows
                .iter()
                .map(|r| PairCsv {
                    i: r.label.i,
                    j: r.label.j,
                    i_period: r.label.i_period,
                    i_component: r.label.i_component,
                    j_period: r.label.j_period,
                    j_component: r.label.j_component,
                    estimate: r.estimate,
                    count: r.count,
                    ci_lo: r.ci_lo,
                    ci_hi: r.ci_hi,
                    seed,
                    config_hash: hash.clone(),
                })
                .collect();
            crate::output::csv_bytes(&rows)
        }
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>, OutputError> {
        Ok(vec![Artifact {
            name: String::new(),
            csv: self.csv()?,
            json: serde_json::to_value(self)?,
        }])
    }
}

/// One run of the configured algorithm at the run seed, with squared errors
/// when a truth block is present.
pub fn run_estimate(ctx: &RunContext) -> Result<ResultTable, RunError> {
    let start = Instant::now();
    let (instance, posterior) = ctx.instance()?;
    let dims = instance.dims();
    let est = estimate_pairs(&instance, &posterior, ctx.config.selector(), &ctx.config.algorithm, ctx.seed)?;
    let truth = match &ctx.config.truth {
        Some(_) => Some(ctx.truth()?),
        None => None,
    };
    let rows = pairs(dims.n_inputs())
        .map(|p| {
            let estimate = *est.estimates.at(p);
            let (ci_lo, ci_hi) = *est.intervals.at(p);
            let t = truth.as_ref().map(|t| *t.pairs.at(p));
            PairRow {
                label: PairLabel::new(p, dims),
                estimate,
                count: *est.counts.at(p),
                ci_lo,
                ci_hi,
                truth: t,
                squared_error: t.map(|t| (estimate - t) * (estimate - t)),
            }
        })
        .collect();
    let mut metadata = RunMetadata::new("estimate", ctx, 1);
    metadata.simulations = est.simulations;
    if let Some(t) = &truth {
        metadata.mse = Some(mse(&est.estimates, &t.pairs)?);
        metadata.total_variance = Some(t.total_variance);
    }
    metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(ResultTable { metadata, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub i: usize,
    pub j: usize,
    pub i_period: usize,
    pub i_component: usize,
    pub j_period: usize,
    pub j_component: usize,
    pub truth: f64,
    pub standard_error: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingleRow {
    pub i: usize,
    pub period: usize,
    pub component: usize,
    pub shapley_effect: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub metadata: RunMetadata,
    pub pairs: Vec<OracleRow>,
    pub singles: Vec<SingleRow>,
}

impl OracleReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>, OutputError> {
        Ok(vec![
            Artifact::new("", &self.pairs, &self.metadata)?,
            Artifact::new("singles", &self.singles, &self.metadata)?,
        ])
    }
}

/// Exact Shapley-Owen and Shapley indices of the linear model, averaged over
/// `K_truth` posterior draws.
pub fn run_oracle(ctx: &RunContext) -> Result<OracleReport, RunError> {
    let start = Instant::now();
    let truth = ctx.truth()?;
    let dims = ctx.config.model.instance()?.dims();
    let hash = &ctx.config_hash;
    let pairs_out = pairs(dims.n_inputs())
        .map(|p| {
            let l = PairLabel::new(p, dims);
            OracleRow {
                i: l.i,
                j: l.j,
                i_period: l.i_period,
                i_component: l.i_component,
                j_period: l.j_period,
                j_component: l.j_component,
                truth: *truth.pairs.at(p),
                standard_error: *truth.pair_standard_errors.at(p),
                seed: ctx.seed,
                config_hash: hash.clone(),
            }
        })
        .collect();
    let singles = truth
        .singles
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let idx = InputIndex::from_flat(k, dims).expect("input within dims");
            SingleRow {
                i: k + 1,
                period: idx.period(),
                component: idx.component(),
                shapley_effect: v,
                seed: ctx.seed,
                config_hash: hash.clone(),
            }
        })
        .collect();
    let mut metadata = RunMetadata::new("oracle", ctx, 1);
    metadata.total_variance = Some(truth.total_variance);
    metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(OracleReport {
        metadata,
        pairs: pairs_out,
        singles,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Half-width of the 90% normal interval for the mean of `xs`.
pub fn ci_half_width(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    z_value(0.1) * (var / n as f64).sqrt()
}

fn ratio_label(r: &[u64; 4]) -> String {
    format!("{}:{}:{}:{}", r[0], r[1], r[2], r[3])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub ratio: String,
    pub parameter_draws: usize,
    pub permutations: usize,
    pub outer: usize,
    pub inner: usize,
    pub nominal_budget: u64,
    pub mean_simulations: f64,
    pub mean_mse: f64,
    pub ci_half_width: f64,
    pub replications: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub setting: String,
    pub replication: usize,
    pub mse: f64,
    pub simulations: u64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub metadata: RunMetadata,
    pub rows: Vec<AblationRow>,
    pub replications: Vec<ReplicationRow>,
}

impl AblationReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>, OutputError> {
        Ok(vec![
            Artifact::new("", &self.rows, &self.metadata)?,
            Artifact::new("replications", &self.replications, &self.metadata)?,
        ])
    }

    /// Per-ratio MSEs in replication order.
    pub fn mses(&self, ratio: &str) -> Vec<f64> {
        self.replications
            .iter()
            .filter(|r| r.setting == ratio)
            .map(|r| r.mse)
            .collect()
    }
}

/// Algorithm 1 at each level ratio scaled to the ablation budget, against the
/// posterior truth, over the configured macro-replications.
pub fn run_ablation(ctx: &RunContext) -> Result<AblationReport, RunError> {
    let start = Instant::now();
    let Some(ab) = &ctx.config.ablation else {
        return config_error("the ablation needs an [ablation] block");
    };
    ab.validate()?;
    let truth = ctx.truth()?;
    let (instance, posterior) = ctx.instance()?;
    let selector = ctx.config.selector();
    let reps = ctx.config.macro_replications;
    let alpha = match &ctx.config.algorithm {
        AlgorithmConfig::Alg1(a) => a.alpha,
        AlgorithmConfig::Alg2(a) => a.alpha,
    };
    let settings: Vec<([u64; 4], Alg1Config)> = ab
        .ratios
        .iter()
        .map(|r| {
            let [k, m, o, i] = scaled_levels(*r, ab.budget as f64);
            (
                *r,
                Alg1Config {
                    parameter_draws: k,
                    permutations: m,
                    outer: o,
                    inner: i,
                    alpha,
                },
            )
        })
        .collect();
    let tasks: Vec<(usize, usize)> = (0..settings.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let results = tasks
        .par_iter()
        .map(|&(s, r)| {
            let seed = derive_seed(ctx.replication_seed(r), &[LABEL_CELL, s as u64]);
            let algorithm = AlgorithmConfig::Alg1(settings[s].1.clone());
            let est = estimate_pairs(&instance, &posterior, selector, &algorithm, seed)?;
            Ok((mse(&est.estimates, &truth.pairs)?, est.simulations))
        })
        .collect::<Result<Vec<(f64, u64)>, RunError>>()?;

    let mut rows = Vec::new();
    let mut replications = Vec::new();
    for (s, (ratio, a)) in settings.iter().enumerate() {
        let label = ratio_label(ratio);
        let cell = &results[s * reps..(s + 1) * reps];
        let mses: Vec<f64> = cell.iter().map(|c| c.0).collect();
        let sims: Vec<f64> = cell.iter().map(|c| c.1 as f64).collect();
        for (r, &(m, sim)) in cell.iter().enumerate() {
            replications.push(ReplicationRow {
                setting: label.clone(),
                replication: r,
                mse: m,
                simulations: sim,
                seed: ctx.seed,
                config_hash: ctx.config_hash.clone(),
            });
        }
        rows.push(AblationRow {
            ratio: label,
            parameter_draws: a.parameter_draws,
            permutations: a.permutations,
            outer: a.outer,
            inner: a.inner,
            nominal_budget: a.budget().nominal(),
            mean_simulations: mean(&sims),
            mean_mse: mean(&mses),
            ci_half_width: ci_half_width(&mses),
            replications: reps,
            seed: ctx.seed,
            config_hash: ctx.config_hash.clone(),
        });
    }
    let mut metadata = RunMetadata::new("ablation", ctx, reps);
    metadata.simulations = results.iter().map(|r| r.1).sum();
    metadata.total_variance = Some(truth.total_variance);
    metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(AblationReport {
        metadata,
        rows,
        replications,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub budget: u64,
    pub method: String,
    /// Levels or pilot size used to hit the budget.
    pub setting: String,
    pub mean_simulations: f64,
    pub mean_mse: f64,
    pub ci_half_width: f64,
    pub replications: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub metadata: RunMetadata,
    pub rows: Vec<ComparisonRow>,
    pub replications: Vec<ReplicationRow>,
}

impl ComparisonReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>, OutputError> {
        Ok(vec![
            Artifact::new("", &self.rows, &self.metadata)?,
            Artifact::new("replications", &self.replications, &self.metadata)?,
        ])
    }

    /// MSEs of one method at one budget, in replication order.
    pub fn mses(&self, budget: u64, method: Method) -> Vec<f64> {
        let key = comparison_setting(budget, method);
        self.replications
            .iter()
            .filter(|r| r.setting == key)
            .map(|r| r.mse)
            .collect()
    }
}

fn comparison_setting(budget: u64, method: Method) -> String {
    format!("{budget}/{}", method.name())
}

/// The algorithm block a method runs at a trajectory budget. `per_permutation`
/// is the mean number of distinct non-empty subsets valued per permutation.
pub fn matched_algorithm(
    method: Method,
    budget: u64,
    per_permutation: f64,
    cmp: &crate::config::ComparisonConfig,
) -> AlgorithmConfig {
    match method {
        Method::Alg1 => {
            let [k, m, o, i] = scaled_levels(cmp.alg1_ratio, budget as f64 / per_permutation);
            AlgorithmConfig::Alg1(Alg1Config {
                parameter_draws: k,
                permutations: m,
                outer: o,
                inner: i,
                alpha: cmp.alpha,
            })
        }
        Method::Alg2Mc | Method::Alg2Qmc => {
            // N_0 = f·N, where N solves N_0·(pilot cost) + (N − N_0)·(group cost) = budget.
            // A group iteration values at most 2m + 2 subsets.
            let f = cmp.pilot_fraction;
            let pilot_cost = 3.0 * per_permutation;
            let group_cost = 3.0 * (2 * cmp.group_size + 2) as f64;
            let iterations = budget as f64 / (f * pilot_cost + (1.0 - f) * group_cost);
            let pilot = ((f * iterations).round() as u64).max(2);
            AlgorithmConfig::Alg2(Alg2Config {
                iterations: budget.max(pilot),
                pilot,
                group_size: cmp.group_size,
                alpha: cmp.alpha,
                sampler: if method == Method::Alg2Qmc {
                    SamplerKind::Qmc
                } else {
                    SamplerKind::Mc
                },
                scramble_seed: None,
                freeze_sigma: false,
                group_rule: Default::default(),
                simulation_cap: Some(budget),
            })
        }
    }
}

fn describe(algorithm: &AlgorithmConfig) -> String {
    match algorithm {
        AlgorithmConfig::Alg1(a) => format!(
            "K={} M={} N_O={} N_I={}",
            a.parameter_draws, a.permutations, a.outer, a.inner
        ),
        AlgorithmConfig::Alg2(a) => format!("N_0={} m={}", a.pilot, a.group_size),
    }
}

/// Matched-budget runs of every configured method at every budget.
pub fn run_comparison(ctx: &RunContext) -> Result<ComparisonReport, RunError> {
    let start = Instant::now();
    let Some(cmp) = &ctx.config.comparison else {
        return config_error("the comparison needs a [comparison] block");
    };
    cmp.validate()?;
    let truth = ctx.truth()?;
    let (instance, posterior) = ctx.instance()?;
    let selector = ctx.config.selector();
    let reps = ctx.config.macro_replications;
    let per_permutation = mean_evaluations_per_permutation(instance.dims().n_inputs())?;

    let mut cells = Vec::new();
    for &b in &cmp.budgets {
        for &m in &cmp.methods {
            cells.push((b, m, matched_algorithm(m, b, per_permutation, cmp)));
        }
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
    let results = tasks
        .par_iter()
        .map(|&(c, r)| {
            let (b, m, algorithm) = &cells[c];
            let seed = derive_seed(ctx.replication_seed(r), &[LABEL_CELL, *b, *m as u64]);
            let est = estimate_pairs(&instance, &posterior, selector, algorithm, seed)?;
            Ok((mse(&est.estimates, &truth.pairs)?, est.simulations))
        })
        .collect::<Result<Vec<(f64, u64)>, RunError>>()?;

    let mut rows = Vec::new();
    let mut replications = Vec::new();
    for (c, (b, m, algorithm)) in cells.iter().enumerate() {
        let cell = &results[c * reps..(c + 1) * reps];
        let mses: Vec<f64> = cell.iter().map(|x| x.0).collect();
        let sims: Vec<f64> = cell.iter().map(|x| x.1 as f64).collect();
        for (r, &(v, sim)) in cell.iter().enumerate() {
            replications.push(ReplicationRow {
                setting: comparison_setting(*b, *m),
                replication: r,
                mse: v,
                simulations: sim,
                seed: ctx.seed,
                config_hash: ctx.config_hash.clone(),
            });
        }
        rows.push(ComparisonRow {
            budget: *b,
            method: m.name().to_string(),
            setting: describe(algorithm),
            mean_simulations: mean(&sims),
            mean_mse: mean(&mses),
            ci_half_width: ci_half_width(&mses),
            replications: reps,
            seed: ctx.seed,
            config_hash: ctx.config_hash.clone(),
        });
    }
    let mut metadata = RunMetadata::new("compare", ctx, reps);
    metadata.simulations = results.iter().map(|r| r.1).sum();
    metadata.total_variance = Some(truth.total_variance);
    metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(ComparisonReport {
        metadata,
        rows,
        replications,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceRow {
    pub level: usize,
    pub l_s: f64,
    pub l_p: f64,
    pub l_i: f64,
    pub replication: usize,
    pub i: usize,
    pub j: usize,
    pub i_period: usize,
    pub i_component: usize,
    pub j_period: usize,
    pub j_component: usize,
    pub same_period: bool,
    pub estimate: f64,
    pub count: u64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Same-period magnitudes of one replication at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceSummary {
    pub level: usize,
    pub l_s: f64,
    pub l_p: f64,
    pub l_i: f64,
    pub replication: usize,
    /// Mean `|Ŝh|` over all same-period pairs.
    pub same_period_mean_abs: f64,
    pub first_period_mean_abs: f64,
    pub final_period_mean_abs: f64,
    pub simulations: u64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct DependenceReport {
    pub metadata: RunMetadata,
    pub rows: Vec<DependenceRow>,
    pub summaries: Vec<DependenceSummary>,
}

impl DependenceReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>, OutputError> {
        Ok(vec![
            Artifact::new("", &self.rows, &self.metadata)?,
            Artifact::new("summary", &self.summaries, &self.metadata)?,
        ])
    }

    pub fn summary(&self, level: usize, replication: usize) -> Option<&DependenceSummary> {
        self.summaries
            .iter()
            .find(|s| s.level == level && s.replication == replication)
    }
}

fn mean_abs<'a>(rows: impl Iterator<Item = &'a DependenceRow>) -> f64 {
    let v: Vec<f64> = rows.map(|r| r.estimate.abs()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        mean(&v)
    }
}

/// Algorithm 2 on the feedback model at each PH loading level.
pub fn run_dependence_study(ctx: &RunContext) -> Result<DependenceReport, RunError> {
    let start = Instant::now();
    let Some(dep) = &ctx.config.dependence else {
        return config_error("the dependence study needs a [dependence] block");
    };
    let ModelConfig::Feedback(base) = &ctx.config.model else {
        return config_error("the dependence study needs the feedback model");
    };
    let AlgorithmConfig::Alg2(_) = &ctx.config.algorithm else {
        return config_error("the dependence study runs Algorithm 2; use an alg2 block");
    };
    let selector = ctx.config.selector();
    let reps = ctx.config.macro_replications;
    let levels = dep
        .levels
        .iter()
        .map(|l| {
            let mut c = base.clone();
            c.loadings = *l;
            let model = ModelConfig::Feedback(c);
            let instance = model.instance()?;
            let posterior = model.posterior(&instance)?;
            Ok((instance, posterior))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let tasks: Vec<(usize, usize)> = (0..levels.len()).flat_map(|l| (0..reps).map(move |r| (l, r))).collect();
    let results = tasks
        .par_iter()
        .map(|&(l, r)| {
            let (instance, posterior) = &levels[l];
            let seed = derive_seed(ctx.replication_seed(r), &[LABEL_CELL, l as u64]);
            estimate_pairs(instance, posterior, selector, &ctx.config.algorithm, seed)
        })
        .collect::<Result<Vec<PairEstimates>, RunError>>()?;

    let dims = levels[0].0.dims();
    let horizon = dims.horizon;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (&(l, r), est) in tasks.iter().zip(&results) {
        let [l_s, l_p, l_i] = dep.levels[l];
        let first = rows.len();
        for p in pairs(dims.n_inputs()) {
            let label = PairLabel::new(p, dims);
            let (ci_lo, ci_hi) = *est.intervals.at(p);
            rows.push(DependenceRow {
                level: l,
                l_s,
                l_p,
                l_i,
                replication: r,
                i: label.i,
                j: label.j,
                i_period: label.i_period,
                i_component: label.i_component,
                j_period: label.j_period,
                j_component: label.j_component,
                same_period: label.same_period(),
                estimate: *est.estimates.at(p),
                count: *est.counts.at(p),
                ci_lo,
                ci_hi,
                seed: ctx.seed,
                config_hash: ctx.config_hash.clone(),
            });
        }
        let block = &rows[first..];
        let same = || block.iter().filter(|x| x.same_period);
        summaries.push(DependenceSummary {
            level: l,
            l_s,
            l_p,
            l_i,
            replication: r,
            same_period_mean_abs: mean_abs(same()),
            first_period_mean_abs: mean_abs(same().filter(|x| x.i_period == 1)),
            final_period_mean_abs: mean_abs(same().filter(|x| x.i_period == horizon)),
            simulations: est.simulations,
            seed: ctx.seed,
            config_hash: ctx.config_hash.clone(),
        });
    }
    let mut metadata = RunMetadata::new("dependence", ctx, reps);
    metadata.simulations = results.iter().map(|r| r.simulations).sum();
    metadata.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(DependenceReport {
        metadata,
        rows,
        summaries,
    })
}
