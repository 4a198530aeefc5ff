//! Sequential budget allocation for Shapley-Owen estimation with the
//! non-nested value estimator.
//!
//! After a pilot that updates every pair from every draw, each iteration
//! picks the pair whose confidence half-length would shrink fastest and
//! updates it together with up to `m − 1` partners sharing a lead input, so
//! that the terms `ĝ(P)` and `ĝ(P ∪ {i*})` are simulated once and reused.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::estimators::{
    delta_pair, NonNestedValuer, ValueCache, ValueFunction, TAG_PARAMS, TAG_PERMUTATION, TAG_VALUE,
};
use crate::pabn::{ModelFamily, OutputSelector};
use crate::sampling::{
    normal_quantile, qmc_dimension, qmc_to_sample, sample_permutation, sample_posterior, stream, ParameterPosterior,
    QmcStream, SimRng,
};
use crate::sets::{pairs, Pair, PairTable, Permutation, SubsetKey};

/// Running per-pair sums of `Δ` and `Δ²` with sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTracker {
    sum: PairTable<f64>,
    sum_sq: PairTable<f64>,
    counts: PairTable<u64>,
    frozen_sigma: Option<PairTable<f64>>,
}

impl InteractionTracker {
    pub fn new(n_inputs: usize) -> Self {
        InteractionTracker {
            sum: PairTable::filled(n_inputs, 0.0),
            sum_sq: PairTable::filled(n_inputs, 0.0),
            counts: PairTable::filled(n_inputs, 0),
            frozen_sigma: None,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.counts.n_inputs()
    }

    pub fn record(&mut self, pair: Pair, delta: f64) {
        *self.sum.at_mut(pair) += delta;
        *self.sum_sq.at_mut(pair) += delta * delta;
        *self.counts.at_mut(pair) += 1;
    }

    pub fn count(&self, pair: Pair) -> u64 {
        *self.counts.at(pair)
    }

    pub fn counts(&self) -> &PairTable<u64> {
        &self.counts
    }

    pub fn sum(&self, pair: Pair) -> f64 {
        *self.sum.at(pair)
    }

    pub fn sum_sq(&self, pair: Pair) -> f64 {
        *self.sum_sq.at(pair)
    }

    /// `sum_Δ / N`, or NaN before the first sample.
    pub fn mean(&self, pair: Pair) -> f64 {
        match self.count(pair) {
            0 => f64::NAN,
            n => self.sum(pair) / n as f64,
        }
    }

    /// Sample standard deviation of the recorded `Δ`s.
    pub fn sample_sd(&self, pair: Pair) -> Result<f64> {
        let n = self.count(pair);
        if n < 2 {
            return Err(Error::InsufficientSamples { count: n, required: 2 });
        }
        let s = self.sum(pair);
        let var = (self.sum_sq(pair) - s * s / n as f64) / (n - 1) as f64;
        Ok(libm::sqrt(var.max(0.0)))
    }

    /// Keeps the current standard deviations for all later allocation decisions.
    pub fn freeze_sigma(&mut self) -> Result<()> {
        let n = self.n_inputs();
        let values = pairs(n).map(|p| self.sample_sd(p)).collect::<Result<Vec<_>>>()?;
        self.frozen_sigma = Some(PairTable::from_values(n, values)?);
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_sigma.is_some()
    }

    /// Dispersion used for allocation: frozen if set, otherwise current.
    pub fn allocation_sigma(&self, pair: Pair) -> Result<f64> {
        match &self.frozen_sigma {
            Some(t) => Ok(*t.at(pair)),
            None => self.sample_sd(pair),
        }
    }

    pub fn estimates(&self) -> PairTable<f64> {
        let n = self.n_inputs();
        PairTable::from_values(n, pairs(n).map(|p| self.mean(p)).collect()).expect("pair count")
    }
}

/// `z_{α/2}`, the upper `α/2` standard normal quantile.
pub fn z_value(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

/// `mean ± z_{α/2} σ̂ / √N`.
pub fn confidence_interval(tracker: &InteractionTracker, pair: Pair, alpha: f64) -> Result<(f64, f64)> {
    let sd = tracker.sample_sd(pair)?;
    let half = z_value(alpha) * sd / libm::sqrt(tracker.count(pair) as f64);
    let mean = tracker.mean(pair);
    Ok((mean - half, mean + half))
}

/// `z σ̂ / (2 N^{3/2})` from an explicit dispersion and count.
pub fn ghl_value(z: f64, sigma: f64, count: u64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    if count == 0 {
        return f64::INFINITY;
    }
    let n = count as f64;
    z * sigma / (2.0 * n * libm::sqrt(n))
}

pub fn ghl(tracker: &InteractionTracker, pair: Pair, alpha: f64) -> Result<f64> {
    Ok(ghl_value(z_value(alpha), tracker.allocation_sigma(pair)?, tracker.count(pair)))
}

/// How the lead input `i*` and its group are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GroupRule {
    /// `i*` is fixed before the permutation is looked at, and the group
    /// holds the best pairs `{i*, j}` over all `j`. Every `Δ` is then an
    /// unbiased draw of its index.
    #[default]
    Unbiased,
    /// `i*` is whichever member of the argmax pair comes first in `π`, and
    /// the group only holds partners after `i*`. Tying the role to `π` this
    /// way biases the estimates; kept for comparison.
    LeftmostPrefix,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub argmax: Pair,
    pub lead: usize,
    /// Selected pairs, the argmax pair first.
    pub pairs: Vec<Pair>,
}

fn rank(a: (f64, u64, Pair), b: (f64, u64, Pair)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then((a.2.low, a.2.high).cmp(&(b.2.low, b.2.high)))
}

fn ranked(tracker: &InteractionTracker, z: f64, candidates: impl Iterator<Item = Pair>) -> Result<Vec<(f64, u64, Pair)>> {
    let mut keyed = candidates
        .map(|p| Ok((ghl_value(z, tracker.allocation_sigma(p)?, tracker.count(p)), tracker.count(p), p)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| rank(*a, *b));
    Ok(keyed)
}

/// Chooses the argmax pair (largest gHL, then fewest samples, then
/// lexicographic), a lead input, and the group of at most `m` pairs to update.
///
/// When every gHL is zero the count tie-break allocates round-robin.
pub fn select_group(
    tracker: &InteractionTracker,
    perm: &Permutation,
    m: usize,
    alpha: f64,
    rule: GroupRule,
) -> Result<Group> {
    let n = tracker.n_inputs();
    if n < 2 || perm.len() != n {
        return Err(Error::InvalidArgument("selection needs a permutation of at least two inputs"));
    }
    let m = m.max(1);
    let z = z_value(alpha);
    let all = ranked(tracker, z, pairs(n))?;
    let argmax = all[0].2;
    let with = |c: usize| all.iter().filter(move |k| k.2.low == c || k.2.high == c);
    let lead = match rule {
        GroupRule::LeftmostPrefix => {
            if perm.precedes(argmax.low, argmax.high) {
                argmax.low
            } else {
                argmax.high
            }
        }
        GroupRule::Unbiased => {
            let score = |c: usize| with(c).take(m).map(|k| k.0).sum::<f64>();
            let (lo, hi) = (score(argmax.low), score(argmax.high));
            if hi > lo {
                argmax.high
            } else {
                argmax.low
            }
        }
    };
    let selected = match rule {
        GroupRule::LeftmostPrefix => with(lead)
            .filter(|k| perm.precedes(lead, k.2.other(lead)))
            .take(m)
            .map(|k| k.2)
            .collect(),
        GroupRule::Unbiased => with(lead).take(m).map(|k| k.2).collect(),
    };
    Ok(Group {
        argmax,
        lead,
        pairs: selected,
    })
}

/// Source of the `(w, π)` draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PointSampler {
    #[default]
    MonteCarlo,
    /// Scrambled Halton points mapped through the normal quantile and a
    /// Lehmer code.
    Qmc { scramble_seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationBudget {
    /// Total iterations `N`, pilot included.
    pub iterations: u64,
    /// Pilot iterations `N_0`.
    pub pilot: u64,
    /// Group size `m`.
    pub group_size: usize,
    /// CIs and gHL use level `1 − α`.
    pub alpha: f64,
    /// Use the pilot dispersion for every later decision.
    pub freeze_sigma: bool,
    pub group_rule: GroupRule,
    /// Stop the sequential stage once this many trajectory simulations are spent.
    pub simulation_cap: Option<u64>,
}

impl AllocationBudget {
    pub fn new(iterations: u64, pilot: u64, group_size: usize, alpha: f64) -> Self {
        AllocationBudget {
            iterations,
            pilot,
            group_size,
            alpha,
            freeze_sigma: false,
            group_rule: GroupRule::Unbiased,
            simulation_cap: None,
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.pilot < 2 || self.pilot > self.iterations {
            return Err(Error::InvalidArgument("pilot size must satisfy 2 <= N_0 <= N"));
        }
        if self.group_size < 1 {
            return Err(Error::InvalidArgument("group size must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)"));
        }
        Ok(self)
    }

    pub fn z(self) -> f64 {
        z_value(self.alpha)
    }
}

/// Per-iteration `(w, π)` draws for a given sampler.
struct Draws<'a> {
    n_inputs: usize,
    base: &'a [f64],
    posterior: &'a ParameterPosterior,
    seed: u64,
    qmc: Option<QmcStream>,
}

impl<'a> Draws<'a> {
    fn new(n_inputs: usize, base: &'a [f64], posterior: &'a ParameterPosterior, sampler: PointSampler, seed: u64) -> Self {
        let qmc = match sampler {
            PointSampler::MonteCarlo => None,
            PointSampler::Qmc { scramble_seed } => {
                Some(QmcStream::scrambled(qmc_dimension(posterior, n_inputs), scramble_seed))
            }
        };
        Draws {
            n_inputs,
            base,
            posterior,
            seed,
            qmc,
        }
    }

    fn draw(&self, iteration: u64) -> Result<(Vec<f64>, Permutation)> {
        match &self.qmc {
            None => {
                let w = sample_posterior(self.posterior, self.base, &mut stream(self.seed, &[TAG_PARAMS, iteration]))?;
                let perm = sample_permutation(self.n_inputs, &mut stream(self.seed, &[TAG_PERMUTATION, iteration]))?;
                Ok((w, perm))
            }
            Some(q) => qmc_to_sample(&q.point_at(iteration), self.posterior, self.base, self.n_inputs),
        }
    }

    fn value_stream(&self, iteration: u64) -> impl Fn(SubsetKey) -> SimRng {
        let seed = self.seed;
        move |s: SubsetKey| stream(seed, &[TAG_VALUE, iteration, s.bits()])
    }
}

/// Work counters shared by both stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkCounters {
    pub simulations: u64,
    pub evaluations: u64,
}

impl WorkCounters {
    fn absorb(&mut self, cache: &ValueCache) {
        self.simulations += cache.simulations();
        self.evaluations += cache.evaluations();
    }
}

fn pilot_iterations<V, B>(
    tracker: &mut InteractionTracker,
    draws: &Draws<'_>,
    pilot: u64,
    make_valuer: &B,
    work: &mut WorkCounters,
) -> Result<()>
where
    V: ValueFunction,
    B: Fn(&[f64]) -> Result<V>,
{
    let n = tracker.n_inputs();
    for it in 0..pilot {
        let (w, perm) = draws.draw(it)?;
        let valuer = make_valuer(&w)?;
        let mut cache = ValueCache::new(true);
        let stream_for = draws.value_stream(it);
        for p in pairs(n) {
            let d = delta_pair(&valuer, &perm, p.low, p.high, &mut cache, &stream_for)?;
            tracker.record(p, d);
        }
        work.absorb(&cache);
    }
    Ok(())
}

/// Equal-allocation pilot: `N_0` draws, every pair updated from each.
pub fn pilot<V, B>(
    n_inputs: usize,
    base: &[f64],
    posterior: &ParameterPosterior,
    n0: u64,
    sampler: PointSampler,
    seed: u64,
    make_valuer: B,
) -> Result<(InteractionTracker, WorkCounters)>
where
    V: ValueFunction,
    B: Fn(&[f64]) -> Result<V>,
{
    if n0 < 2 {
        return Err(Error::InsufficientSamples { count: n0, required: 2 });
    }
    let draws = Draws::new(n_inputs, base, posterior, sampler, seed);
    let mut tracker = InteractionTracker::new(n_inputs);
    let mut work = WorkCounters::default();
    pilot_iterations(&mut tracker, &draws, n0, &make_valuer, &mut work)?;
    Ok((tracker, work))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationResult {
    pub estimates: PairTable<f64>,
    pub counts: PairTable<u64>,
    pub intervals: PairTable<(f64, f64)>,
    pub tracker: InteractionTracker,
    pub simulations: u64,
    pub evaluations: u64,
    /// Iterations actually run, pilot included.
    pub iterations: u64,
    /// Pair updates made after the pilot; equals `Σ (N_{i,j} − N_0)`.
    pub sequential_updates: u64,
}

/// Pilot followed by sequential group allocation.
///
/// `make_valuer` turns a full parameter vector into a value estimator; see
/// [`algorithm2_nonnested`] for the standard choice.
pub fn algorithm2<V, B>(
    n_inputs: usize,
    base: &[f64],
    posterior: &ParameterPosterior,
    budget: AllocationBudget,
    sampler: PointSampler,
    seed: u64,
    make_valuer: B,
) -> Result<AllocationResult>
where
    V: ValueFunction,
    B: Fn(&[f64]) -> Result<V>,
{
    let budget = budget.validate()?;
    if n_inputs < 2 {
        return Err(Error::InvalidArgument("at least two inputs are required"));
    }
    let draws = Draws::new(n_inputs, base, posterior, sampler, seed);
    let mut tracker = InteractionTracker::new(n_inputs);
    let mut work = WorkCounters::default();
    pilot_iterations(&mut tracker, &draws, budget.pilot, &make_valuer, &mut work)?;
    if budget.freeze_sigma {
        tracker.freeze_sigma()?;
    }

    let mut iterations = budget.pilot;
    let mut sequential_updates = 0;
    for it in budget.pilot..budget.iterations {
        if budget.simulation_cap.is_some_and(|cap| work.simulations >= cap) {
            break;
        }
        let (w, perm) = draws.draw(it)?;
        let group = select_group(&tracker, &perm, budget.group_size, budget.alpha, budget.group_rule)?;
        let valuer = make_valuer(&w)?;
        let mut cache = ValueCache::new(true);
        let stream_for = draws.value_stream(it);
        for &p in &group.pairs {
            let d = delta_pair(&valuer, &perm, group.lead, p.other(group.lead), &mut cache, &stream_for)?;
            tracker.record(p, d);
        }
        work.absorb(&cache);
        sequential_updates += group.pairs.len() as u64;
        iterations += 1;
    }

    let n = n_inputs;
    let intervals = pairs(n)
        .map(|p| confidence_interval(&tracker, p, budget.alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(AllocationResult {
        estimates: tracker.estimates(),
        counts: tracker.counts().clone(),
        intervals: PairTable::from_values(n, intervals)?,
        tracker,
        simulations: work.simulations,
        evaluations: work.evaluations,
        iterations,
        sequential_updates,
    })
}

/// [`algorithm2`] with the non-nested value estimator on `family`.
pub fn algorithm2_nonnested<F: ModelFamily>(
    family: &F,
    posterior: &ParameterPosterior,
    budget: AllocationBudget,
    sampler: PointSampler,
    selector: OutputSelector,
    seed: u64,
) -> Result<AllocationResult> {
    let dims = family.dims();
    selector.validate(dims)?;
    algorithm2(
        dims.n_inputs(),
        &family.base_parameters(),
        posterior,
        budget,
        sampler,
        seed,
        |w| {
            Ok(NonNestedValuer {
                model: family.instantiate(w)?,
                selector,
            })
        },
    )
}
