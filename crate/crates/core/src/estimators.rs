//! Value-function estimators, second-order marginal contributions, the
//! equal-allocation nested algorithm, and exact single-factor Shapley effects.
//!
//! Within one `(w, π)` draw, value estimates are memoized per subset and each
//! subset's evaluation consumes its own labeled RNG stream, so disabling the
//! cache changes the amount of work but not the result.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pabn::{ModelFamily, OutputSelector, PabnModel, SubsetSampler};
use crate::sampling::{sample_model, sample_permutation, stream, ParameterPosterior, SimRng};
use crate::sets::{pairs, Pair, PairTable, Permutation, SubsetKey};

/// Stream labels.
pub(crate) const TAG_PARAMS: u64 = 1;
pub(crate) const TAG_PERMUTATION: u64 = 2;
pub(crate) const TAG_VALUE: u64 = 3;

/// Something that can produce (possibly noisy) estimates of `g(U)`.
pub trait ValueFunction {
    /// One estimate of `g(subset)`; `rng` is dedicated to this evaluation.
    fn evaluate(&self, subset: SubsetKey, rng: &mut SimRng) -> Result<f64>;

    /// Trajectory simulations spent by one evaluation of `subset`.
    fn cost(&self, _subset: SubsetKey) -> u64 {
        0
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn evaluate(&self, subset: SubsetKey, rng: &mut SimRng) -> Result<f64> {
        (**self).evaluate(subset, rng)
    }
    fn cost(&self, subset: SubsetKey) -> u64 {
        (**self).cost(subset)
    }
}

/// Adapts a closure into a [`ValueFunction`] with zero simulation cost.
pub struct FnValuer<F>(pub F);

impl<F: Fn(SubsetKey, &mut SimRng) -> Result<f64>> ValueFunction for FnValuer<F> {
    fn evaluate(&self, subset: SubsetKey, rng: &mut SimRng) -> Result<f64> {
        (self.0)(subset, rng)
    }
}

/// Exact value function given as a table indexed by subset bitmask.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactValues(pub Vec<f64>);

impl ValueFunction for ExactValues {
    fn evaluate(&self, subset: SubsetKey, _rng: &mut SimRng) -> Result<f64> {
        Ok(self.0[subset.bits() as usize])
    }
}

/// Outer/inner sample sizes of the nested estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NestedSizes {
    pub outer: usize,
    pub inner: usize,
}

impl NestedSizes {
    pub fn validate(self) -> Result<Self> {
        if self.outer < 2 || self.inner < 1 {
            return Err(Error::InvalidArgument("nested estimator needs N_O >= 2 and N_I >= 1"));
        }
        Ok(self)
    }
}

/// Nested estimate from `outer × inner` samples laid out row by row.
///
/// The inner-variance correction needs `inner >= 2`; with a single inner
/// sample it is taken as zero, which biases the estimate upward.
pub fn nested_estimate(samples: &[f64], outer: usize, inner: usize) -> f64 {
    debug_assert_eq!(samples.len(), outer * inner);
    let row_means: Vec<f64> = samples
        .chunks_exact(inner)
        .map(|row| row.iter().sum::<f64>() / inner as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / outer as f64;
    let between = row_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (outer - 1) as f64;
    let within = if inner >= 2 {
        let ss: f64 = samples
            .chunks_exact(inner)
            .zip(&row_means)
            .map(|(row, m)| row.iter().map(|y| (y - m) * (y - m)).sum::<f64>())
            .sum();
        ss / (outer * inner * (inner - 1)) as f64
    } else {
        0.0
    };
    between - within
}

/// `y1 (y2 − y3)`.
pub fn nonnested_estimate(y1: f64, y2: f64, y3: f64) -> f64 {
    y1 * (y2 - y3)
}

/// Two-level Monte Carlo estimate of `g(U)`. `g(∅)` is exactly 0.
pub fn nested_value<M: PabnModel + ?Sized>(
    model: &M,
    selector: OutputSelector,
    subset: SubsetKey,
    sizes: NestedSizes,
    rng: &mut SimRng,
) -> Result<f64> {
    let NestedSizes { outer, inner } = sizes.validate()?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    let sampler = SubsetSampler::new(model.residual_law(), subset)?;
    let mut x_u = vec![0.0; subset.len()];
    let mut scratch = vec![0.0; model.dims().n_inputs()];
    let mut samples = Vec::with_capacity(outer * inner);
    for _ in 0..outer {
        sampler.draw_conditioning(rng, &mut x_u);
        for _ in 0..inner {
            samples.push(sampler.sample_output(model, selector, &x_u, rng, &mut scratch)?);
        }
    }
    Ok(nested_estimate(&samples, outer, inner))
}

/// Single-shot unbiased estimate `y1 (y2 − y3)` of `g(U)`. `g(∅)` is exactly 0.
///
/// `y1, y2` are drawn given `x_U^(0)`, `y3` given an independent `x_U^(1)`.
pub fn nonnested_value<M: PabnModel + ?Sized>(
    model: &M,
    selector: OutputSelector,
    subset: SubsetKey,
    rng: &mut SimRng,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let sampler = SubsetSampler::new(model.residual_law(), subset)?;
    let k = subset.len();
    let mut x0 = vec![0.0; k];
    let mut x1 = vec![0.0; k];
    sampler.draw_conditioning(rng, &mut x0);
    sampler.draw_conditioning(rng, &mut x1);
    let mut scratch = vec![0.0; model.dims().n_inputs()];
    let y1 = sampler.sample_output(model, selector, &x0, rng, &mut scratch)?;
    let y2 = sampler.sample_output(model, selector, &x0, rng, &mut scratch)?;
    let y3 = sampler.sample_output(model, selector, &x1, rng, &mut scratch)?;
    Ok(nonnested_estimate(y1, y2, y3))
}

#[derive(Clone, Debug)]
pub struct NestedValuer<M> {
    pub model: M,
    pub selector: OutputSelector,
    pub sizes: NestedSizes,
}

impl<M: PabnModel> ValueFunction for NestedValuer<M> {
    fn evaluate(&self, subset: SubsetKey, rng: &mut SimRng) -> Result<f64> {
        nested_value(&self.model, self.selector, subset, self.sizes, rng)
    }

    fn cost(&self, subset: SubsetKey) -> u64 {
        if subset.is_empty() {
            0
        } else {
            (self.sizes.outer * self.sizes.inner) as u64
        }
    }
}

#[derive(Clone, Debug)]
pub struct NonNestedValuer<M> {
    pub model: M,
    pub selector: OutputSelector,
}

impl<M: PabnModel> ValueFunction for NonNestedValuer<M> {
    fn evaluate(&self, subset: SubsetKey, rng: &mut SimRng) -> Result<f64> {
        nonnested_value(&self.model, self.selector, subset, rng)
    }

    fn cost(&self, subset: SubsetKey) -> u64 {
        if subset.is_empty() {
            0
        } else {
            3
        }
    }
}

/// `P_{i,j}(π)`: the inputs other than `j` that precede `i` in `π`.
pub fn precedence_set(perm: &Permutation, i: usize, j: usize) -> SubsetKey {
    perm.prefix(i).without(j)
}

/// Per-draw memo of value estimates.
#[derive(Clone, Debug)]
pub struct ValueCache {
    enabled: bool,
    values: BTreeMap<SubsetKey, f64>,
    evaluations: u64,
    simulations: u64,
}

impl Default for ValueCache {
    fn default() -> Self {
        ValueCache::new(true)
    }
}

impl ValueCache {
    pub fn new(enabled: bool) -> Self {
        ValueCache {
            enabled,
            values: BTreeMap::new(),
            evaluations: 0,
            simulations: 0,
        }
    }

    /// Drops recorded values, keeping the work counters.
    pub fn clear(&mut self) {
        self.values.clear();
    }

    /// Value estimator calls made so far (cache misses).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn simulations(&self) -> u64 {
        self.simulations
    }

    /// Distinct subsets currently recorded.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns the recorded value or evaluates `subset` on the stream `stream_for(subset)`.
    pub fn value<V: ValueFunction + ?Sized>(
        &mut self,
        valuer: &V,
        subset: SubsetKey,
        stream_for: &impl Fn(SubsetKey) -> SimRng,
    ) -> Result<f64> {
        if self.enabled {
            if let Some(&v) = self.values.get(&subset) {
                return Ok(v);
            }
        }
        let mut rng = stream_for(subset);
        let v = valuer.evaluate(subset, &mut rng)?;
        self.evaluations += 1;
        self.simulations += valuer.cost(subset);
        if self.enabled {
            self.values.insert(subset, v);
        }
        Ok(v)
    }
}

/// `Δ_{i,j}(π) = g(P∪{i,j}) − g(P∪{i}) − g(P∪{j}) + g(P)` with `P = P_{i,j}(π)`.
///
/// The role of `i` must not depend on `π` for the average over permutations
/// to be unbiased; callers use the lower label unless stated otherwise.
pub fn delta_pair<V: ValueFunction + ?Sized>(
    valuer: &V,
    perm: &Permutation,
    i: usize,
    j: usize,
    cache: &mut ValueCache,
    stream_for: &impl Fn(SubsetKey) -> SimRng,
) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidArgument("pair members must differ"));
    }
    let p = precedence_set(perm, i, j);
    let both = cache.value(valuer, p.with(i).with(j), stream_for)?;
    let with_i = cache.value(valuer, p.with(i), stream_for)?;
    let with_j = cache.value(valuer, p.with(j), stream_for)?;
    let base = cache.value(valuer, p, stream_for)?;
    Ok(both - with_i - with_j + base)
}

/// `Δ` for every pair of one permutation, roles fixed to `(low, high)`.
pub fn deltas_for_permutation<V: ValueFunction + ?Sized>(
    valuer: &V,
    perm: &Permutation,
    cache: &mut ValueCache,
    stream_for: &impl Fn(SubsetKey) -> SimRng,
) -> Result<Vec<f64>> {
    pairs(perm.len())
        .map(|Pair { low, high }| delta_pair(valuer, perm, low, high, cache, stream_for))
        .collect()
}

/// Sample sizes of the equal-allocation nested algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NestedBudget {
    pub parameter_draws: usize,
    pub permutations: usize,
    pub sizes: NestedSizes,
}

impl NestedBudget {
    pub fn new(parameter_draws: usize, permutations: usize, outer: usize, inner: usize) -> Self {
        NestedBudget {
            parameter_draws,
            permutations,
            sizes: NestedSizes { outer, inner },
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.parameter_draws < 1 || self.permutations < 1 {
            return Err(Error::InvalidArgument("K and M must be positive"));
        }
        self.sizes.validate()?;
        Ok(self)
    }

    /// Nominal budget `K·M·N_O·N_I`.
    pub fn nominal(self) -> u64 {
        (self.parameter_draws * self.permutations * self.sizes.outer * self.sizes.inner) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedEstimate {
    pub estimates: PairTable<f64>,
    /// Sample variance of `Δ` across the `K·M` draws.
    pub delta_variances: PairTable<f64>,
    pub evaluations: u64,
    pub simulations: u64,
}

/// Equal allocation over `K` parameter draws and `M` permutations per draw,
/// every pair updated from every permutation.
///
/// `make_valuer` turns each drawn model into a value estimator; the nested
/// estimator is the usual choice (see [`algorithm1_nested`]).
pub fn algorithm1<F, V, B>(
    family: &F,
    posterior: &ParameterPosterior,
    budget: NestedBudget,
    seed: u64,
    use_cache: bool,
    make_valuer: B,
) -> Result<NestedEstimate>
where
    F: ModelFamily,
    V: ValueFunction,
    B: Fn(F::Model) -> V,
{
    budget.validate()?;
    let n = family.dims().n_inputs();
    if n < 2 {
        return Err(Error::InvalidArgument("at least two inputs are required"));
    }
    let mut sum = PairTable::filled(n, 0.0);
    let mut sum_sq = PairTable::filled(n, 0.0);
    let mut cache = ValueCache::new(use_cache);
    for k in 0..budget.parameter_draws as u64 {
        let model = sample_model(family, posterior, &mut stream(seed, &[TAG_PARAMS, k]))?;
        let valuer = make_valuer(model);
        for m in 0..budget.permutations as u64 {
            let perm = sample_permutation(n, &mut stream(seed, &[TAG_PERMUTATION, k, m]))?;
            cache.clear();
            let stream_for = |s: SubsetKey| stream(seed, &[TAG_VALUE, k, m, s.bits()]);
            let deltas = deltas_for_permutation(&valuer, &perm, &mut cache, &stream_for)?;
            for (idx, d) in deltas.iter().enumerate() {
                let pair = pairs(n).nth(idx).expect("pair index in range");
                *sum.at_mut(pair) += d;
                *sum_sq.at_mut(pair) += d * d;
            }
        }
    }
    let draws = (budget.parameter_draws * budget.permutations) as f64;
    let estimates = sum.map(|s| s / draws);
    let delta_variances = PairTable::from_values(
        n,
        sum.values()
            .iter()
            .zip(sum_sq.values())
            .map(|(s, sq)| {
                if draws < 2.0 {
                    f64::NAN
                } else {
                    ((sq - s * s / draws) / (draws - 1.0)).max(0.0)
                }
            })
            .collect(),
    )?;
    Ok(NestedEstimate {
        estimates,
        delta_variances,
        evaluations: cache.evaluations(),
        simulations: cache.simulations(),
    })
}

/// [`algorithm1`] with the nested value estimator.
pub fn algorithm1_nested<F: ModelFamily>(
    family: &F,
    posterior: &ParameterPosterior,
    budget: NestedBudget,
    selector: OutputSelector,
    seed: u64,
) -> Result<NestedEstimate> {
    let sizes = budget.sizes;
    algorithm1(family, posterior, budget, seed, true, |model| NestedValuer {
        model,
        selector,
        sizes,
    })
}

/// Largest input set handled by exact subset enumeration.
pub const EXACT_LIMIT: usize = 20;

pub(crate) fn ln_factorial(k: usize) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

/// Kahan-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(self) -> f64 {
        self.sum
    }
}

/// Value table `g(U)` for all `2^n` subsets.
pub fn tabulate<G: FnMut(SubsetKey) -> Result<f64>>(n: usize, mut value_fn: G) -> Result<Vec<f64>> {
    if n > EXACT_LIMIT {
        return Err(Error::SizeLimit { n, max: EXACT_LIMIT });
    }
    (0..1u64 << n).map(|b| value_fn(SubsetKey::from_bits(b))).collect()
}

/// Exact single-factor Shapley effects from a value table indexed by bitmask.
pub fn shapley_effects_from_table(table: &[f64], n: usize) -> Result<Vec<f64>> {
    if n > EXACT_LIMIT {
        return Err(Error::SizeLimit { n, max: EXACT_LIMIT });
    }
    if table.len() != 1 << n {
        return Err(Error::DimensionMismatch {
            what: "value table",
            expected: 1 << n,
            found: table.len(),
        });
    }
    let weights: Vec<f64> = (0..n)
        .map(|u| libm::exp(ln_factorial(n - u - 1) + ln_factorial(u) - ln_factorial(n)))
        .collect();
    Ok((0..n)
        .map(|i| {
            let mut acc = Compensated::default();
            for bits in 0..1u64 << n {
                if bits >> i & 1 == 1 {
                    continue;
                }
                let u = bits.count_ones() as usize;
                let gain = table[(bits | 1 << i) as usize] - table[bits as usize];
                acc.add(weights[u] * gain);
            }
            acc.value()
        })
        .collect())
}

/// Exact Shapley effects `Sh_i` by weighted subset enumeration.
pub fn shapley_effects_exact<G: FnMut(SubsetKey) -> Result<f64>>(value_fn: G, n: usize) -> Result<Vec<f64>> {
    let table = tabulate(n, value_fn)?;
    shapley_effects_from_table(&table, n)
}
