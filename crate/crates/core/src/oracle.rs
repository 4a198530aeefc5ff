//! Exact Shapley-Owen indices from a value table, posterior-averaged ground
//! truth for linear models, and MSE scoring.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::{ln_factorial, shapley_effects_from_table, tabulate, Compensated, EXACT_LIMIT};
use crate::linear::LinearFamily;
use crate::pabn::ModelFamily;
use crate::sampling::{sample_model, stream, ParameterPosterior};
use crate::sets::{pair_count, pairs, PairTable, Permutation, SubsetKey};

pub(crate) const TAG_TRUTH: u64 = 4;

/// Largest input set for the all-permutations form.
pub const PERMUTATION_LIMIT: usize = 8;

fn check_table(table: &[f64], n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(Error::SizeLimit { n, max: limit });
    }
    if table.len() != 1 << n {
        return Err(Error::DimensionMismatch {
            what: "value table",
            expected: 1 << n,
            found: table.len(),
        });
    }
    Ok(())
}

/// Weight `(n − u − 2)! u! / (n − 1)!` of a subset of size `u`.
pub fn pair_weight(n: usize, u: usize) -> f64 {
    libm::exp(ln_factorial(n - u - 2) + ln_factorial(u) - ln_factorial(n - 1))
}

fn second_difference(table: &[f64], base: u64, i: usize, j: usize) -> f64 {
    let (bi, bj) = (1u64 << i, 1u64 << j);
    table[(base | bi | bj) as usize] - table[(base | bi) as usize] - table[(base | bj) as usize] + table[base as usize]
}

/// Subset-form Shapley-Owen indices from a value table indexed by bitmask.
pub fn shapley_owen_from_table(table: &[f64], n: usize) -> Result<PairTable<f64>> {
    check_table(table, n, EXACT_LIMIT)?;
    if n < 2 {
        return Err(Error::InvalidArgument("at least two inputs are required"));
    }
    let weights: Vec<f64> = (0..n - 1).map(|u| pair_weight(n, u)).collect();
    let mut acc = vec![Compensated::default(); pair_count(n)];
    for base in 0..1u64 << n {
        let w = weights.get(base.count_ones() as usize).copied();
        let Some(w) = w else { continue };
        for (slot, p) in pairs(n).enumerate() {
            if base >> p.low & 1 == 0 && base >> p.high & 1 == 0 {
                acc[slot].add(w * second_difference(table, base, p.low, p.high));
            }
        }
    }
    PairTable::from_values(n, acc.into_iter().map(Compensated::value).collect())
}

/// Exact Shapley-Owen indices of `value_fn` over `n` inputs; each subset is evaluated once.
pub fn exact_shapley_owen<G: FnMut(SubsetKey) -> Result<f64>>(value_fn: G, n: usize) -> Result<PairTable<f64>> {
    let table = tabulate(n, value_fn)?;
    shapley_owen_from_table(&table, n)
}

/// Visits every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    visit(&order);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Permutation-form indices: the average of `Δ_{i,j}(π)` over all `n!` orderings.
pub fn shapley_owen_via_permutations(table: &[f64], n: usize) -> Result<PairTable<f64>> {
    check_table(table, n, PERMUTATION_LIMIT)?;
    if n < 2 {
        return Err(Error::InvalidArgument("at least two inputs are required"));
    }
    let mut acc = vec![Compensated::default(); pair_count(n)];
    let mut count = 0u64;
    for_each_permutation(n, |order| {
        let perm = Permutation::new(order.to_vec()).expect("valid permutation");
        for (slot, p) in pairs(n).enumerate() {
            let prefix = perm.prefix(p.low).without(p.high);
            acc[slot].add(second_difference(table, prefix.bits(), p.low, p.high));
        }
        count += 1;
    });
    PairTable::from_values(n, acc.into_iter().map(|a| a.value() / count as f64).collect())
}

pub fn exact_via_permutations<G: FnMut(SubsetKey) -> Result<f64>>(value_fn: G, n: usize) -> Result<PairTable<f64>> {
    if n > PERMUTATION_LIMIT {
        return Err(Error::SizeLimit {
            n,
            max: PERMUTATION_LIMIT,
        });
    }
    let table = tabulate(n, value_fn)?;
    shapley_owen_via_permutations(&table, n)
}

/// Mean number of distinct non-empty subsets whose values one permutation
/// needs when every pair's `Δ` is formed with roles `(low, high)` and values
/// are shared within the permutation. Averaged over all `n!` orderings.
pub fn mean_evaluations_per_permutation(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument("at least two inputs are required"));
    }
    if n > PERMUTATION_LIMIT {
        return Err(Error::SizeLimit {
            n,
            max: PERMUTATION_LIMIT,
        });
    }
    let mut total = 0u64;
    let mut count = 0u64;
    let mut seen: Vec<u64> = Vec::new();
    for_each_permutation(n, |order| {
        let perm = Permutation::new(order.to_vec()).expect("valid permutation");
        seen.clear();
        for p in pairs(n) {
            let base = perm.prefix(p.low).without(p.high);
            for s in [base, base.with(p.low), base.with(p.high), base.with(p.low).with(p.high)] {
                if !s.is_empty() {
                    seen.push(s.bits());
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        total += seen.len() as u64;
        count += 1;
    });
    Ok(total as f64 / count as f64)
}

/// Exact indices averaged over posterior draws of the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub pairs: PairTable<f64>,
    /// Monte Carlo standard error of each pair's average.
    pub pair_standard_errors: PairTable<f64>,
    pub singles: Vec<f64>,
    /// Posterior average of `Var(Y | w)`.
    pub total_variance: f64,
    pub k_truth: usize,
}

impl GroundTruth {
    pub fn n_inputs(&self) -> usize {
        self.pairs.n_inputs()
    }

    /// Largest pair standard error.
    pub fn max_standard_error(&self) -> f64 {
        self.pair_standard_errors.values().iter().copied().fold(0.0, f64::max)
    }
}

/// Exact indices of one value table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactIndices {
    pub pairs: PairTable<f64>,
    pub singles: Vec<f64>,
    pub total_variance: f64,
}

pub fn exact_indices(table: &[f64], n: usize) -> Result<ExactIndices> {
    Ok(ExactIndices {
        pairs: shapley_owen_from_table(table, n)?,
        singles: shapley_effects_from_table(table, n)?,
        total_variance: table[(1usize << n) - 1],
    })
}

/// Averages exact per-draw indices over `k_truth` posterior draws of a linear family.
pub fn posterior_truth(
    family: &LinearFamily,
    posterior: &ParameterPosterior,
    k_truth: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if k_truth < 1 {
        return Err(Error::InvalidArgument("K_truth must be positive"));
    }
    let n = family.dims().n_inputs();
    if posterior.dim() == 0 {
        let model = family.instantiate(&family.base_parameters())?;
        let ex = exact_indices(&model.value_table()?, n)?;
        return Ok(GroundTruth {
            pair_standard_errors: ex.pairs.map(|_| 0.0),
            pairs: ex.pairs,
            singles: ex.singles,
            total_variance: ex.total_variance,
            k_truth,
        });
    }
    let np = pair_count(n);
    let mut sum = vec![Compensated::default(); np];
    let mut sum_sq = vec![Compensated::default(); np];
    let mut singles = vec![Compensated::default(); n];
    let mut total = Compensated::default();
    for k in 0..k_truth as u64 {
        let model = sample_model(family, posterior, &mut stream(seed, &[TAG_TRUTH, k]))?;
        let ex = exact_indices(&model.value_table()?, n)?;
        for (slot, v) in ex.pairs.values().iter().enumerate() {
            sum[slot].add(*v);
            sum_sq[slot].add(v * v);
        }
        for (acc, v) in singles.iter_mut().zip(&ex.singles) {
            acc.add(*v);
        }
        total.add(ex.total_variance);
    }
    let kf = k_truth as f64;
    let means: Vec<f64> = sum.iter().map(|s| s.value() / kf).collect();
    let ses: Vec<f64> = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| {
            if k_truth < 2 {
                0.0
            } else {
                let var = (sq.value() - s.value() * s.value() / kf) / (kf - 1.0);
                libm::sqrt(var.max(0.0) / kf)
            }
        })
        .collect();
    Ok(GroundTruth {
        pairs: PairTable::from_values(n, means)?,
        pair_standard_errors: PairTable::from_values(n, ses)?,
        singles: singles.into_iter().map(|s| s.value() / kf).collect(),
        total_variance: total.value() / kf,
        k_truth,
    })
}

/// Mean squared error over all pairs.
pub fn mse(estimates: &PairTable<f64>, truth: &PairTable<f64>) -> Result<f64> {
    if estimates.n_inputs() != truth.n_inputs() {
        return Err(Error::PairSetMismatch {
            left: estimates.n_inputs(),
            right: truth.n_inputs(),
        });
    }
    let values = estimates.values();
    let sq: f64 = values.iter().zip(truth.values()).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok(sq / values.len() as f64)
}
