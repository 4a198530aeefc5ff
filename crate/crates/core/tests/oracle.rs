mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use sopabn_core::linear::{LinearFamily, LinearModelParams};
use sopabn_core::oracle::*;
use sopabn_core::sampling::ParameterPosterior;
use sopabn_core::sets::pairs;
use sopabn_core::{ModelFamily, SubsetKey};

#[test]
fn diagonal_covariance_has_zero_interactions() {
    let mut r = rng(1);
    let d = dims(3, 1, 2);
    let cov = random_diagonal(&mut r, 6);
    let (p, q) = random_instance_with(&mut r, d, cov);
    let model = sopabn_core::linear::LinearModel::new(p, q).unwrap();
    let sh = exact_shapley_owen(|u| model.value_function(u), 6).unwrap();
    let scale = model.analytic_variance();
    assert!(sh.values().iter().all(|v| v.abs() < 1e-13 * scale));
}

#[test]
fn exchangeable_inputs_share_one_index() {
    // Y = e1 + e2 + e3 with equal variances and equal correlations
    let rho: f64 = 0.3;
    let g = |u: SubsetKey| -> sopabn_core::Result<f64> {
        let k = u.len() as f64;
        if k == 0.0 {
            return Ok(0.0);
        }
        // Var(E[Y | e_U]) = (k + k(k-1)ρ) (1 + (3-k)ρ / (1 + (k-1)ρ))^2
        let base = k + k * (k - 1.0) * rho;
        let factor = 1.0 + (3.0 - k) * rho / (1.0 + (k - 1.0) * rho);
        Ok(base * factor * factor)
    };
    let sh = exact_shapley_owen(g, 3).unwrap();
    let v = sh.values();
    assert!((v[0] - v[1]).abs() < 1e-14 && (v[1] - v[2]).abs() < 1e-14);
    let two = exact_via_permutations(g, 2).unwrap();
    let two_subset = exact_shapley_owen(g, 2).unwrap();
    assert!((two.get(0, 1) - two_subset.get(0, 1)).abs() < 1e-14);
}

#[test]
fn degenerate_posterior_truth_is_point_truth() {
    let family = random_family(2, dims(2, 1, 2));
    let model = family.instantiate(&family.base_parameters()).unwrap();
    let ex = exact_indices(&model.value_table().unwrap(), 4).unwrap();
    let truth = posterior_truth(&family, &ParameterPosterior::degenerate(), 10_000, 1).unwrap();
    assert_eq!(truth.pairs, ex.pairs);
    assert_eq!(truth.max_standard_error(), 0.0);
    assert_eq!(truth.k_truth, 10_000);
    let zero_cov = ParameterPosterior::new(vec![0.3], DMatrix::zeros(1, 1), vec![0]).unwrap();
    let mut base = family.base_parameters();
    base[0] = 0.3;
    let shifted = family.instantiate(&base).unwrap();
    let t0 = posterior_truth(&family, &zero_cov, 50, 1).unwrap();
    let ex0 = exact_indices(&shifted.value_table().unwrap(), 4).unwrap();
    for (a, b) in t0.pairs.values().iter().zip(ex0.pairs.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn random_slot_posterior(family: &LinearFamily, sd: f64) -> ParameterPosterior {
    // random dynamics coefficients: β^s entries follow μ^s and μ^a in the flat layout
    let d = family.dims();
    let offset = d.state * d.horizon + d.action * (d.horizon - 1);
    let slots: Vec<usize> = (offset..offset + 4).collect();
    let base = family.base_parameters();
    let mean: Vec<f64> = slots.iter().map(|&s| base[s]).collect();
    ParameterPosterior::new(mean, DMatrix::identity(4, 4) * (sd * sd), slots).unwrap()
}

#[test]
fn truth_standard_error_scales_with_draws() {
    let family = random_family(3, dims(2, 1, 2));
    let post = random_slot_posterior(&family, 0.2);
    let small = posterior_truth(&family, &post, 4000, 5).unwrap();
    let large = posterior_truth(&family, &post, 8000, 6).unwrap();
    for p in pairs(4) {
        let ratio = large.pair_standard_errors.at(p) / small.pair_standard_errors.at(p);
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{p:?}: {ratio}");
    }
}

#[test]
fn posterior_truth_efficiency_on_average() {
    let family = random_family(4, dims(2, 1, 2));
    let post = random_slot_posterior(&family, 0.1);
    let truth = posterior_truth(&family, &post, 200, 7).unwrap();
    let total: f64 = truth.singles.iter().sum();
    assert!((total - truth.total_variance).abs() < 1e-9 * truth.total_variance);
}

#[test]
fn relabeling_permutes_indices() {
    // swapping the two periods of a d_s = 1 model with no dynamics relabels inputs 0 and 1
    let mut r = rng(9);
    let d = dims(1, 1, 2);
    let (mut p, mut q) = random_instance(&mut r, d);
    p.beta_s[0].fill(0.0);
    p.beta_a[0].fill(0.0);
    q.theta[0].fill(0.0);
    q.b.iter_mut().for_each(|b| b.fill(0.0));
    let model = sopabn_core::linear::LinearModel::new(p.clone(), q.clone()).unwrap();
    let mut p2: LinearModelParams = p.clone();
    let v = p.law.covariance();
    let swapped = DMatrix::from_row_slice(2, 2, &[v[(1, 1)], v[(1, 0)], v[(0, 1)], v[(0, 0)]]);
    p2.law = sopabn_core::ResidualLaw::new(swapped).unwrap();
    let mut q2 = q.clone();
    q2.c.swap(0, 1);
    let model2 = sopabn_core::linear::LinearModel::new(p2, q2).unwrap();
    let a = exact_indices(&model.value_table().unwrap(), 2).unwrap();
    let b = exact_indices(&model2.value_table().unwrap(), 2).unwrap();
    assert!((a.singles[0] - b.singles[1]).abs() < 1e-12);
    assert!((a.singles[1] - b.singles[0]).abs() < 1e-12);
    assert!((a.pairs.get(0, 1) - b.pairs.get(1, 0)).abs() < 1e-12);
}

#[test]
fn pair_count_for_six_inputs() {
    let model = random_model(10, dims(3, 1, 2));
    let sh = exact_shapley_owen(|u| model.value_function(u), 6).unwrap();
    assert_eq!(sh.values().len(), 15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn subset_and_permutation_forms_agree(seed in 0u64..100_000, n in 2usize..7) {
        let model = random_model(seed, dims_for_inputs(n));
        let table = model.value_table().unwrap();
        let a = shapley_owen_from_table(&table, n).unwrap();
        let b = shapley_owen_via_permutations(&table, n).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn weights_sum_to_one(n in 2usize..=10) {
        let mut total = 0.0;
        for bits in 0u64..1 << (n - 2) {
            total += pair_weight(n, bits.count_ones() as usize);
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

struct UnitCost;

impl sopabn_core::estimators::ValueFunction for UnitCost {
    fn evaluate(&self, _s: SubsetKey, _rng: &mut sopabn_core::sampling::SimRng) -> sopabn_core::Result<f64> {
        Ok(0.0)
    }
    fn cost(&self, s: SubsetKey) -> u64 {
        u64::from(!s.is_empty())
    }
}

fn all_orders(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for head in all_orders(n - 1) {
        for pos in 0..=head.len() {
            let mut o = head.clone();
            o.insert(pos, n - 1);
            out.push(o);
        }
    }
    out
}

#[test]
fn evaluations_per_permutation_match_cache_counts() {
    use sopabn_core::estimators::{deltas_for_permutation, ValueCache};
    use sopabn_core::Permutation;
    assert_eq!(mean_evaluations_per_permutation(2).unwrap(), 3.0);
    for n in 3..=6 {
        let orders = all_orders(n);
        let mut total = 0u64;
        for o in &orders {
            let mut cache = ValueCache::new(true);
            let stream_for = |_s: SubsetKey| sopabn_core::sampling::stream(0, &[]);
            deltas_for_permutation(&UnitCost, &Permutation::new(o.clone()).unwrap(), &mut cache, &stream_for).unwrap();
            total += cache.simulations();
        }
        let expected = total as f64 / orders.len() as f64;
        let got = mean_evaluations_per_permutation(n).unwrap();
        assert!((got - expected).abs() < 1e-12, "n={n}: {got} vs {expected}");
    }
    assert!(mean_evaluations_per_permutation(9).is_err());
}
