mod common;

use std::cell::RefCell;
use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use sopabn_core::estimators::*;
use sopabn_core::linear::LinearModel;
use sopabn_core::oracle::{exact_shapley_owen, mse, posterior_truth};
use sopabn_core::pabn::OutputSelector;
use sopabn_core::sampling::{stream, ParameterPosterior, SimRng};
use sopabn_core::sets::pairs;
use sopabn_core::{Permutation, SubsetKey};

const Y: OutputSelector = OutputSelector::CumulativeReward;

fn labels(xs: &[usize]) -> SubsetKey {
    SubsetKey::from_indices(xs.iter().map(|x| x - 1))
}

#[test]
fn precedence_example() {
    let perm = Permutation::new(vec![2, 0, 1, 4, 3]).unwrap();
    assert_eq!(precedence_set(&perm, 1, 3), labels(&[3, 1]));
    assert_eq!(precedence_set(&perm, 2, 4), SubsetKey::EMPTY);
}

#[test]
fn figure_one_reuse() {
    // π = (1,3,2,4)
    let perm = Permutation::new(vec![0, 2, 1, 3]).unwrap();
    let calls: RefCell<BTreeMap<u64, u32>> = RefCell::new(BTreeMap::new());
    let valuer = FnValuer(|s: SubsetKey, _: &mut SimRng| {
        *calls.borrow_mut().entry(s.bits()).or_default() += 1;
        Ok(s.len() as f64)
    });
    let stream_for = |s: SubsetKey| stream(0, &[s.bits()]);
    let mut uncached = ValueCache::new(false);
    deltas_for_permutation(&valuer, &perm, &mut uncached, &stream_for).unwrap();
    assert_eq!(uncached.evaluations(), 24);
    let repeated: Vec<SubsetKey> = calls
        .borrow()
        .iter()
        .filter(|(_, &c)| c > 1)
        .map(|(&b, _)| SubsetKey::from_bits(b))
        .collect();
    let mut expected: Vec<SubsetKey> = [&[][..], &[1], &[1, 3], &[1, 2], &[1, 4], &[1, 3, 4], &[1, 2, 3]]
        .iter()
        .map(|s| labels(s))
        .collect();
    expected.sort();
    assert_eq!(repeated, expected);

    let mut cached = ValueCache::new(true);
    deltas_for_permutation(&valuer, &perm, &mut cached, &stream_for).unwrap();
    assert!(cached.evaluations() <= 17);
    assert_eq!(cached.evaluations() as usize, calls.borrow().len());
}

#[test]
fn two_inputs_single_difference() {
    let table = ExactValues(vec![0.0, 1.5, 2.0, 4.25]);
    let perm = Permutation::new(vec![1, 0]).unwrap();
    let mut cache = ValueCache::default();
    let d = delta_pair(&table, &perm, 0, 1, &mut cache, &|_| stream(0, &[])).unwrap();
    assert_eq!(d, 4.25 - 1.5 - 2.0);
}

#[test]
fn additive_value_function_has_no_interactions() {
    let mut r = rng(7);
    let d = dims(2, 1, 2);
    let cov = random_diagonal(&mut r, 4);
    let (p, q) = random_instance_with(&mut r, d, cov);
    let table = ExactValues(LinearModel::new(p, q).unwrap().value_table().unwrap());
    for seed in 0..10 {
        let perm = sopabn_core::sampling::sample_permutation(4, &mut stream(seed, &[])).unwrap();
        let mut cache = ValueCache::default();
        for d in deltas_for_permutation(&table, &perm, &mut cache, &|_| stream(0, &[])).unwrap() {
            assert!(d.abs() < 1e-12);
        }
    }
}

#[test]
fn single_draw_two_inputs_is_the_difference() {
    let family = random_family(3, dims(1, 1, 2));
    let post = ParameterPosterior::degenerate();
    let est = algorithm1(&family, &post, NestedBudget::new(1, 1, 2, 2), 5, true, |m: LinearModel| {
        ExactValues(m.value_table().unwrap())
    })
    .unwrap();
    let model = sopabn_core::ModelFamily::instantiate(&family, &sopabn_core::ModelFamily::base_parameters(&family)).unwrap();
    let t = model.value_table().unwrap();
    assert!((est.estimates.get(0, 1) - (t[3] - t[1] - t[2])).abs() < 1e-14);
    assert_eq!(est.estimates.get(0, 1), est.estimates.get(1, 0));
}

#[test]
fn cache_does_not_change_results() {
    let family = random_family(4, dims(2, 1, 2));
    let post = ParameterPosterior::degenerate();
    let budget = NestedBudget::new(3, 4, 5, 3);
    let run = |cache: bool| {
        algorithm1(&family, &post, budget, 77, cache, |model| NestedValuer {
            model,
            selector: Y,
            sizes: budget.sizes,
        })
        .unwrap()
    };
    let (with, without) = (run(true), run(false));
    let bits = |e: &NestedEstimate| e.estimates.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&with), bits(&without));
    assert!(with.evaluations < without.evaluations);
    assert_eq!(without.evaluations, 3 * 4 * 6 * 4);
    assert!(with.simulations < without.simulations);
    assert_eq!(with.simulations % 15, 0);
}

#[test]
fn value_estimators_unbiased_for_fixed_draw() {
    let model = random_model(12, dims(2, 1, 2));
    let table = model.value_table().unwrap();
    let sizes = NestedSizes { outer: 10, inner: 4 };
    for bits in 1..16u64 {
        let u = SubsetKey::from_bits(bits);
        let nested: Vec<f64> = (0..2000)
            .map(|k| nested_value(&model, Y, u, sizes, &mut stream(1, &[bits, k])).unwrap())
            .collect();
        let (m, se) = mean_and_se(&nested);
        assert!((m - table[bits as usize]).abs() < 3.0 * se, "nested {bits}: {m} vs {}", table[bits as usize]);
        let nn: Vec<f64> = (0..100_000)
            .map(|k| nonnested_value(&model, Y, u, &mut stream(2, &[bits, k])).unwrap())
            .collect();
        let (m, se) = mean_and_se(&nn);
        assert!((m - table[bits as usize]).abs() < 4.0 * se, "non-nested {bits}: {m} vs {}", table[bits as usize]);
    }
    assert_eq!(nonnested_value(&model, Y, SubsetKey::EMPTY, &mut stream(0, &[])).unwrap(), 0.0);
    assert_eq!(nested_value(&model, Y, SubsetKey::EMPTY, sizes, &mut stream(0, &[])).unwrap(), 0.0);
}

#[test]
fn delta_unbiased_for_fixed_permutation() {
    let model = random_model(13, dims(2, 1, 2));
    let table = ExactValues(model.value_table().unwrap());
    let perm = Permutation::new(vec![2, 0, 3, 1]).unwrap();
    let sizes = NestedSizes { outer: 10, inner: 3 };
    for p in pairs(4) {
        let mut c = ValueCache::default();
        let exact = delta_pair(&table, &perm, p.low, p.high, &mut c, &|_| stream(0, &[])).unwrap();
        let nested = NestedValuer { model: &model, selector: Y, sizes };
        let nn = NonNestedValuer { model: &model, selector: Y };
        for (tag, valuer) in [(0u64, &nested as &dyn ValueFunction), (1, &nn as &dyn ValueFunction)] {
            let ds: Vec<f64> = (0..10_000u64)
                .map(|k| {
                    let mut c = ValueCache::default();
                    delta_pair(valuer, &perm, p.low, p.high, &mut c, &|s| stream(9, &[tag, k, s.bits()])).unwrap()
                })
                .collect();
            let (m, se) = mean_and_se(&ds);
            assert!((m - exact).abs() < 4.0 * se, "{p:?} valuer {tag}: {m} vs {exact}");
        }
    }
}

#[test]
fn single_inner_sample_estimates_total_variance() {
    // with N_I = 1 each row mean is a fresh draw of Y, whatever U is
    let model = random_model(14, dims(2, 1, 2));
    let total = model.analytic_variance();
    let sizes = NestedSizes { outer: 20, inner: 1 };
    let xs: Vec<f64> = (0..4000)
        .map(|k| nested_value(&model, Y, SubsetKey::singleton(0), sizes, &mut stream(3, &[k])).unwrap())
        .collect();
    let (m, se) = mean_and_se(&xs);
    assert!((m - total).abs() < 4.0 * se);
}

#[test]
fn nested_sizes_validated() {
    assert!(NestedSizes { outer: 1, inner: 2 }.validate().is_err());
    assert!(NestedSizes { outer: 2, inner: 0 }.validate().is_err());
    assert!(NestedBudget::new(0, 1, 2, 2).validate().is_err());
}

#[test]
fn mse_falls_with_more_permutations() {
    let family = random_family(15, dims(2, 1, 2));
    let post = ParameterPosterior::degenerate();
    let truth = posterior_truth(&family, &post, 1, 0).unwrap();
    let sizes = NestedSizes { outer: 10, inner: 4 };
    let run = |k: usize, seed: u64| {
        let est = algorithm1(&family, &post, NestedBudget { parameter_draws: k, permutations: 10, sizes }, seed, true, |model| {
            NestedValuer { model, selector: Y, sizes }
        })
        .unwrap();
        mse(&est.estimates, &truth.pairs).unwrap()
    };
    let wins = (0..10u64).filter(|&rep| run(100, 1000 + rep) < run(1, 2000 + rep)).count();
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn zero_interactions_shrink_with_budget() {
    let mut r = rng(16);
    let d = dims(2, 1, 2);
    let cov = random_diagonal(&mut r, 4);
    let (p, q) = random_instance_with(&mut r, d, cov);
    let family = sopabn_core::linear::LinearFamily::new(p, q).unwrap();
    let post = ParameterPosterior::degenerate();
    let sizes = NestedSizes { outer: 10, inner: 2 };
    let mean_abs = |m: usize| {
        let reps: Vec<f64> = (0..8u64)
            .map(|seed| {
                let est = algorithm1(&family, &post, NestedBudget { parameter_draws: 1, permutations: m, sizes }, seed, true, |model| {
                    NestedValuer { model, selector: Y, sizes }
                })
                .unwrap();
                est.estimates.values().iter().map(|v| v.abs()).sum::<f64>() / 6.0
            })
            .collect();
        reps.iter().sum::<f64>() / reps.len() as f64
    };
    let (small, large) = (mean_abs(10), mean_abs(1000));
    // 1/sqrt(K M) predicts a factor of 10
    let ratio = small / large;
    assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn correlated_pair_shapley_effects() {
    let sh = shapley_effects_from_table(&[0.0, 2.25, 2.25, 3.0], 2).unwrap();
    assert!((sh[0] - 1.5).abs() < 1e-15 && (sh[1] - 1.5).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapley_efficiency(seed in 0u64..100_000, n in 2usize..7) {
        let model = random_model(seed, dims_for_inputs(n));
        let total = model.analytic_variance();
        let sh = shapley_effects_exact(|u| model.value_function(u), n).unwrap();
        prop_assert!((sh.iter().sum::<f64>() - total).abs() < 1e-10 * total.max(1.0));
    }

    #[test]
    fn precedence_excludes_pair(order in Just((0..7).collect::<Vec<usize>>()).prop_shuffle(), i in 0usize..7, j in 0usize..7) {
        prop_assume!(i != j);
        let perm = Permutation::new(order).unwrap();
        let p = precedence_set(&perm, i, j);
        prop_assert!(!p.contains(i) && !p.contains(j));
        for k in p.iter() {
            prop_assert!(perm.precedes(k, i));
        }
    }
}

#[test]
fn exact_pair_indices_match_between_paths() {
    let model = random_model(17, dims(1, 1, 3));
    let a = exact_shapley_owen(|u| model.value_function(u), 3).unwrap();
    let b = sopabn_core::oracle::exact_via_permutations(|u| model.value_function(u), 3).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}
