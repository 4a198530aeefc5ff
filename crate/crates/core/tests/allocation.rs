mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use sopabn_core::allocation::*;
use sopabn_core::estimators::{delta_pair, ExactValues, FnValuer, ValueCache};
use sopabn_core::oracle::shapley_owen_from_table;
use sopabn_core::pabn::OutputSelector;
use sopabn_core::sampling::{stream, ParameterPosterior, SimRng};
use sopabn_core::sets::pairs;
use sopabn_core::{Pair, Permutation, SubsetKey};

fn scalar_posterior() -> ParameterPosterior {
    ParameterPosterior::new(vec![0.0], DMatrix::identity(1, 1), vec![0]).unwrap()
}

/// `g(U) = scale · w` when `U ⊇ {0, 1}`, else 0: only the pair {0,1} has a
/// random `Δ`, every other pair's `Δ` is exactly 0.
fn one_noisy_pair(w: &[f64]) -> sopabn_core::Result<FnValuer<impl Fn(SubsetKey, &mut SimRng) -> sopabn_core::Result<f64>>> {
    let w = w[0];
    Ok(FnValuer(move |s: SubsetKey, _: &mut SimRng| {
        Ok(if s.contains(0) && s.contains(1) { 10.0 * w } else { 0.0 })
    }))
}

fn constant_valuer(_: &[f64]) -> sopabn_core::Result<FnValuer<impl Fn(SubsetKey, &mut SimRng) -> sopabn_core::Result<f64>>> {
    // Δ is 1 for the pair {0,1} and 0 for every other pair, whatever π is
    Ok(FnValuer(|s: SubsetKey, _: &mut SimRng| Ok(if s.contains(0) && s.contains(1) { 1.0 } else { 0.0 })))
}

#[test]
fn pilot_counts_and_zero_dispersion() {
    let (tracker, work) = pilot(5, &[0.0], &scalar_posterior(), 12, PointSampler::MonteCarlo, 1, constant_valuer).unwrap();
    assert_eq!(work.simulations, 0);
    for p in pairs(5) {
        assert_eq!(tracker.count(p), 12);
        assert_eq!(tracker.sample_sd(p).unwrap(), 0.0);
    }
    assert!(pilot(5, &[0.0], &scalar_posterior(), 1, PointSampler::MonteCarlo, 1, constant_valuer).is_err());
}

#[test]
fn pilot_only_run() {
    let budget = AllocationBudget::new(20, 20, 2, 0.1);
    let res = algorithm2(4, &[0.0], &scalar_posterior(), budget, PointSampler::MonteCarlo, 3, one_noisy_pair).unwrap();
    assert!(res.counts.values().iter().all(|&c| c == 20));
    assert_eq!(res.sequential_updates, 0);
    let (tracker, _) = pilot(4, &[0.0], &scalar_posterior(), 20, PointSampler::MonteCarlo, 3, one_noisy_pair).unwrap();
    assert_eq!(tracker.estimates(), res.estimates);
}

#[test]
fn allocation_follows_dispersion() {
    for rule in [GroupRule::Unbiased, GroupRule::LeftmostPrefix] {
        let budget = AllocationBudget {
            group_rule: rule,
            ..AllocationBudget::new(400, 10, 2, 0.1)
        };
        let res = algorithm2(5, &[0.0], &scalar_posterior(), budget, PointSampler::MonteCarlo, 4, one_noisy_pair).unwrap();
        let hot = res.counts.at(Pair::new(0, 1));
        assert!(res.counts.values().iter().all(|c| c <= hot));
        assert!(*hot > 300, "{rule:?}: {hot}");
    }
}

#[test]
fn pilot_sigma_can_be_frozen() {
    let budget = AllocationBudget {
        freeze_sigma: true,
        ..AllocationBudget::new(50, 5, 1, 0.1)
    };
    let res = algorithm2(3, &[0.0], &scalar_posterior(), budget, PointSampler::MonteCarlo, 5, one_noisy_pair).unwrap();
    assert!(res.tracker.is_frozen());
    assert_eq!(res.sequential_updates, 45);
}

#[test]
fn group_members_share_the_lead_terms() {
    // with labeled streams, reusing g(P) and g(P ∪ {i*}) across the group
    // equals evaluating every pair on its own
    let model = random_model(2, dims(3, 1, 2));
    let valuer = sopabn_core::estimators::NonNestedValuer {
        model: &model,
        selector: OutputSelector::CumulativeReward,
    };
    let perm = Permutation::new(vec![4, 1, 5, 0, 3, 2]).unwrap();
    let stream_for = |s: SubsetKey| stream(8, &[s.bits()]);
    let lead = 1;
    let partners = [5, 0, 3, 2];
    let mut shared = ValueCache::new(true);
    let reused: Vec<f64> = partners
        .iter()
        .map(|&j| delta_pair(&valuer, &perm, lead, j, &mut shared, &stream_for).unwrap())
        .collect();
    let separate: Vec<f64> = partners
        .iter()
        .map(|&j| delta_pair(&valuer, &perm, lead, j, &mut ValueCache::new(true), &stream_for).unwrap())
        .collect();
    assert_eq!(
        reused.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        separate.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    // 2 shared + 2 per partner instead of 4 per partner
    assert_eq!(shared.evaluations(), 2 + 2 * partners.len() as u64);
}

#[test]
fn confidence_interval_example() {
    let mut t = InteractionTracker::new(2);
    let p = Pair::new(0, 1);
    // mean 0, sample sd 2 from four values
    let a = (3.0f64).sqrt();
    for v in [a, -a, a, -a] {
        t.record(p, v);
    }
    assert!((t.sample_sd(p).unwrap() - 2.0).abs() < 1e-14);
    let (lo, hi) = confidence_interval(&t, p, 0.1).unwrap();
    assert!((hi - 1.6449).abs() < 1e-4 && (lo + 1.6449).abs() < 1e-4);
}

#[test]
fn whole_group_when_m_is_large() {
    let t = noisy_tracker(6, 3);
    let perm = Permutation::new(vec![3, 5, 0, 2, 1, 4]).unwrap();
    for rule in [GroupRule::Unbiased, GroupRule::LeftmostPrefix] {
        let g = select_group(&t, &perm, 100, 0.1, rule).unwrap();
        let expected: usize = match rule {
            GroupRule::Unbiased => 5,
            GroupRule::LeftmostPrefix => perm.successors(g.lead).len(),
        };
        assert_eq!(g.pairs.len(), expected);
        assert_eq!(g.pairs[0], g.argmax);
        let g1 = select_group(&t, &perm, 1, 0.1, rule).unwrap();
        assert_eq!(g1.pairs, vec![g1.argmax]);
    }
}

fn noisy_tracker(n: usize, seed: u64) -> InteractionTracker {
    use rand::Rng;
    let mut r = rng(seed);
    let mut t = InteractionTracker::new(n);
    for p in pairs(n) {
        let scale = r.random_range(0.1..3.0);
        for _ in 0..r.random_range(3..9) {
            t.record(p, scale * r.random_range(-1.0..1.0));
        }
    }
    t
}

/// Average of `Δ` for the argmax pair over all permutations, with the role of
/// `i` chosen by the rule.
fn enumerate_rule(table: &[f64], tracker: &InteractionTracker, rule: GroupRule) -> (Pair, f64) {
    let n = tracker.n_inputs();
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    let mut count = 0;
    let mut argmax = None;
    permute(&mut order, 0, &mut |o| {
        let perm = Permutation::new(o.to_vec()).unwrap();
        let g = select_group(tracker, &perm, 1, 0.1, rule).unwrap();
        argmax = Some(g.argmax);
        let mut c = ValueCache::default();
        let exact = ExactValues(table.to_vec());
        sum += delta_pair(&exact, &perm, g.lead, g.argmax.other(g.lead), &mut c, &|_| stream(0, &[])).unwrap();
        count += 1;
    });
    (argmax.unwrap(), sum / count as f64)
}

fn permute(order: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == order.len() {
        visit(order);
        return;
    }
    for i in k..order.len() {
        order.swap(k, i);
        permute(order, k + 1, visit);
        order.swap(k, i);
    }
}

#[test]
fn lead_tied_to_permutation_is_biased() {
    let model = random_model(5, dims(1, 1, 4));
    let table = model.value_table().unwrap();
    let exact = shapley_owen_from_table(&table, 4).unwrap();
    let tracker = noisy_tracker(4, 11);
    let (pair, unbiased) = enumerate_rule(&table, &tracker, GroupRule::Unbiased);
    let (_, leftmost) = enumerate_rule(&table, &tracker, GroupRule::LeftmostPrefix);
    let truth = *exact.at(pair);
    assert!((unbiased - truth).abs() < 1e-12);
    assert!((leftmost - truth).abs() > 1e-3 * truth.abs().max(1e-3), "{leftmost} vs {truth}");
}

#[test]
fn budget_identity_holds() {
    let model = random_family(6, dims(2, 1, 2));
    for (m, rule) in [(1, GroupRule::Unbiased), (2, GroupRule::LeftmostPrefix), (3, GroupRule::Unbiased)] {
        let budget = AllocationBudget {
            group_rule: rule,
            ..AllocationBudget::new(300, 10, m, 0.1)
        };
        let res = algorithm2_nonnested(&model, &ParameterPosterior::degenerate(), budget, PointSampler::MonteCarlo, OutputSelector::CumulativeReward, 2)
            .unwrap();
        let extra: u64 = res.counts.values().iter().map(|c| c - 10).sum();
        assert_eq!(extra, res.sequential_updates);
        assert!(res.counts.values().iter().all(|&c| c >= 10));
        assert_eq!(res.iterations, 300);
        assert_eq!(res.simulations % 3, 0);
    }
}

#[test]
fn simulation_cap_stops_early() {
    let model = random_family(7, dims(2, 1, 2));
    let budget = AllocationBudget {
        simulation_cap: Some(3000),
        ..AllocationBudget::new(1_000_000, 10, 2, 0.1)
    };
    let res = algorithm2_nonnested(&model, &ParameterPosterior::degenerate(), budget, PointSampler::Qmc { scramble_seed: 1 }, OutputSelector::CumulativeReward, 3)
        .unwrap();
    assert!(res.simulations >= 3000 && res.simulations < 3000 + 3 * 8);
    assert!(res.iterations < 1_000_000);
}

#[test]
fn runs_are_reproducible() {
    let model = random_family(8, dims(2, 1, 2));
    let budget = AllocationBudget::new(200, 10, 2, 0.1);
    let post = ParameterPosterior::degenerate();
    for sampler in [PointSampler::MonteCarlo, PointSampler::Qmc { scramble_seed: 4 }] {
        let a = algorithm2_nonnested(&model, &post, budget, sampler, OutputSelector::CumulativeReward, 9).unwrap();
        let b = algorithm2_nonnested(&model, &post, budget, sampler, OutputSelector::CumulativeReward, 9).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_invariant_to_common_scale(
        seed in 0u64..10_000,
        scale in 0.01f64..100.0,
        m in 1usize..4,
        order in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let (mut plain, mut scaled) = (InteractionTracker::new(5), InteractionTracker::new(5));
        for p in pairs(5) {
            let spread = r.random_range(0.1..3.0);
            for _ in 0..r.random_range(3..9) {
                let d = spread * r.random_range(-1.0..1.0);
                plain.record(p, d);
                scaled.record(p, scale * d);
            }
        }
        let perm = Permutation::new(order).unwrap();
        for rule in [GroupRule::Unbiased, GroupRule::LeftmostPrefix] {
            let a = select_group(&plain, &perm, m, 0.1, rule).unwrap();
            let b = select_group(&scaled, &perm, m, 0.1, rule).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn ghl_decreasing_in_count(sigma in 0.001f64..10.0, n in 1u64..10_000) {
        let z = z_value(0.1);
        prop_assert!(ghl_value(z, sigma, n) > ghl_value(z, sigma, n + 1));
        prop_assert!(ghl_value(z, sigma, n) >= 0.0);
    }
}
