use nalgebra::DMatrix;
use sopabn_core::feedback::*;
use sopabn_core::pabn::{sample_trajectory, simulate, OutputSelector, PabnModel};

fn block_of(l: [f64; 3]) -> DMatrix<f64> {
    PhCorrelation {
        loadings: l,
        ph_variance: 1.0,
        idiosyncratic: [1.0; 3],
    }
    .block()
}

#[test]
fn dependence_blocks() {
    assert_eq!(block_of([0.0; 3]), DMatrix::identity(3, 3));
    let strong = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, 1.0, -1.0, 1.0, 2.0]);
    assert_eq!(block_of([-1.0, 1.0, 1.0]), strong);
    let low = DMatrix::from_row_slice(3, 3, &[1.25, -0.25, -0.25, -0.25, 1.25, 0.25, -0.25, 0.25, 1.25]);
    assert!((block_of([-0.5, 0.5, 0.5]) - low).abs().max() < 1e-15);
}

#[test]
fn covariance_structure() {
    let corr = PhCorrelation {
        loadings: [-0.7, 0.4, 1.1],
        ..Default::default()
    };
    let law = build_covariance(&corr, 4).unwrap();
    let v = law.covariance();
    assert_eq!(v.nrows(), 12);
    for a in 0..12 {
        for b in 0..12 {
            let (ta, tb) = (a / 3, b / 3);
            if ta != tb {
                assert_eq!(v[(a, b)], 0.0);
            } else if a != b {
                let sign = (corr.loadings[a % 3] * corr.loadings[b % 3]).signum();
                assert_eq!(v[(a, b)].signum(), sign);
            }
        }
    }
}

#[test]
fn invalid_correlation_rejected() {
    let corr = PhCorrelation {
        idiosyncratic: [0.1, 0.0, 0.1],
        ..Default::default()
    };
    assert!(build_covariance(&corr, 2).is_err());
}

#[test]
fn constant_sigmoid_growth() {
    let params = FeedbackParams {
        inhibitor_sensitivity: 0.0,
        conversion_rate: 0.0,
        ..Default::default()
    };
    let out = integrate_period(&params, [0.7, 0.0, 0.3]).unwrap();
    assert!((out[0] - (0.7 + params.growth_rate * params.period_length / 2.0)).abs() < 1e-12);
}

#[test]
fn product_decay() {
    let params = FeedbackParams {
        growth_rate: 0.0,
        conversion_rate: 0.0,
        inhibitor_production: 0.0,
        death_rate: 0.4,
        step: 0.01,
        ..Default::default()
    };
    let out = integrate_period(&params, [0.0, 2.0, 1.0]).unwrap();
    let exact = 2.0 * (-0.4f64).exp();
    assert!(((out[1] - exact) / exact).abs() < 1e-6);
}

#[test]
fn fourth_order_convergence() {
    let params = FeedbackParams {
        period_length: 4.0,
        ..Default::default()
    };
    let y0 = [1.0, 0.5, 1.2];
    let t = params.period_length;
    let reference = integrate_with_steps(&params, y0, 4096, t / 4096.0);
    let err = |steps: usize| {
        let y = integrate_with_steps(&params, y0, steps, t / steps as f64);
        y.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (8usize, 64usize);
    let (ec, ef) = (err(coarse), err(fine));
    let slope = (ec / ef).ln() / ((fine as f64 / coarse as f64).ln());
    assert!((3.7..=4.3).contains(&slope), "slope {slope}");
    let ratio = err(16) / err(32);
    assert!((12.0..20.0).contains(&ratio), "halving ratio {ratio}");
}

#[test]
fn step_must_divide_period() {
    let params = FeedbackParams {
        step: 0.3,
        ..Default::default()
    };
    assert!(params.validate().is_err());
}

#[test]
fn dilution_halves_inhibitor_first() {
    let params = FeedbackParams::default();
    let diluted = transition(&params, [1.0, 1.0, 2.0], 0.5, &[0.0; 3]).unwrap();
    let direct = integrate_period(&params, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(diluted, direct);
}

#[test]
fn frozen_dynamics_keep_state() {
    let params = FeedbackParams {
        growth_rate: 0.0,
        conversion_rate: 0.0,
        death_rate: 0.0,
        inhibitor_production: 0.0,
        ..Default::default()
    };
    let s = [0.4, 1.3, 0.9];
    assert_eq!(transition(&params, s, 0.0, &[0.0; 3]).unwrap(), s);
}

#[test]
fn negative_residuals_clamp() {
    let params = FeedbackParams::default();
    let s = transition(&params, [1.0, 1.0, 1.0], 0.5, &[-100.0, -100.0, -100.0]).unwrap();
    assert_eq!(s, [0.0, 0.0, 0.0]);
    let extreme = transition(&params, [1.0, 1.0, 1e6], 0.0, &[0.0; 3]).unwrap();
    assert!(extreme.iter().all(|v| v.is_finite()));
}

#[test]
fn fraction_out_of_range() {
    assert!(transition(&FeedbackParams::default(), [1.0; 3], 1.0, &[0.0; 3]).is_err());
}

fn default_model(policy: DilutionPolicy, horizon: usize) -> FeedbackModel {
    FeedbackModel::new(FeedbackParams::default(), policy, [1.0, 0.0, 0.0], &PhCorrelation::default(), horizon).unwrap()
}

#[test]
fn reward_reduces_to_product_without_cost() {
    let e: Vec<f64> = (0..15).map(|i| 0.01 * (i as f64 - 7.0)).collect();
    for policy in [DilutionPolicy::constant(0.5, 5, 0.0, 2.0), DilutionPolicy::constant(0.0, 5, 0.3, 2.0)] {
        let model = default_model(policy.clone(), 5);
        let traj = simulate(&model, &e).unwrap();
        let y = reward(&traj, &policy);
        assert!((y - 2.0 * traj.state(5)[1]).abs() < 1e-14);
        assert!((traj.cumulative_reward() - y).abs() < 1e-12);
    }
}

#[test]
fn hand_built_reward() {
    let policy = DilutionPolicy {
        fractions: vec![0.25],
        dilution_cost: 0.5,
        product_value: 3.0,
    };
    let model = default_model(policy.clone(), 2);
    let traj = sopabn_core::Trajectory::from_parts(
        model.dims(),
        vec![1.0, 0.2, 0.8, 0.9, 1.4, 0.3],
        vec![0.25],
        vec![0.0, 0.0],
    )
    .unwrap();
    // 3 * 1.4 - 0.5 * 0.25 * 0.8
    assert!((reward(&traj, &policy) - 4.1).abs() < 1e-14);
}

#[test]
fn cumulative_reward_matches_reward_function() {
    let policy = DilutionPolicy::constant(0.5, 5, 0.1, 1.0);
    let model = default_model(policy.clone(), 5);
    let e: Vec<f64> = (0..15).map(|i| 0.03 * ((i * 7 % 5) as f64 - 2.0)).collect();
    let traj = simulate(&model, &e).unwrap();
    let y = sample_trajectory(&model, &e, OutputSelector::CumulativeReward).unwrap();
    assert!((y - reward(&traj, &policy)).abs() < 1e-12);
}

#[test]
fn inhibitor_nondecreasing_within_period() {
    let params = FeedbackParams::default();
    let mut y = [1.0, 0.5, 0.2];
    for _ in 0..100 {
        let next = integrate_with_steps(&params, y, 1, 0.01);
        assert!(next[2] >= y[2]);
        y = next;
    }
}

#[test]
fn dilution_efficacy() {
    // without inhibitor production the post-dilution level carries through the period
    let params = FeedbackParams {
        inhibitor_production: 0.0,
        ..Default::default()
    };
    let e = [0.01, -0.02, 0.03];
    let s = [0.8, 0.6, 1.7];
    let half = transition(&params, s, 0.5, &e).unwrap();
    let none = transition(&params, s, 0.0, &e).unwrap();
    assert_eq!(half[2] - e[2], 0.5 * (none[2] - e[2]));
}

#[test]
fn initial_state_clamped() {
    let model = default_model(DilutionPolicy::constant(0.5, 2, 0.1, 1.0), 2);
    let traj = simulate(&model, &[-5.0, 0.1, 0.2, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(traj.state(1), &[0.0, 0.1, 0.2]);
}

#[test]
fn family_round_trip() {
    let model = default_model(DilutionPolicy::constant(0.5, 5, 0.1, 1.0), 5);
    let family = FeedbackFamily::new(model.clone());
    use sopabn_core::ModelFamily;
    let base = family.base_parameters();
    assert_eq!(base.len(), FeedbackFamily::PARAMETER_COUNT);
    let again = family.instantiate(&base).unwrap();
    assert_eq!(again.params(), model.params());
    let mut negative = base.clone();
    negative[0] = -1.0;
    assert_eq!(family.instantiate(&negative).unwrap().params().growth_rate, 0.0);
}
