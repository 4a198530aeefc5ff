//! Mature cell / progenitor negative-feedback culture model.
//!
//! States are progenitor density `S`, product density `P` and inhibitor
//! concentration `I`. Each period the inhibitor is diluted by the policy's
//! fraction, the kinetics are integrated with classical RK4, and the
//! period residual is added to the endpoint.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pabn::{Dims, ModelFamily, PabnModel, ResidualLaw, Trajectory};

pub const STATE_DIM: usize = 3;
pub type State = [f64; STATE_DIM];

const S: usize = 0;
const P: usize = 1;
const I: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackParams {
    pub growth_rate: f64,
    pub conversion_rate: f64,
    pub death_rate: f64,
    pub inhibitor_production: f64,
    pub inhibitor_sensitivity: f64,
    pub inhibitor_threshold: f64,
    pub period_length: f64,
    pub step: f64,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        FeedbackParams {
            growth_rate: 1.0,
            conversion_rate: 0.3,
            death_rate: 0.1,
            inhibitor_production: 0.2,
            inhibitor_sensitivity: 2.0,
            inhibitor_threshold: 1.5,
            period_length: 1.0,
            step: 0.01,
        }
    }
}

impl FeedbackParams {
    /// Number of RK4 steps per period.
    pub fn steps_per_period(&self) -> Result<usize> {
        if !(self.step > 0.0) || !(self.period_length > 0.0) {
            return Err(Error::InvalidArgument("step and period length must be positive"));
        }
        let ratio = self.period_length / self.step;
        let steps = libm::round(ratio);
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::InvalidArgument("period length must be an integer multiple of the step"));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.growth_rate,
            self.conversion_rate,
            self.death_rate,
            self.inhibitor_production,
            self.inhibitor_sensitivity,
        ];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || !self.inhibitor_threshold.is_finite() {
            return Err(Error::InvalidArgument("feedback rates must be finite and non-negative"));
        }
        self.steps_per_period().map(|_| ())
    }

    /// `r_g / (1 + exp(a (I - b)))` without overflow for large `|a (I - b)|`.
    fn inhibited_growth(&self, inhibitor: f64) -> f64 {
        let x = self.inhibitor_sensitivity * (inhibitor - self.inhibitor_threshold);
        if x > 0.0 {
            let e = libm::exp(-x);
            self.growth_rate * e / (1.0 + e)
        } else {
            self.growth_rate / (1.0 + libm::exp(x))
        }
    }

    pub fn derivative(&self, y: &State) -> State {
        [
            self.inhibited_growth(y[I]) - self.conversion_rate * y[S],
            self.conversion_rate * y[S] - self.death_rate * y[P],
            self.inhibitor_production * y[P],
        ]
    }

    fn flat(&self) -> [f64; 6] {
        [
            self.growth_rate,
            self.conversion_rate,
            self.death_rate,
            self.inhibitor_production,
            self.inhibitor_sensitivity,
            self.inhibitor_threshold,
        ]
    }
}

fn axpy(y: &State, k: &State, h: f64) -> State {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

/// Classical RK4 over one period with a fixed step `h`.
pub fn integrate_with_steps(params: &FeedbackParams, state: State, steps: usize, h: f64) -> State {
    let mut y = state;
    for _ in 0..steps {
        let k1 = params.derivative(&y);
        let k2 = params.derivative(&axpy(&y, &k1, h / 2.0));
        let k3 = params.derivative(&axpy(&y, &k2, h / 2.0));
        let k4 = params.derivative(&axpy(&y, &k3, h));
        for n in 0..STATE_DIM {
            y[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
        }
    }
    y
}

/// Integrates the kinetics over one period `ΔT`.
pub fn integrate_period(params: &FeedbackParams, state: State) -> Result<State> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { period: 0 });
    }
    let steps = params.steps_per_period()?;
    let out = integrate_with_steps(params, state, steps, params.period_length / steps as f64);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState { period: 0 })
    }
}

/// Dilute `I` by `fraction`, integrate one period, add the residual, clamp at zero.
pub fn transition(params: &FeedbackParams, state: State, fraction: f64, residual: &[f64]) -> Result<State> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument("dilution fraction must lie in [0, 1)"));
    }
    let mut start = state;
    start[I] *= 1.0 - fraction;
    let mut next = integrate_period(params, start)?;
    for (n, e) in next.iter_mut().zip(residual) {
        *n = (*n + e).max(0.0);
    }
    Ok(next)
}

/// PH-driven residual correlation: `e^i = l^i e^PH + e^{i'}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhCorrelation {
    pub loadings: [f64; STATE_DIM],
    pub ph_variance: f64,
    pub idiosyncratic: [f64; STATE_DIM],
}

impl Default for PhCorrelation {
    fn default() -> Self {
        PhCorrelation {
            loadings: [0.0; STATE_DIM],
            ph_variance: 0.04,
            idiosyncratic: [0.04; STATE_DIM],
        }
    }
}

impl PhCorrelation {
    pub fn validate(&self) -> Result<()> {
        if !(self.ph_variance >= 0.0) || self.idiosyncratic.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "PH variance must be non-negative and idiosyncratic variances positive",
            ));
        }
        Ok(())
    }

    /// Per-period block `B_ij = l^i l^j σ_PH² + δ_ij σ'_i²`.
    pub fn block(&self) -> DMatrix<f64> {
        DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| {
            let shared = self.loadings[i] * self.loadings[j] * self.ph_variance;
            if i == j {
                shared + self.idiosyncratic[i]
            } else {
                shared
            }
        })
    }
}

/// Block-diagonal residual law, periods independent.
pub fn build_covariance(corr: &PhCorrelation, horizon: usize) -> Result<ResidualLaw> {
    corr.validate()?;
    let block = corr.block();
    let n = STATE_DIM * horizon;
    let mut v = DMatrix::zeros(n, n);
    for t in 0..horizon {
        v.view_mut((t * STATE_DIM, t * STATE_DIM), (STATE_DIM, STATE_DIM))
            .copy_from(&block);
    }
    ResidualLaw::new(v)
}

/// Per-period dilution fractions with the reward coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct DilutionPolicy {
    /// Fraction of `I` removed at the start of periods `1..H-1`.
    pub fractions: Vec<f64>,
    pub dilution_cost: f64,
    pub product_value: f64,
}

impl DilutionPolicy {
    pub fn constant(fraction: f64, horizon: usize, dilution_cost: f64, product_value: f64) -> Self {
        DilutionPolicy {
            fractions: vec![fraction; horizon.saturating_sub(1)],
            dilution_cost,
            product_value,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.fractions.len() + 1 != horizon {
            return Err(Error::DimensionMismatch {
                what: "dilution fractions",
                expected: horizon - 1,
                found: self.fractions.len(),
            });
        }
        if self.fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::InvalidArgument("dilution fraction must lie in [0, 1)"));
        }
        if !(self.dilution_cost >= 0.0) || !(self.product_value >= 0.0) {
            return Err(Error::InvalidArgument("reward coefficients must be non-negative"));
        }
        Ok(())
    }
}

/// `c_P P_H − c_dil Σ_{t<H} fraction_t I_t`, with `I_t` taken before dilution.
pub fn reward(traj: &Trajectory, policy: &DilutionPolicy) -> f64 {
    let h = traj.dims().horizon;
    let cost: f64 = (1..h)
        .map(|t| policy.fractions[t - 1] * traj.state(t)[I])
        .sum();
    policy.product_value * traj.state(h)[P] - policy.dilution_cost * cost
}

#[derive(Clone, Debug)]
pub struct FeedbackModel {
    params: FeedbackParams,
    policy: DilutionPolicy,
    initial_state: State,
    law: ResidualLaw,
    horizon: usize,
}

impl FeedbackModel {
    pub fn new(
        params: FeedbackParams,
        policy: DilutionPolicy,
        initial_state: State,
        correlation: &PhCorrelation,
        horizon: usize,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1"));
        }
        params.validate()?;
        policy.validate(horizon)?;
        if initial_state.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state must be finite and non-negative"));
        }
        Ok(FeedbackModel {
            params,
            policy,
            initial_state,
            law: build_covariance(correlation, horizon)?,
            horizon,
        })
    }

    pub fn params(&self) -> &FeedbackParams {
        &self.params
    }

    pub fn policy(&self) -> &DilutionPolicy {
        &self.policy
    }
}

impl PabnModel for FeedbackModel {
    fn dims(&self) -> Dims {
        Dims {
            state: STATE_DIM,
            action: 1,
            horizon: self.horizon,
        }
    }

    fn residual_law(&self) -> &ResidualLaw {
        &self.law
    }

    fn initial_state(&self, residual: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, mu), e) in out.iter_mut().zip(self.initial_state).zip(residual) {
            *o = (mu + e).max(0.0);
        }
        Ok(())
    }

    fn action(&self, period: usize, _state: &[f64], out: &mut [f64]) {
        out[0] = self.policy.fractions[period - 1];
    }

    fn transition(
        &self,
        period: usize,
        state: &[f64],
        action: &[f64],
        residual: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let current = [state[S], state[P], state[I]];
        let next = transition(&self.params, current, action[0], residual).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { period: period + 1 },
            other => other,
        })?;
        out.copy_from_slice(&next);
        Ok(())
    }

    fn reward(&self, period: usize, state: &[f64], action: &[f64]) -> f64 {
        if period < self.horizon {
            -self.policy.dilution_cost * action[0] * state[I]
        } else {
            self.policy.product_value * state[P]
        }
    }
}

/// Feedback models indexed by the kinetic rates
/// `(r_g, r_c, r_d, r_p, a, b)`; drawn rates below zero are clamped to zero.
#[derive(Clone, Debug)]
pub struct FeedbackFamily {
    base: FeedbackModel,
}

impl FeedbackFamily {
    pub const PARAMETER_COUNT: usize = 6;

    pub fn new(base: FeedbackModel) -> Self {
        FeedbackFamily { base }
    }

    pub fn base(&self) -> &FeedbackModel {
        &self.base
    }
}

impl ModelFamily for FeedbackFamily {
    type Model = FeedbackModel;

    fn dims(&self) -> Dims {
        self.base.dims()
    }

    fn base_parameters(&self) -> Vec<f64> {
        self.base.params.flat().to_vec()
    }

    fn instantiate(&self, parameters: &[f64]) -> Result<FeedbackModel> {
        if parameters.len() != Self::PARAMETER_COUNT {
            return Err(Error::DimensionMismatch {
                what: "feedback parameter vector",
                expected: Self::PARAMETER_COUNT,
                found: parameters.len(),
            });
        }
        let mut model = self.base.clone();
        let p = &mut model.params;
        p.growth_rate = parameters[0].max(0.0);
        p.conversion_rate = parameters[1].max(0.0);
        p.death_rate = parameters[2].max(0.0);
        p.inhibitor_production = parameters[3].max(0.0);
        p.inhibitor_sensitivity = parameters[4].max(0.0);
        p.inhibitor_threshold = parameters[5];
        p.validate()?;
        Ok(model)
    }
}
