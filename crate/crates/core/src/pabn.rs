//! The policy-augmented Bayesian network abstraction: residual law, model
//! capability, trajectory rollout, and conditional residual sampling.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, is_symmetric, psd_factor, submatrix};
use crate::sets::SubsetKey;

/// Residual `e_t^n`, addressed by 1-based period and state component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputIndex {
    period: usize,
    component: usize,
    flat: usize,
}

impl InputIndex {
    pub fn new(period: usize, component: usize, dims: Dims) -> Result<Self> {
        if period == 0 || period > dims.horizon || component == 0 || component > dims.state {
            return Err(Error::InvalidArgument("input index out of range"));
        }
        Ok(InputIndex {
            period,
            component,
            flat: (period - 1) * dims.state + (component - 1),
        })
    }

    pub fn from_flat(flat: usize, dims: Dims) -> Result<Self> {
        if flat >= dims.n_inputs() {
            return Err(Error::InvalidArgument("flat input index out of range"));
        }
        Ok(InputIndex {
            period: flat / dims.state + 1,
            component: flat % dims.state + 1,
            flat,
        })
    }

    pub fn period(self) -> usize {
        self.period
    }

    pub fn component(self) -> usize {
        self.component
    }

    pub fn flat(self) -> usize {
        self.flat
    }
}

/// State dimension, action dimension and horizon of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn n_inputs(self) -> usize {
        self.state * self.horizon
    }
}

/// Joint Gaussian law `N(0, V)` of the flattened residual vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualLaw {
    cov: DMatrix<f64>,
}

impl ResidualLaw {
    /// Validates symmetry and positive semi-definiteness (factorization under the jitter policy).
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch {
                what: "residual covariance columns",
                expected: cov.nrows(),
                found: cov.ncols(),
            });
        }
        if !is_symmetric(&cov, 1e-12) {
            return Err(Error::InvalidArgument("residual covariance must be symmetric"));
        }
        cholesky_with_jitter(&cov)?;
        Ok(ResidualLaw { cov })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Which scalar of a trajectory is the output `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputSelector {
    #[default]
    CumulativeReward,
    /// `s_t^n`, 1-based.
    StateComponent { period: usize, component: usize },
}

impl OutputSelector {
    pub fn validate(self, dims: Dims) -> Result<Self> {
        if let OutputSelector::StateComponent { period, component } = self {
            InputIndex::new(period, component, dims)?;
        }
        Ok(self)
    }
}

/// A fully parameterized process model: `w` and `θ` are fixed, all remaining
/// randomness enters through the residual vector.
///
/// Periods are 1-based. `action` is only queried for periods `1..H`; the
/// final-period action passed to `reward` is all zeros.
pub trait PabnModel {
    fn dims(&self) -> Dims;

    fn residual_law(&self) -> &ResidualLaw;

    /// `s_1` from the first-period residual.
    fn initial_state(&self, residual: &[f64], out: &mut [f64]) -> Result<()>;

    fn action(&self, period: usize, state: &[f64], out: &mut [f64]);

    /// `s_{t+1}` from `s_t`, `a_t` and `e_{t+1}`.
    fn transition(
        &self,
        period: usize,
        state: &[f64],
        action: &[f64],
        residual: &[f64],
        out: &mut [f64],
    ) -> Result<()>;

    fn reward(&self, period: usize, state: &[f64], action: &[f64]) -> f64;
}

impl<M: PabnModel + ?Sized> PabnModel for &M {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn residual_law(&self) -> &ResidualLaw {
        (**self).residual_law()
    }
    fn initial_state(&self, residual: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).initial_state(residual, out)
    }
    fn action(&self, period: usize, state: &[f64], out: &mut [f64]) {
        (**self).action(period, state, out)
    }
    fn transition(
        &self,
        period: usize,
        state: &[f64],
        action: &[f64],
        residual: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        (**self).transition(period, state, action, residual, out)
    }
    fn reward(&self, period: usize, state: &[f64], action: &[f64]) -> f64 {
        (**self).reward(period, state, action)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dims: Dims,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    cumulative_reward: f64,
}

impl Trajectory {
    /// Builds a trajectory from explicit parts; the cumulative reward is the sum of `rewards`.
    pub fn from_parts(dims: Dims, states: Vec<f64>, actions: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        let checks = [
            ("trajectory states", dims.horizon * dims.state, states.len()),
            ("trajectory actions", (dims.horizon - 1) * dims.action, actions.len()),
            ("trajectory rewards", dims.horizon, rewards.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { what, expected, found });
            }
        }
        let cumulative_reward = rewards.iter().sum();
        Ok(Trajectory {
            dims,
            states,
            actions,
            rewards,
            cumulative_reward,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// `s_t`, 1-based.
    pub fn state(&self, period: usize) -> &[f64] {
        let d = self.dims.state;
        &self.states[(period - 1) * d..period * d]
    }

    /// `a_t` for `t < H`, 1-based.
    pub fn action(&self, period: usize) -> &[f64] {
        let d = self.dims.action;
        &self.actions[(period - 1) * d..period * d]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.cumulative_reward
    }
}

fn check_residuals<M: PabnModel + ?Sized>(model: &M, residuals: &[f64]) -> Result<Dims> {
    let dims = model.dims();
    if residuals.len() != dims.n_inputs() {
        return Err(Error::DimensionMismatch {
            what: "residual vector",
            expected: dims.n_inputs(),
            found: residuals.len(),
        });
    }
    Ok(dims)
}

fn check_finite(state: &[f64], period: usize) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { period })
    }
}

/// Rolls the model forward over the whole horizon.
pub fn simulate<M: PabnModel + ?Sized>(model: &M, residuals: &[f64]) -> Result<Trajectory> {
    let dims = check_residuals(model, residuals)?;
    let (ds, da, h) = (dims.state, dims.action, dims.horizon);
    let mut states = vec![0.0; h * ds];
    let mut actions = vec![0.0; (h - 1) * da];
    let mut rewards = Vec::with_capacity(h);
    model.initial_state(&residuals[..ds], &mut states[..ds])?;
    check_finite(&states[..ds], 1)?;
    for t in 1..h {
        let (done, rest) = states.split_at_mut(t * ds);
        let current = &done[(t - 1) * ds..];
        let action = &mut actions[(t - 1) * da..t * da];
        model.action(t, current, action);
        rewards.push(model.reward(t, current, action));
        model.transition(t, current, action, &residuals[t * ds..(t + 1) * ds], &mut rest[..ds])?;
        check_finite(&rest[..ds], t + 1)?;
    }
    let zero_action = vec![0.0; da];
    rewards.push(model.reward(h, &states[(h - 1) * ds..], &zero_action));
    Trajectory::from_parts(dims, states, actions, rewards)
}

/// Output `Y` of one rollout. Deterministic given its arguments.
pub fn sample_trajectory<M: PabnModel + ?Sized>(
    model: &M,
    residuals: &[f64],
    selector: OutputSelector,
) -> Result<f64> {
    let dims = check_residuals(model, residuals)?;
    let (ds, da, h) = (dims.state, dims.action, dims.horizon);
    let last = match selector {
        OutputSelector::CumulativeReward => h,
        OutputSelector::StateComponent { period, .. } => period.min(h),
    };
    let mut state = vec![0.0; ds];
    let mut next = vec![0.0; ds];
    let mut action = vec![0.0; da];
    model.initial_state(&residuals[..ds], &mut state)?;
    check_finite(&state, 1)?;
    let mut total = 0.0;
    for t in 1..last {
        model.action(t, &state, &mut action);
        total += model.reward(t, &state, &action);
        model.transition(t, &state, &action, &residuals[t * ds..(t + 1) * ds], &mut next)?;
        check_finite(&next, t + 1)?;
        core::mem::swap(&mut state, &mut next);
    }
    Ok(match selector {
        OutputSelector::CumulativeReward => {
            action.iter_mut().for_each(|a| *a = 0.0);
            total + model.reward(h, &state, &action)
        }
        OutputSelector::StateComponent { component, .. } => state[component - 1],
    })
}

/// `N(mean, cov)` over the complement of a conditioned subset.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussian {
    /// Flat indices of the complement, increasing.
    pub complement: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Gaussian conditioning of the residual law on `e_U = values`.
///
/// `values` are given in increasing flat order of `subset`.
pub fn condition_residuals(
    law: &ResidualLaw,
    subset: SubsetKey,
    values: &[f64],
) -> Result<ConditionalGaussian> {
    if values.len() != subset.len() {
        return Err(Error::DimensionMismatch {
            what: "conditioning values",
            expected: subset.len(),
            found: values.len(),
        });
    }
    let parts = ConditionalParts::new(law, subset)?;
    let x = DVector::from_column_slice(values);
    Ok(ConditionalGaussian {
        mean: &parts.gain * x,
        cov: parts.cov,
        complement: parts.complement,
    })
}

struct ConditionalParts {
    members: Vec<usize>,
    complement: Vec<usize>,
    marginal_factor: DMatrix<f64>,
    gain: DMatrix<f64>,
    cov: DMatrix<f64>,
}

impl ConditionalParts {
    fn new(law: &ResidualLaw, subset: SubsetKey) -> Result<Self> {
        let n = law.dim();
        if subset.bits() >> n != 0 {
            return Err(Error::InvalidArgument("subset contains indices beyond the residual dimension"));
        }
        let members: Vec<usize> = subset.iter().collect();
        let complement: Vec<usize> = subset.complement(n).iter().collect();
        let v = law.covariance();
        let cov_cc = submatrix(v, &complement, &complement);
        if members.is_empty() {
            return Ok(ConditionalParts {
                gain: DMatrix::zeros(complement.len(), 0),
                marginal_factor: DMatrix::zeros(0, 0),
                cov: cov_cc,
                members,
                complement,
            });
        }
        let cov_uu = submatrix(v, &members, &members);
        let chol = cholesky_with_jitter(&cov_uu)?;
        // gain = Σ_{c,U} Σ_U^{-1}, obtained as (Σ_U^{-1} Σ_{U,c})ᵀ
        let cov_uc = submatrix(v, &members, &complement);
        let solved = chol.solve(&cov_uc);
        let gain = solved.transpose();
        let mut cov = cov_cc - &gain * &cov_uc;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(ConditionalParts {
            members,
            complement,
            marginal_factor: chol.l(),
            gain,
            cov,
        })
    }
}

/// Precomputed sampler for `x_U ~ F_{X_U}` followed by `e_{-U} | x_U`.
#[derive(Clone, Debug)]
pub struct SubsetSampler {
    dim: usize,
    subset: SubsetKey,
    members: Vec<usize>,
    complement: Vec<usize>,
    marginal_factor: DMatrix<f64>,
    gain: DMatrix<f64>,
    conditional_factor: DMatrix<f64>,
}

impl SubsetSampler {
    pub fn new(law: &ResidualLaw, subset: SubsetKey) -> Result<Self> {
        let parts = ConditionalParts::new(law, subset)?;
        Ok(SubsetSampler {
            dim: law.dim(),
            subset,
            conditional_factor: psd_factor(&parts.cov),
            members: parts.members,
            complement: parts.complement,
            marginal_factor: parts.marginal_factor,
            gain: parts.gain,
        })
    }

    pub fn subset(&self) -> SubsetKey {
        self.subset
    }

    /// Draws `x_U` (in increasing flat order). Consumes `|U|` normals.
    pub fn draw_conditioning<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = self.members.len();
        debug_assert_eq!(out.len(), k);
        let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..=r).map(|c| self.marginal_factor[(r, c)] * z[c]).sum();
        }
    }

    /// Writes the full residual vector: `x_U` at its flat indices, a conditional
    /// draw of the complement at the remaining indices. Consumes `|-U|` normals.
    pub fn complete<R: Rng + ?Sized>(&self, x_u: &[f64], rng: &mut R, residuals: &mut [f64]) {
        debug_assert_eq!(residuals.len(), self.dim);
        for (&idx, &x) in self.members.iter().zip(x_u) {
            residuals[idx] = x;
        }
        let c = self.complement.len();
        if c == 0 {
            return;
        }
        let z: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        for (r, &idx) in self.complement.iter().enumerate() {
            let mean: f64 = x_u
                .iter()
                .enumerate()
                .map(|(k, x)| self.gain[(r, k)] * x)
                .sum();
            let noise: f64 = (0..c).map(|k| self.conditional_factor[(r, k)] * z[k]).sum();
            residuals[idx] = mean + noise;
        }
    }

    /// One draw of `Y | X_U = x_U`.
    pub fn sample_output<M: PabnModel + ?Sized, R: Rng + ?Sized>(
        &self,
        model: &M,
        selector: OutputSelector,
        x_u: &[f64],
        rng: &mut R,
        scratch: &mut [f64],
    ) -> Result<f64> {
        self.complete(x_u, rng, scratch);
        sample_trajectory(model, scratch, selector)
    }
}

/// Draws `Y` from `F_{Y | X_U = x_U}`. The subset may be empty (unconditional
/// draw) or the full input set (no residual randomness remains).
pub fn sample_output_given_subset<M: PabnModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    selector: OutputSelector,
    subset: SubsetKey,
    x_u: &[f64],
    rng: &mut R,
) -> Result<f64> {
    if x_u.len() != subset.len() {
        return Err(Error::DimensionMismatch {
            what: "conditioning values",
            expected: subset.len(),
            found: x_u.len(),
        });
    }
    let sampler = SubsetSampler::new(model.residual_law(), subset)?;
    let mut scratch = vec![0.0; model.dims().n_inputs()];
    sampler.sample_output(model, selector, x_u, rng, &mut scratch)
}

/// A parametric family of models indexed by a flat parameter vector `w`.
///
/// The posterior over `w` lives in [`crate::sampling::ParameterPosterior`];
/// the family turns a draw into a concrete model.
pub trait ModelFamily {
    type Model: PabnModel;

    fn dims(&self) -> Dims;

    /// Configured values of every parameter slot.
    fn base_parameters(&self) -> Vec<f64>;

    fn instantiate(&self, parameters: &[f64]) -> Result<Self::Model>;
}
