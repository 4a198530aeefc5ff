//! Linear Gaussian process model with closed-form pathway decomposition and
//! analytic value function.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, min_eigenvalue, project_psd, submatrix};
use crate::pabn::{Dims, ModelFamily, PabnModel, ResidualLaw};
use crate::sets::{SubsetKey, MAX_INPUTS};

/// Eigenvalue floor used when a drawn covariance has to be projected back to PSD.
pub const PSD_FLOOR: f64 = 1e-8;

/// `w = (μ^s, μ^a, β^s, β^a, V)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModelParams {
    pub dims: Dims,
    /// `μ_t^s`, `t = 1..H`.
    pub mu_s: Vec<DVector<f64>>,
    /// `μ_t^a`, `t = 1..H-1`.
    pub mu_a: Vec<DVector<f64>>,
    /// `β_t^s` (`d_s × d_s`), `t = 1..H-1`.
    pub beta_s: Vec<DMatrix<f64>>,
    /// `β_t^a` (`d_a × d_s`), `t = 1..H-1`.
    pub beta_a: Vec<DMatrix<f64>>,
    pub law: ResidualLaw,
}

/// Linear policy `a_t = μ_t^a + θ_tᵀ (s_t − μ_t^s)` and reward `m_t + b_tᵀ a_t + c_tᵀ s_t`.
///
/// There is no action in the final period, so `b_H` is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolicyReward {
    /// `θ_t` (`d_s × d_a`), `t = 1..H-1`.
    pub theta: Vec<DMatrix<f64>>,
    pub m: Vec<f64>,
    pub b: Vec<DVector<f64>>,
    pub c: Vec<DVector<f64>>,
}

fn expect(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}

fn expect_vectors(what: &'static str, v: &[DVector<f64>], count: usize, len: usize) -> Result<()> {
    expect(what, count, v.len())?;
    v.iter().try_for_each(|x| expect(what, len, x.len()))
}

fn expect_matrices(
    what: &'static str,
    v: &[DMatrix<f64>],
    count: usize,
    shape: (usize, usize),
) -> Result<()> {
    expect(what, count, v.len())?;
    v.iter().try_for_each(|m| {
        expect(what, shape.0, m.nrows())?;
        expect(what, shape.1, m.ncols())
    })
}

impl LinearModelParams {
    pub fn validate(&self) -> Result<()> {
        let Dims { state: ds, action: da, horizon: h } = self.dims;
        if h < 1 || ds < 1 {
            return Err(Error::InvalidArgument("linear model needs d_s >= 1 and H >= 1"));
        }
        expect_vectors("mu_s", &self.mu_s, h, ds)?;
        expect_vectors("mu_a", &self.mu_a, h - 1, da)?;
        expect_matrices("beta_s", &self.beta_s, h - 1, (ds, ds))?;
        expect_matrices("beta_a", &self.beta_a, h - 1, (da, ds))?;
        expect("residual covariance", ds * h, self.law.dim())
    }

    /// Number of slots in the flat parameter layout.
    pub fn flat_len(dims: Dims) -> usize {
        let Dims { state: ds, action: da, horizon: h } = dims;
        let de = ds * h;
        h * ds + (h - 1) * da + (h - 1) * ds * ds + (h - 1) * da * ds + de * (de + 1) / 2
    }

    /// Flat layout: `μ^s`, `μ^a`, `β^s` (row-major), `β^a` (row-major), then the
    /// upper triangle of `V` row by row.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::flat_len(self.dims));
        self.mu_s.iter().for_each(|v| out.extend(v.iter()));
        self.mu_a.iter().for_each(|v| out.extend(v.iter()));
        for m in self.beta_s.iter().chain(&self.beta_a) {
            for r in 0..m.nrows() {
                out.extend((0..m.ncols()).map(|c| m[(r, c)]));
            }
        }
        let v = self.law.covariance();
        for i in 0..v.nrows() {
            out.extend((i..v.ncols()).map(|j| v[(i, j)]));
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). A covariance that is not PSD is
    /// projected onto the PSD cone with eigenvalue floor [`PSD_FLOOR`].
    pub fn from_flat(dims: Dims, flat: &[f64]) -> Result<Self> {
        expect("linear parameter vector", Self::flat_len(dims), flat.len())?;
        let Dims { state: ds, action: da, horizon: h } = dims;
        let mut rest = flat;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head
        };
        let mu_s = (0..h).map(|_| DVector::from_column_slice(take(ds))).collect();
        let mu_a = (0..h - 1).map(|_| DVector::from_column_slice(take(da))).collect();
        let beta_s = (0..h - 1).map(|_| DMatrix::from_row_slice(ds, ds, take(ds * ds))).collect();
        let beta_a = (0..h - 1).map(|_| DMatrix::from_row_slice(da, ds, take(da * ds))).collect();
        let de = ds * h;
        let mut v = DMatrix::zeros(de, de);
        for i in 0..de {
            for (k, x) in take(de - i).iter().enumerate() {
                v[(i, i + k)] = *x;
                v[(i + k, i)] = *x;
            }
        }
        if min_eigenvalue(&v) < 0.0 {
            v = project_psd(&v, PSD_FLOOR);
        }
        let params = LinearModelParams {
            dims,
            mu_s,
            mu_a,
            beta_s,
            beta_a,
            law: ResidualLaw::new(v)?,
        };
        params.validate()?;
        Ok(params)
    }
}

impl LinearPolicyReward {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        let Dims { state: ds, action: da, horizon: h } = dims;
        expect_matrices("theta", &self.theta, h - 1, (ds, da))?;
        expect("m", h, self.m.len())?;
        expect_vectors("b", &self.b, h, da)?;
        expect_vectors("c", &self.c, h, ds)
    }
}

/// Closed-form decomposition `Y = γ + R e` of the cumulative reward.
#[derive(Clone, Debug, PartialEq)]
pub struct PathwayDecomposition {
    dims: Dims,
    gamma: f64,
    alpha: Vec<RowDVector<f64>>,
    /// `chain[t'-1][k] = R_{t', t'-1+k}` for `k = 0..=H-t'`.
    chain: Vec<Vec<DMatrix<f64>>>,
    coefficients: RowDVector<f64>,
}

impl PathwayDecomposition {
    /// Deterministic part of the cumulative reward.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `α_t`, 1-based.
    pub fn alpha(&self, period: usize) -> &RowDVector<f64> {
        &self.alpha[period - 1]
    }

    /// `R_{t',t}` for `t' - 1 <= t <= H - 1`, 1-based.
    pub fn chain(&self, from: usize, to: usize) -> &DMatrix<f64> {
        &self.chain[from - 1][to + 1 - from]
    }

    /// Block `R_{t'}` of the coefficient vector.
    pub fn block(&self, period: usize) -> RowDVector<f64> {
        let ds = self.dims.state;
        self.coefficients.columns((period - 1) * ds, ds).into_owned()
    }

    /// Flat coefficient row `R` over all residuals.
    pub fn coefficients(&self) -> &RowDVector<f64> {
        &self.coefficients
    }

    /// `γ + R e`.
    pub fn output(&self, residuals: &[f64]) -> f64 {
        self.gamma
            + self
                .coefficients
                .iter()
                .zip(residuals)
                .map(|(r, e)| r * e)
                .sum::<f64>()
    }
}

pub fn decompose(params: &LinearModelParams, policy: &LinearPolicyReward) -> Result<PathwayDecomposition> {
    params.validate()?;
    policy.validate(params.dims)?;
    let dims = params.dims;
    let Dims { state: ds, horizon: h, .. } = dims;

    // closed-loop state deviation map: δ_{t+1} = M_t δ_t + e_{t+1}
    let step: Vec<DMatrix<f64>> = (0..h - 1)
        .map(|t| params.beta_s[t].transpose() + params.beta_a[t].transpose() * policy.theta[t].transpose())
        .collect();
    let alpha: Vec<RowDVector<f64>> = (0..h)
        .map(|t| {
            let c = policy.c[t].transpose();
            if t + 1 < h {
                policy.b[t].transpose() * policy.theta[t].transpose() + c
            } else {
                c
            }
        })
        .collect();

    let mut chain = Vec::with_capacity(h);
    for from in 1..=h {
        let mut links = vec![DMatrix::identity(ds, ds)];
        for t in from..h {
            let next = &step[t - 1] * links.last().expect("chain starts with identity");
            links.push(next);
        }
        chain.push(links);
    }

    let mut coefficients = RowDVector::zeros(ds * h);
    for from in 1..=h {
        let mut block = RowDVector::zeros(ds);
        for t in from..=h {
            block += &alpha[t - 1] * &chain[from - 1][t - from];
        }
        coefficients.columns_mut((from - 1) * ds, ds).copy_from(&block);
    }

    let mut gamma = 0.0;
    for t in 0..h {
        gamma += policy.m[t] + policy.c[t].dot(&params.mu_s[t]);
        if t + 1 < h {
            gamma += policy.b[t].dot(&params.mu_a[t]);
        }
    }

    Ok(PathwayDecomposition {
        dims,
        gamma,
        alpha,
        chain,
        coefficients,
    })
}

/// `Var[Y] = R V Rᵀ`.
pub fn analytic_variance(dec: &PathwayDecomposition, law: &ResidualLaw) -> Result<f64> {
    expect("residual covariance", dec.coefficients.len(), law.dim())?;
    let r = &dec.coefficients;
    Ok((r * law.covariance() * r.transpose())[(0, 0)])
}

/// `g(U) = Var[E[Y | e_U]]` in closed form.
///
/// Returns an error when the result is negative beyond `1e-12 · Var[Y]`, which
/// signals a misconfigured covariance; smaller negative values are returned as is.
pub fn analytic_value_function(dec: &PathwayDecomposition, law: &ResidualLaw, subset: SubsetKey) -> Result<f64> {
    let n = law.dim();
    let total = analytic_variance(dec, law)?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    if subset == SubsetKey::full(n) {
        return Ok(total);
    }
    let members: Vec<usize> = subset.iter().collect();
    let complement: Vec<usize> = subset.complement(n).iter().collect();
    let v = law.covariance();
    let cov_uu = submatrix(v, &members, &members);
    let cov_uc = submatrix(v, &members, &complement);
    let chol = cholesky_with_jitter(&cov_uu)?;
    // Σ_U^{-1} Σ_{U,-U}
    let solved = chol.solve(&cov_uc);
    let r = &dec.coefficients;
    let r_u = DVector::from_iterator(members.len(), members.iter().map(|&i| r[i]));
    let r_c = DVector::from_iterator(complement.len(), complement.iter().map(|&i| r[i]));
    let u = solved * r_c + r_u;
    let value = (u.transpose() * cov_uu * &u)[(0, 0)];
    let tolerance = 1e-12 * total.abs();
    if value < -tolerance {
        return Err(Error::NegativeValue { value, tolerance });
    }
    Ok(value)
}

/// `g(U)` for every subset, indexed by bitmask.
pub fn value_table(dec: &PathwayDecomposition, law: &ResidualLaw) -> Result<Vec<f64>> {
    let n = law.dim();
    if n > 20 {
        return Err(Error::SizeLimit { n, max: 20 });
    }
    (0..1u64 << n)
        .map(|bits| analytic_value_function(dec, law, SubsetKey::from_bits(bits)))
        .collect()
}

/// A linear Gaussian model with its policy bound.
#[derive(Clone, Debug)]
pub struct LinearModel {
    params: LinearModelParams,
    policy: LinearPolicyReward,
}

impl LinearModel {
    pub fn new(params: LinearModelParams, policy: LinearPolicyReward) -> Result<Self> {
        params.validate()?;
        policy.validate(params.dims)?;
        if params.dims.n_inputs() > MAX_INPUTS {
            return Err(Error::SizeLimit {
                n: params.dims.n_inputs(),
                max: MAX_INPUTS,
            });
        }
        Ok(LinearModel { params, policy })
    }

    pub fn params(&self) -> &LinearModelParams {
        &self.params
    }

    pub fn policy(&self) -> &LinearPolicyReward {
        &self.policy
    }

    pub fn decompose(&self) -> PathwayDecomposition {
        decompose(&self.params, &self.policy).expect("dimensions validated at construction")
    }

    pub fn analytic_variance(&self) -> f64 {
        analytic_variance(&self.decompose(), &self.params.law).expect("dimensions validated at construction")
    }

    pub fn value_function(&self, subset: SubsetKey) -> Result<f64> {
        analytic_value_function(&self.decompose(), &self.params.law, subset)
    }

    pub fn value_table(&self) -> Result<Vec<f64>> {
        value_table(&self.decompose(), &self.params.law)
    }
}

impl PabnModel for LinearModel {
    fn dims(&self) -> Dims {
        self.params.dims
    }

    fn residual_law(&self) -> &ResidualLaw {
        &self.params.law
    }

    fn initial_state(&self, residual: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, mu), e) in out.iter_mut().zip(self.params.mu_s[0].iter()).zip(residual) {
            *o = mu + e;
        }
        Ok(())
    }

    fn action(&self, period: usize, state: &[f64], out: &mut [f64]) {
        let t = period - 1;
        let mu_s = &self.params.mu_s[t];
        let theta = &self.policy.theta[t];
        for (k, o) in out.iter_mut().enumerate() {
            let dev: f64 = (0..state.len()).map(|n| theta[(n, k)] * (state[n] - mu_s[n])).sum();
            *o = self.params.mu_a[t][k] + dev;
        }
    }

    fn transition(
        &self,
        period: usize,
        state: &[f64],
        action: &[f64],
        residual: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let t = period - 1;
        let p = &self.params;
        for (q, o) in out.iter_mut().enumerate() {
            let from_state: f64 = (0..state.len())
                .map(|n| p.beta_s[t][(n, q)] * (state[n] - p.mu_s[t][n]))
                .sum();
            let from_action: f64 = (0..action.len())
                .map(|k| p.beta_a[t][(k, q)] * (action[k] - p.mu_a[t][k]))
                .sum();
            *o = p.mu_s[t + 1][q] + from_state + from_action + residual[q];
        }
        Ok(())
    }

    fn reward(&self, period: usize, state: &[f64], action: &[f64]) -> f64 {
        let t = period - 1;
        let from_action = if period < self.params.dims.horizon {
            self.policy.b[t].iter().zip(action).map(|(b, a)| b * a).sum()
        } else {
            0.0
        };
        let from_state: f64 = self.policy.c[t].iter().zip(state).map(|(c, s)| c * s).sum();
        self.policy.m[t] + from_action + from_state
    }
}

/// Linear models sharing a policy, indexed by the flat layout of
/// [`LinearModelParams::to_flat`].
#[derive(Clone, Debug)]
pub struct LinearFamily {
    base: LinearModelParams,
    policy: LinearPolicyReward,
}

impl LinearFamily {
    pub fn new(base: LinearModelParams, policy: LinearPolicyReward) -> Result<Self> {
        LinearModel::new(base.clone(), policy.clone())?;
        Ok(LinearFamily { base, policy })
    }

    pub fn base(&self) -> &LinearModelParams {
        &self.base
    }

    pub fn policy(&self) -> &LinearPolicyReward {
        &self.policy
    }
}

impl ModelFamily for LinearFamily {
    type Model = LinearModel;

    fn dims(&self) -> Dims {
        self.base.dims
    }

    fn base_parameters(&self) -> Vec<f64> {
        self.base.to_flat()
    }

    fn instantiate(&self, parameters: &[f64]) -> Result<LinearModel> {
        let params = LinearModelParams::from_flat(self.base.dims, parameters)?;
        LinearModel::new(params, self.policy.clone())
    }
}
