//! Randomness: labeled RNG streams, posterior parameter draws, uniform
//! permutations, and scrambled Halton points with their mappings to
//! parameter draws and permutations.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, psd_factor};
use crate::pabn::ModelFamily;
use crate::sets::Permutation;

/// Generator used for every simulation stream.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by a master seed and a path of labels.
///
/// The same `(seed, labels)` always yields the same stream, on every platform.
pub fn stream(seed: u64, labels: &[u64]) -> SimRng {
    let mut h = splitmix64(seed ^ 0x5350_4142_4E00_0000);
    for (depth, &label) in labels.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(label.wrapping_add((depth as u64 + 1) << 56)));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    SimRng::from_seed(key)
}

/// Derives a child seed, for handing a whole sub-experiment its own seed space.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    stream(seed, labels).random()
}

/// Gaussian posterior over the random slots of a model family's parameter vector.
///
/// Slots not listed in `slots` keep their configured values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    slots: Vec<usize>,
    factor: DMatrix<f64>,
}

impl ParameterPosterior {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, slots: Vec<usize>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "posterior covariance",
                expected: d,
                found: covariance.nrows(),
            });
        }
        if slots.len() != d {
            return Err(Error::DimensionMismatch {
                what: "posterior slots",
                expected: d,
                found: slots.len(),
            });
        }
        let mut sorted = slots.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("posterior slots must be distinct"));
        }
        if !is_symmetric(&covariance, 1e-12) {
            return Err(Error::InvalidArgument("posterior covariance must be symmetric"));
        }
        let scale = covariance.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if min_eigenvalue(&covariance) < -1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularSubmatrix { dim: d });
        }
        let factor = psd_factor(&covariance);
        Ok(ParameterPosterior {
            mean: DVector::from_vec(mean),
            covariance,
            slots,
            factor,
        })
    }

    /// Point mass at the family's configured parameters (`d_w = 0`).
    pub fn degenerate() -> Self {
        ParameterPosterior {
            mean: DVector::zeros(0),
            covariance: DMatrix::zeros(0, 0),
            slots: Vec::new(),
            factor: DMatrix::zeros(0, 0),
        }
    }

    /// `d_w`, the number of random slots.
    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Writes `draw` into its slots of `base`.
    pub fn embed(&self, draw: &[f64], base: &[f64]) -> Result<Vec<f64>> {
        if draw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "posterior draw",
                expected: self.dim(),
                found: draw.len(),
            });
        }
        let mut full = base.to_vec();
        for (&slot, &value) in self.slots.iter().zip(draw) {
            *full
                .get_mut(slot)
                .ok_or(Error::InvalidArgument("posterior slot beyond parameter vector"))? = value;
        }
        Ok(full)
    }

    /// Values of the random slots of a full parameter vector.
    pub fn extract(&self, full: &[f64]) -> Vec<f64> {
        self.slots.iter().map(|&s| full[s]).collect()
    }

    /// `mean + L z`.
    pub fn draw_from_normals(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

/// Full parameter vector `w` with the random slots drawn from the posterior.
pub fn sample_posterior<R: Rng + ?Sized>(post: &ParameterPosterior, base: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let z: Vec<f64> = (0..post.dim()).map(|_| rng.sample(StandardNormal)).collect();
    post.embed(&post.draw_from_normals(&z), base)
}

/// Draws `w` and instantiates the family's model.
pub fn sample_model<F: ModelFamily, R: Rng + ?Sized>(
    family: &F,
    post: &ParameterPosterior,
    rng: &mut R,
) -> Result<F::Model> {
    let w = sample_posterior(post, &family.base_parameters(), rng)?;
    family.instantiate(&w)
}

/// Uniform permutation of `0..n` by Fisher-Yates.
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Permutation> {
    if n < 2 {
        return Err(Error::InvalidArgument("permutations need at least two inputs"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Permutation::new(order)
}

/// The first `count` primes.
pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    value
}

/// Number of base-`b` digits resolving at least 2^-52.
fn digit_count(base: u64) -> usize {
    let mut digits = 0;
    let mut reach = 1.0f64;
    while reach < 4.503_599_627_370_496e15 {
        reach *= base as f64;
        digits += 1;
    }
    digits
}

/// Multidimensional Halton stream with optional random digit scrambling.
///
/// Dimension `k` uses the `k`-th prime as base. The counter starts at 1.
#[derive(Clone, Debug)]
pub struct QmcStream {
    bases: Vec<u64>,
    counter: u64,
    /// `scramble[k][digit][d]`: permuted value of digit `d` at position `digit` for dimension `k`.
    scramble: Option<Vec<Vec<Vec<u32>>>>,
}

impl QmcStream {
    pub fn unscrambled(dimension: usize) -> Self {
        QmcStream {
            bases: first_primes(dimension),
            counter: 1,
            scramble: None,
        }
    }

    pub fn scrambled(dimension: usize, scramble_seed: u64) -> Self {
        let bases = first_primes(dimension);
        let scramble = bases
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let mut rng = stream(scramble_seed, &[0x4841_4c54, k as u64]);
                (0..digit_count(b))
                    .map(|_| {
                        let mut perm: Vec<u32> = (0..b as u32).collect();
                        perm.shuffle(&mut rng);
                        perm
                    })
                    .collect()
            })
            .collect();
        QmcStream {
            bases,
            counter: 1,
            scramble: Some(scramble),
        }
    }

    pub fn dimension(&self) -> usize {
        self.bases.len()
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Point at an explicit index, leaving the counter untouched.
    pub fn point_at(&self, index: u64) -> Vec<f64> {
        const LO: f64 = 1.0 / 9_007_199_254_740_992.0;
        self.bases
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let raw = match &self.scramble {
                    None => radical_inverse(index, b),
                    Some(tables) => {
                        let inv = 1.0 / b as f64;
                        let mut scale = inv;
                        let mut rest = index;
                        let mut value = 0.0;
                        for perm in &tables[k] {
                            value += perm[(rest % b) as usize] as f64 * scale;
                            rest /= b;
                            scale *= inv;
                        }
                        value
                    }
                };
                raw.clamp(LO, 1.0 - LO)
            })
            .collect()
    }

    /// Next point; advances the counter.
    pub fn next_point(&mut self) -> Vec<f64> {
        let p = self.point_at(self.counter);
        self.counter += 1;
        p
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile; `±∞` at the endpoints.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        Normal::standard().inverse_cdf(p)
    }
}

/// Permutation from `n - 1` uniforms by successive selection among the
/// remaining elements; the last element is forced.
pub fn lehmer_permutation(coords: &[f64], n: usize) -> Result<Permutation> {
    if n == 0 || coords.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            what: "permutation coordinates",
            expected: n.saturating_sub(1),
            found: coords.len(),
        });
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    for (k, &u) in coords.iter().enumerate() {
        let choices = n - k;
        let pick = ((u * choices as f64) as usize).min(choices - 1);
        order.push(remaining.remove(pick));
    }
    order.push(remaining[0]);
    Permutation::new(order)
}

/// QMC point dimension for a posterior with `d_w` random slots and `n_inputs` inputs.
pub fn qmc_dimension(post: &ParameterPosterior, n_inputs: usize) -> usize {
    post.dim() + n_inputs - 1
}

/// Maps a point of `(0,1)^{d_w + n - 1}` to a full parameter vector and a permutation.
pub fn qmc_to_sample(
    point: &[f64],
    post: &ParameterPosterior,
    base: &[f64],
    n_inputs: usize,
) -> Result<(Vec<f64>, Permutation)> {
    let dw = post.dim();
    if point.len() != qmc_dimension(post, n_inputs) {
        return Err(Error::DimensionMismatch {
            what: "QMC point",
            expected: qmc_dimension(post, n_inputs),
            found: point.len(),
        });
    }
    let z: Vec<f64> = point[..dw].iter().map(|&u| normal_quantile(u)).collect();
    let w = post.embed(&post.draw_from_normals(&z), base)?;
    let perm = lehmer_permutation(&point[dw..], n_inputs)?;
    Ok((w, perm))
}
