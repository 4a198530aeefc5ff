//! Input subsets, permutations of the input set, and unordered-pair tables.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Largest input set a [`SubsetKey`] can address.
pub const MAX_INPUTS: usize = 63;

/// A subset of flat input indices stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubsetKey(u64);

impl SubsetKey {
    pub const EMPTY: SubsetKey = SubsetKey(0);

    pub fn from_bits(bits: u64) -> Self {
        SubsetKey(bits)
    }

    /// The full set `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_INPUTS);
        if n == 0 {
            SubsetKey(0)
        } else {
            SubsetKey(u64::MAX >> (64 - n))
        }
    }

    pub fn singleton(i: usize) -> Self {
        SubsetKey(1 << i)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        indices
            .into_iter()
            .fold(SubsetKey::EMPTY, |acc, i| acc.with(i))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    #[must_use]
    pub fn with(self, i: usize) -> Self {
        SubsetKey(self.0 | 1 << i)
    }

    #[must_use]
    pub fn without(self, i: usize) -> Self {
        SubsetKey(self.0 & !(1 << i))
    }

    #[must_use]
    pub fn union(self, other: SubsetKey) -> Self {
        SubsetKey(self.0 | other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in increasing flat order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        core::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }

    /// Indices in `0..n` not in the subset, increasing.
    pub fn complement(self, n: usize) -> SubsetKey {
        SubsetKey(!self.0 & SubsetKey::full(n).0)
    }
}

impl fmt::Debug for SubsetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// An ordering of the input set `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut position = alloc::vec![usize::MAX; n];
        for (pos, &item) in order.iter().enumerate() {
            if item >= n || position[item] != usize::MAX {
                return Err(Error::InvalidArgument("permutation must be a bijection on 0..n"));
            }
            position[item] = pos;
        }
        Ok(Permutation { order, position })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            order: (0..n).collect(),
            position: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, item: usize) -> usize {
        self.position[item]
    }

    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.position[a] < self.position[b]
    }

    /// Elements strictly before `item`.
    pub fn prefix(&self, item: usize) -> SubsetKey {
        SubsetKey::from_indices(self.order[..self.position[item]].iter().copied())
    }

    /// Elements strictly after `item`, in permutation order.
    pub fn successors(&self, item: usize) -> &[usize] {
        &self.order[self.position[item] + 1..]
    }
}

/// Unordered pair `{i, j}` stored with `low < high`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub low: usize,
    pub high: usize,
}

impl Pair {
    pub fn new(i: usize, j: usize) -> Self {
        debug_assert_ne!(i, j);
        if i < j {
            Pair { low: i, high: j }
        } else {
            Pair { low: j, high: i }
        }
    }

    /// The member that is not `i`.
    pub fn other(self, i: usize) -> usize {
        if self.low == i {
            self.high
        } else {
            self.low
        }
    }
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// All unordered pairs of `0..n` in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = Pair> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| Pair { low: i, high: j }))
}

/// Position of `pair` in the lexicographic enumeration of [`pairs`].
pub fn pair_index(pair: Pair, n: usize) -> usize {
    let i = pair.low;
    i * (2 * n - i - 1) / 2 + (pair.high - i - 1)
}

/// One value per unordered pair; `get(i, j)` and `get(j, i)` address the same slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable<T> {
    n_inputs: usize,
    values: Vec<T>,
}

impl<T: Clone> PairTable<T> {
    pub fn filled(n_inputs: usize, value: T) -> Self {
        PairTable {
            n_inputs,
            values: alloc::vec![value; pair_count(n_inputs)],
        }
    }
}

impl<T> PairTable<T> {
    pub fn from_values(n_inputs: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != pair_count(n_inputs) {
            return Err(Error::DimensionMismatch {
                what: "pair table",
                expected: pair_count(n_inputs),
                found: values.len(),
            });
        }
        Ok(PairTable { n_inputs, values })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.values[pair_index(Pair::new(i, j), self.n_inputs)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        let idx = pair_index(Pair::new(i, j), self.n_inputs);
        &mut self.values[idx]
    }

    pub fn at(&self, pair: Pair) -> &T {
        &self.values[pair_index(pair, self.n_inputs)]
    }

    pub fn at_mut(&mut self, pair: Pair) -> &mut T {
        let idx = pair_index(pair, self.n_inputs);
        &mut self.values[idx]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pair, &T)> {
        pairs(self.n_inputs).zip(self.values.iter())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> PairTable<U> {
        PairTable {
            n_inputs: self.n_inputs,
            values: self.values.iter().map(f).collect(),
        }
    }
}
