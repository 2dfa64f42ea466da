//! Shared domain types, exact distances, and the closed-form probabilities
//! behind the counter transform, together with the exhaustive enumeration
//! oracle the property tests are checked against.
//!
//! A record utilization vector holds one bit per tracked query. The counter
//! transform (`h1`) folds those bits into `b` per-group counts using a
//! query-to-group mapping; the Manhattan distance between two count vectors is
//! a lower bound on the Hamming distance between the original bit vectors.

use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest window for which [`brute_force_h1_distribution`] accepts full enumeration.
pub const FULL_ENUMERATION_MAX_K: usize = 22;

/// Fixed-length bit vector: a record utilization vector or a query access vector.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut v = BitVector::zeros(bits.len());
        for (i, &bit) in bits.iter().enumerate() {
            match bit {
                0 => {}
                1 => v.set(i, true),
                other => return Err(Error::invalid(format!("bit {i} is {other}, expected 0 or 1"))),
            }
        }
        Ok(v)
    }

    /// Parses a string of `0`/`1` characters, first character at index 0.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::invalid(format!("unexpected character {other:?} in bit string"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        BitVector::from_bits(&bits)
    }

    /// Builds a vector of length `len` whose bit `i` is bit `i` of `mask`.
    pub fn from_mask(len: usize, mask: u64) -> Self {
        assert!(len <= 64, "from_mask supports at most 64 bits");
        let mut v = BitVector::zeros(len);
        if len > 0 {
            let keep = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
            v.words[0] = mask & keep;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector(")?;
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        write!(f, ")")
    }
}

/// One query's accessed record positions, in strictly increasing order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QueryAccess {
    pub t: u64,
    positions: Vec<usize>,
}

impl QueryAccess {
    pub fn new(t: u64, positions: Vec<usize>) -> Result<Self> {
        if let Some(w) = positions.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "positions must be strictly increasing, found {} before {}",
                w[0], w[1]
            )));
        }
        Ok(QueryAccess { t, positions })
    }

    /// Sorts and deduplicates an arbitrary collection of positions.
    pub fn from_unsorted(t: u64, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut positions: Vec<usize> = positions.into_iter().collect();
        positions.sort_unstable();
        positions.dedup();
        QueryAccess { t, positions }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.positions.binary_search(&position).is_ok()
    }

    /// Checks every position is below the record capacity `omega`.
    pub fn check_capacity(&self, omega: usize) -> Result<()> {
        match self.positions.last() {
            Some(&p) if p >= omega => Err(Error::Capacity {
                position: p,
                capacity: omega,
            }),
            _ => Ok(()),
        }
    }
}

/// Per-group counts produced by the counter transform.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CounterVector {
    pub counts: Vec<u32>,
}

impl CounterVector {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Exact probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Probability(BigRational);

impl Probability {
    pub fn new(value: BigRational) -> Result<Self> {
        if value < BigRational::zero() || value > BigRational::one() {
            return Err(Error::invalid(format!("{value} is not a probability")));
        }
        Ok(Probability(value))
    }

    pub fn ratio(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::invalid("zero denominator"));
        }
        Probability::new(BigRational::new(numer.into(), denom.into()))
    }

    pub fn zero() -> Self {
        Probability(BigRational::zero())
    }

    pub fn one() -> Self {
        Probability(BigRational::one())
    }

    pub fn value(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binomial coefficients up to a fixed `n`, built with Pascal's rule.
pub struct Binomials {
    rows: Vec<Vec<BigUint>>,
}

impl Binomials {
    pub fn up_to(n: usize) -> Self {
        let mut rows: Vec<Vec<BigUint>> = Vec::with_capacity(n + 1);
        rows.push(vec![BigUint::one()]);
        for i in 1..=n {
            let prev = &rows[i - 1];
            let mut row = Vec::with_capacity(i + 1);
            row.push(BigUint::one());
            for j in 1..i {
                row.push(&prev[j - 1] + &prev[j]);
            }
            row.push(BigUint::one());
            rows.push(row);
        }
        Binomials { rows }
    }

    /// `C(n, r)`; zero when `r > n`.
    pub fn get(&self, n: usize, r: usize) -> BigUint {
        if r > n {
            return BigUint::zero();
        }
        self.rows[n][r].clone()
    }
}

pub fn hamming_distance(a: &BitVector, b: &BitVector) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

pub fn manhattan_distance(a: &[i64], b: &[i64]) -> Result<u64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum())
}

/// Counter transform: entry `g` counts the 1-bits of `r` at positions mapped to group `g`.
pub fn h1(r: &BitVector, grouping: &[usize], b: usize) -> Result<CounterVector> {
    check_grouping(r.len(), b, grouping)?;
    let mut counts = vec![0u32; b];
    for (i, &g) in grouping.iter().enumerate() {
        if r.get(i) {
            counts[g] += 1;
        }
    }
    Ok(CounterVector { counts })
}

fn check_grouping(k: usize, b: usize, grouping: &[usize]) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("b must be positive"));
    }
    if grouping.len() != k {
        return Err(Error::invalid(format!(
            "grouping covers {} queries, expected {k}",
            grouping.len()
        )));
    }
    if let Some(g) = grouping.iter().find(|&&g| g >= b) {
        return Err(Error::invalid(format!("group {g} out of range for b = {b}")));
    }
    Ok(())
}

/// A random grouping of `k` queries into `b` groups holding at most `⌈k/b⌉` each.
pub fn random_balanced_grouping<R: Rng + ?Sized>(k: usize, b: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut grouping = vec![0; k];
    for (rank, &q) in order.iter().enumerate() {
        grouping[q] = rank * b / k;
    }
    grouping
}

/// `Pr(δᴹ(c1, c2) ≤ θ | δ(r1, r2) = x)` for a single group, as an exact rational.
pub fn prob_good_approx(x: usize, theta: usize) -> Result<Probability> {
    if x == 0 {
        return Err(Error::invalid("x must be positive"));
    }
    if theta >= x {
        return Err(Error::invalid(format!("theta ({theta}) must be below x ({x})")));
    }
    let binomials = Binomials::up_to(x);
    Ok(good_approx_with(&binomials, x, theta))
}

fn good_approx_with(binomials: &Binomials, x: usize, theta: usize) -> Probability {
    let lo = (x - theta).div_ceil(2);
    let hi = (x + theta) / 2;
    let numer: BigUint = (lo..=hi).map(|i| binomials.get(x, i)).sum();
    let denom = BigUint::one() << x;
    Probability(BigRational::new(numer.into(), denom.into()))
}

/// True iff `prob_good_approx(x, θ) > prob_good_approx(x + 2, θ)` for every `θ < x ≤ x_max`.
pub fn prob_monotonicity_check(theta: usize, x_max: usize) -> bool {
    monotonicity_violations(theta, x_max).is_empty()
}

/// The `x` values in `θ < x ≤ x_max` where the strict decrease from `x` to `x + 2` fails.
pub fn monotonicity_violations(theta: usize, x_max: usize) -> Vec<usize> {
    let binomials = Binomials::up_to(x_max + 2);
    (theta + 1..=x_max)
        .filter(|&x| good_approx_with(&binomials, x, theta) <= good_approx_with(&binomials, x + 2, theta))
        .collect()
}

/// Probability that the single-group counter distance equals the Hamming distance,
/// given the two load factors `l1` and `l2` over a window of `k` queries.
pub fn grouping_gamma(k: usize, l1: usize, l2: usize) -> Result<Probability> {
    if l1 > k || l2 > k {
        return Err(Error::invalid(format!(
            "load factors ({l1}, {l2}) must lie in [0, {k}]"
        )));
    }
    let (l_max, l_min) = (l1.max(l2), l1.min(l2));
    let binomials = Binomials::up_to(k);
    let numer = binomials.get(l_max, l_min) * binomials.get(k, l_max);
    let denom = binomials.get(k, l_max) * binomials.get(k, l_min);
    Probability::new(BigRational::new(numer.into(), denom.into()))
}

/// How [`brute_force_h1_distribution`] visits vector pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enumeration {
    /// Every ordered pair of `k`-bit vectors.
    Full,
    /// A seeded uniform sample of ordered pairs.
    Sampled { pairs: u64, seed: u64 },
}

/// Joint counts of `(δ(r1, r2), δᴹ(h1(r1), h1(r2)))` over ordered vector pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct H1Distribution {
    k: usize,
    counts: Vec<Vec<u64>>,
}

impl H1Distribution {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, hamming: usize, manhattan: usize) -> u64 {
        self.counts
            .get(hamming)
            .and_then(|row| row.get(manhattan))
            .copied()
            .unwrap_or(0)
    }

    pub fn pairs_at(&self, hamming: usize) -> u64 {
        self.counts.get(hamming).map_or(0, |row| row.iter().sum())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Pairs whose counter distance exceeds their Hamming distance.
    pub fn lower_bound_violations(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(h, row)| row.iter().skip(h + 1).sum::<u64>())
            .sum()
    }

    /// Empirical `Pr(δᴹ ≤ θ | δ = x)`, or `None` when no pair has `δ = x`.
    pub fn prob_at_most(&self, x: usize, theta: usize) -> Option<BigRational> {
        let total = self.pairs_at(x);
        if total == 0 {
            return None;
        }
        let hits: u64 = self.counts[x].iter().take(theta + 1).sum();
        Some(BigRational::new(hits.into(), total.into()))
    }
}

/// Enumerates (or samples) vector pairs and tabulates Hamming against counter distance.
pub fn brute_force_h1_distribution(
    k: usize,
    b: usize,
    grouping: &[usize],
    mode: Enumeration,
) -> Result<H1Distribution> {
    check_grouping(k, b, grouping)?;
    let mut group_masks = vec![0u64; b];
    let mut counts = vec![vec![0u64; k + 1]; k + 1];
    match mode {
        Enumeration::Full => {
            if k > FULL_ENUMERATION_MAX_K {
                return Err(Error::invalid(format!(
                    "full enumeration supports k <= {FULL_ENUMERATION_MAX_K}, got {k}; use sampling"
                )));
            }
            for (i, &g) in grouping.iter().enumerate() {
                group_masks[g] |= 1 << i;
            }
            // Pairs are visited as (differing positions, r1's bits on them); the
            // positions where both vectors agree cancel in every group count and
            // only contribute a multiplicity of 2^(k - d).
            for diff in 0u64..(1 << k) {
                let d = diff.count_ones() as usize;
                let weight = 1u64 << (k - d);
                let mut sub = diff;
                loop {
                    let m = group_masks
                        .iter()
                        .map(|&gm| {
                            let ones = (sub & gm).count_ones() as i64;
                            let width = (diff & gm).count_ones() as i64;
                            (2 * ones - width).unsigned_abs() as usize
                        })
                        .sum::<usize>();
                    counts[d][m] += weight;
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & diff;
                }
            }
        }
        Enumeration::Sampled { pairs, seed } => {
            if k > 64 {
                return Err(Error::invalid("sampling supports k <= 64"));
            }
            for (i, &g) in grouping.iter().enumerate() {
                group_masks[g] |= 1 << i;
            }
            let keep = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..pairs {
                let r1 = rng.random::<u64>() & keep;
                let r2 = rng.random::<u64>() & keep;
                let d = (r1 ^ r2).count_ones() as usize;
                let m = group_masks
                    .iter()
                    .map(|&gm| ((r1 & gm).count_ones() as i64 - (r2 & gm).count_ones() as i64).unsigned_abs() as usize)
                    .sum::<usize>();
                counts[d][m] += 1;
            }
        }
    }
    Ok(H1Distribution { k, counts })
}
