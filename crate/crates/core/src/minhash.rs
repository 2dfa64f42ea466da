//! Single-function Min-Hash over sets of record positions.
//!
//! Query similarity only ever needs an equality test between two signatures:
//! with one hash function, `Pr[sig(A) = sig(B)]` is the Jaccard similarity of
//! `A` and `B`, so the distance collapses to a 0/1 indicator.

use crate::error::{Error, Result};

/// Hash applied to each set element before taking the minimum.
pub trait ElementHash {
    fn hash(&self, x: u64) -> u64;
}

/// Multiply-add-shift on 128-bit arithmetic followed by a 64-bit finalizer.
///
/// The finalizer breaks the arithmetic-progression structure the raw
/// multiply-shift has on small consecutive keys, which otherwise biases the
/// minimum. Parameters are derived from the seed with SplitMix64 so a given
/// seed yields the same function on every platform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeededHash {
    a: u128,
    c: u128,
}

impl SeededHash {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut next = || splitmix64(&mut state);
        let a = ((next() as u128) << 64 | next() as u128) | 1;
        let c = (next() as u128) << 64 | next() as u128;
        SeededHash { a, c }
    }
}

impl ElementHash for SeededHash {
    #[inline]
    fn hash(&self, x: u64) -> u64 {
        fmix64((self.a.wrapping_mul(x as u128).wrapping_add(self.c) >> 64) as u64)
    }
}

/// `h(x) = x`; useful for reasoning about signatures by hand.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl ElementHash for Identity {
    fn hash(&self, x: u64) -> u64 {
        x
    }
}

fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MinHashSignature(pub u64);

pub fn minhash_with<H: ElementHash + ?Sized>(positions: &[usize], hasher: &H) -> Result<MinHashSignature> {
    positions
        .iter()
        .map(|&p| hasher.hash(p as u64))
        .min()
        .map(MinHashSignature)
        .ok_or_else(|| Error::invalid("cannot take the Min-Hash of an empty set"))
}

pub fn minhash(positions: &[usize], seed: u64) -> Result<MinHashSignature> {
    minhash_with(positions, &SeededHash::new(seed))
}

/// 0 when the signatures agree, 1 otherwise.
pub fn minhash_distance(a: MinHashSignature, b: MinHashSignature) -> u8 {
    u8::from(a != b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_hash_gives_set_minimum() {
        assert_eq!(minhash_with(&[0, 5, 6], &Identity).unwrap(), MinHashSignature(0));
    }

    #[test]
    fn singleton_signature_is_element_hash() {
        for seed in [0, 1, 99, u64::MAX] {
            let h = SeededHash::new(seed);
            assert_eq!(minhash(&[7], seed).unwrap(), MinHashSignature(h.hash(7)));
        }
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(minhash(&[], 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn distance_is_indicator() {
        let a = MinHashSignature(10);
        let b = MinHashSignature(11);
        assert_eq!(minhash_distance(a, a), 0);
        assert_eq!(minhash_distance(a, b), 1);
    }

    #[test]
    fn seeds_are_stable() {
        // Frozen so that any change to parameter derivation is caught.
        let h = SeededHash::new(42);
        let again = SeededHash::new(42);
        assert_eq!(h, again);
        assert_ne!(SeededHash::new(43), h);
        assert_eq!(h.hash(7), again.hash(7));
    }

    #[test]
    fn collision_rate_tracks_jaccard() {
        let a = [1, 2, 3];
        let b = [2, 3, 4];
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|&seed| minhash(&a, seed).unwrap() == minhash(&b, seed).unwrap())
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.5).abs() <= 0.02, "collision rate {rate}");
    }

    #[test]
    fn expected_distance_is_one_minus_jaccard() {
        let a: Vec<usize> = (0..40).collect();
        let b: Vec<usize> = (10..50).collect();
        let jaccard = 30.0 / 50.0;
        let trials = 20_000u64;
        let total: u64 = (0..trials)
            .map(|seed| minhash_distance(minhash(&a, seed).unwrap(), minhash(&b, seed).unwrap()) as u64)
            .sum();
        let mean = total as f64 / trials as f64;
        let sigma = (jaccard * (1.0 - jaccard) / trials as f64).sqrt();
        assert!((mean - (1.0 - jaccard)).abs() < 3.0 * sigma, "mean {mean}");
    }
}
