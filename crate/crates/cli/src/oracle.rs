//! Exhaustive checks of the counter-transform bounds and closed forms at small `k`.

use std::fmt;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tlsh_core::model::{
    brute_force_h1_distribution, grouping_gamma, hamming_distance, manhattan_distance, prob_good_approx,
    random_balanced_grouping, BitVector, Binomials, Enumeration, Probability,
};

/// Closed form checked by the `good_approximation` check.
pub type GoodApproxFn = fn(usize, usize) -> tlsh_core::Result<Probability>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: u64,
    pub failures: u64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    pub checks: Vec<CheckOutcome>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "check={} cases={} failures={} status={}",
                c.name,
                c.cases,
                c.failures,
                if c.passed() { "pass" } else { "fail" }
            )?;
        }
        write!(f, "overall={}", if self.passed() { "pass" } else { "fail" })
    }
}

/// Good-approximation probability with the upper summation bound widened by one.
/// Used as a negative control.
pub fn off_by_one_good_approx(x: usize, theta: usize) -> tlsh_core::Result<Probability> {
    let binomials = Binomials::up_to(x);
    let lo = (x - theta).div_ceil(2);
    let hi = ((x + theta) / 2 + 1).min(x);
    let numer: num_bigint::BigUint = (lo..=hi).map(|i| binomials.get(x, i)).sum();
    Probability::new(BigRational::new(numer.into(), (num_bigint::BigUint::from(1u8) << x).into()))
}

/// Counter distance never exceeds Hamming distance, over every pair of
/// `k`-bit vectors and one random balanced grouping per `(k, b)`.
pub fn check_distance_bound(k_max: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome { name: "distance_bound", cases: 0, failures: 0 };
    for k in 1..=k_max {
        for b in 1..=k {
            let grouping = random_balanced_grouping(k, b, &mut rng);
            match brute_force_h1_distribution(k, b, &grouping, Enumeration::Full) {
                Ok(d) => {
                    out.cases += d.total();
                    out.failures += d.lower_bound_violations();
                }
                Err(_) => out.failures += 1,
            }
        }
    }
    out
}

/// Enumerated `Pr(δᴹ ≤ θ | δ = x)` at `b = 1` against the closed form, exactly.
pub fn check_good_approximation(k: usize, closed_form: GoodApproxFn) -> CheckOutcome {
    let mut out = CheckOutcome { name: "good_approximation", cases: 0, failures: 0 };
    let Ok(d) = brute_force_h1_distribution(k, 1, &vec![0; k], Enumeration::Full) else {
        out.failures += 1;
        return out;
    };
    for x in 1..=k {
        for theta in 0..x {
            out.cases += 1;
            let expected = closed_form(x, theta).ok().map(|p| p.value().clone());
            if d.prob_at_most(x, theta) != expected {
                out.failures += 1;
            }
        }
    }
    out
}

/// For every `k ≤ k_max` and load pair, the fraction of vector pairs with those
/// loads whose single-group counter distance equals their Hamming distance.
pub fn check_grouping_gamma(k_max: usize) -> CheckOutcome {
    let mut out = CheckOutcome { name: "grouping_gamma", cases: 0, failures: 0 };
    for k in 1..=k_max {
        let mut total = vec![vec![0u64; k + 1]; k + 1];
        let mut exact = vec![vec![0u64; k + 1]; k + 1];
        for a in 0u32..(1 << k) {
            let la = a.count_ones() as usize;
            for c in 0u32..(1 << k) {
                let lc = c.count_ones() as usize;
                total[la][lc] += 1;
                if (a ^ c).count_ones() as usize == la.abs_diff(lc) {
                    exact[la][lc] += 1;
                }
            }
        }
        for l1 in 0..=k {
            for l2 in 0..=k {
                out.cases += 1;
                let empirical = BigRational::new(exact[l1][l2].into(), total[l1][l2].into());
                match grouping_gamma(k, l1, l2) {
                    Ok(g) if *g.value() == empirical => {}
                    _ => out.failures += 1,
                }
            }
        }
    }
    out
}

/// Hamming distance of bit vectors equals Manhattan distance of their 0/1 entries.
pub fn check_hamming_is_manhattan(k_max: usize) -> CheckOutcome {
    let mut out = CheckOutcome { name: "hamming_equals_manhattan", cases: 0, failures: 0 };
    for k in 1..=k_max {
        let vectors: Vec<BitVector> = (0..1u64 << k).map(|m| BitVector::from_mask(k, m)).collect();
        let ints: Vec<Vec<i64>> = vectors.iter().map(|v| v.iter().map(i64::from).collect()).collect();
        for a in 0..vectors.len() {
            for c in 0..vectors.len() {
                out.cases += 1;
                let h = hamming_distance(&vectors[a], &vectors[c]).ok().map(|h| h as u64);
                let m = manhattan_distance(&ints[a], &ints[c]).ok();
                if h.is_none() || h != m {
                    out.failures += 1;
                }
            }
        }
    }
    out
}

pub fn run_oracle_suite_with(k_max: usize, closed_form: GoodApproxFn) -> OracleReport {
    OracleReport {
        checks: vec![
            check_distance_bound(k_max, 1),
            check_good_approximation(k_max, closed_form),
            check_grouping_gamma(k_max),
            check_hamming_is_manhattan(k_max),
        ],
    }
}

pub fn run_oracle_suite(k_max: usize) -> OracleReport {
    run_oracle_suite_with(k_max, prob_good_approx)
}
