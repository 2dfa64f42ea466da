//! Tunable-LSH: per-record utilization counters projected onto a space-filling
//! curve, plus the workload-oblivious baselines it is compared against.
//!
//! Every record owns `2b` counters. At any time only `b` consecutive entries
//! (mod `2b`) accept increments; the window advances by one entry every
//! `P = ⌈k/b⌉` queries and the entry it moves onto is cleared first. Rows are
//! cleared lazily: each row remembers the shift at which it was last brought
//! up to date and replays the missed clears on the next touch or read.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mds::{GroupMapper, MdsConfig, MdsTuner, RoundRobin};
use crate::minhash::{ElementHash, SeededHash};
use crate::model::{BitVector, QueryAccess};

/// Largest number of curve dimensions; the curve index is held in a `u128`.
pub const MAX_DIMENSIONS: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Curve {
    #[default]
    Morton,
    Hilbert,
}

impl std::str::FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morton" | "z-order" => Ok(Curve::Morton),
            "hilbert" => Ok(Curve::Hilbert),
            other => Err(Error::invalid(format!("unknown curve '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LshConfig {
    /// Tracked-query window.
    pub k: usize,
    /// Counter groups.
    pub b: usize,
    /// Number of pages hashed into.
    pub epsilon: u64,
    /// Record capacity.
    pub omega: usize,
    pub seed: u64,
    pub curve: Curve,
}

impl LshConfig {
    pub fn new(k: usize, b: usize, epsilon: u64, omega: usize) -> Self {
        LshConfig { k, b, epsilon, omega, seed: 0, curve: Curve::Morton }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_curve(mut self, curve: Curve) -> Self {
        self.curve = curve;
        self
    }

    /// Queries per shift, `⌈k/b⌉`; also the saturation value of a counter.
    pub fn period(&self) -> usize {
        self.k.div_ceil(self.b)
    }

    /// Bits per curve dimension.
    pub fn bits_per_dim(&self) -> u32 {
        bits_for(self.period() as u64)
    }

    pub fn dims(&self) -> usize {
        2 * self.b
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.b == 0 || self.omega == 0 || self.epsilon == 0 {
            return Err(Error::invalid("k, b, epsilon and omega must all be positive"));
        }
        if self.b > self.k {
            return Err(Error::invalid(format!("b ({}) exceeds k ({})", self.b, self.k)));
        }
        if self.period() > u16::MAX as usize {
            return Err(Error::invalid(format!("⌈k/b⌉ = {} does not fit 16-bit counters", self.period())));
        }
        let total = self.dims() * self.bits_per_dim() as usize;
        if total > 128 {
            return Err(Error::invalid(format!("curve index needs {total} bits; at most 128 supported")));
        }
        Ok(())
    }
}

/// Bits needed to represent `0..=max`.
fn bits_for(max: u64) -> u32 {
    (u64::BITS - max.leading_zeros()).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashValue {
    pub page: u64,
}

/// Entry of `2b` that group `g` increments while the window sits at `shift`.
pub fn region_slot(group: usize, shift: u64, b: usize) -> usize {
    let width = 2 * b as u64;
    let s = shift % width;
    let g = group as u64;
    if (g + width - s) % width < b as u64 {
        group
    } else {
        group + b
    }
}

/// Entry cleared when the window arrives at `shift`.
pub fn reset_slot(shift: u64, b: usize) -> usize {
    ((shift + b as u64 - 1) % (2 * b as u64)) as usize
}

/// Entries accepting increments at `shift`, in window order.
pub fn allowed_region(shift: u64, b: usize) -> Vec<usize> {
    let width = 2 * b as u64;
    (0..b as u64).map(|j| ((shift + j) % width) as usize).collect()
}

/// Per-record `2b` counters with lazily applied window resets.
///
/// Each row is one contiguous run of words: the shift the row was last
/// brought up to, then the counters packed four 16-bit lanes per word.
#[derive(Clone, Debug)]
pub struct CounterBank {
    b: usize,
    saturation: u16,
    stride: usize,
    words: Vec<u64>,
    shift: u64,
}

fn lane(row: &[u64], entry: usize) -> u16 {
    (row[1 + entry / 4] >> (16 * (entry % 4))) as u16
}

fn set_lane(row: &mut [u64], entry: usize, value: u16) {
    let (w, bits) = (1 + entry / 4, 16 * (entry % 4));
    row[w] = row[w] & !(0xffff << bits) | u64::from(value) << bits;
}

impl CounterBank {
    pub fn new(omega: usize, b: usize, saturation: u16) -> Result<Self> {
        if omega == 0 || b == 0 {
            return Err(Error::invalid("counter bank needs at least one row and one group"));
        }
        let stride = 1 + (2 * b).div_ceil(4);
        let mut words = vec![0u64; omega * stride];
        // Zeroed allocations are mapped lazily; touch every page now so the
        // first increments do not pay for page faults.
        for w in words.iter_mut().step_by(512) {
            *w = std::hint::black_box(0);
        }
        Ok(CounterBank { b, saturation, stride, words, shift: 0 })
    }

    pub fn rows(&self) -> usize {
        self.words.len() / self.stride
    }

    pub fn width(&self) -> usize {
        2 * self.b
    }

    pub fn shift(&self) -> u64 {
        self.shift
    }

    pub fn last_shift(&self, row: usize) -> u64 {
        self.words[row * self.stride]
    }

    /// Moves the window forward. Rows catch up lazily.
    pub fn advance_to(&mut self, shift: u64) {
        debug_assert!(shift >= self.shift);
        self.shift = self.shift.max(shift);
    }

    fn row(&self, row: usize) -> Result<&[u64]> {
        if row >= self.rows() {
            return Err(Error::invalid(format!("record {row} outside capacity {}", self.rows())));
        }
        Ok(&self.words[row * self.stride..(row + 1) * self.stride])
    }

    /// Applies the resets between the row's last shift and `to`.
    fn replay(b: usize, row: &mut [u64], to: u64) {
        let from = row[0];
        if to - from >= 2 * b as u64 {
            row[1..].fill(0);
        } else {
            for s in from + 1..=to {
                set_lane(row, reset_slot(s, b), 0);
            }
        }
        row[0] = to;
    }

    /// Logical counters of `row` at the current shift, written into `out`.
    pub fn view_into(&self, row: usize, out: &mut [u32]) -> Result<()> {
        let mut buf = [0u64; 1 + MAX_DIMENSIONS / 4];
        let buf = &mut buf[..self.stride];
        buf.copy_from_slice(self.row(row)?);
        Self::replay(self.b, buf, self.shift);
        for (entry, o) in out.iter_mut().take(self.width()).enumerate() {
            *o = u32::from(lane(buf, entry));
        }
        Ok(())
    }

    pub fn counters(&self, row: usize) -> Result<Vec<u32>> {
        let mut out = vec![0; self.width()];
        self.view_into(row, &mut out)?;
        Ok(out)
    }

    /// Brings `row` up to date and adds one to `entry`, saturating.
    pub fn increment(&mut self, row: usize, entry: usize) -> Result<()> {
        self.row(row)?;
        let cells = &mut self.words[row * self.stride..(row + 1) * self.stride];
        Self::replay(self.b, cells, self.shift);
        let c = lane(cells, entry);
        if c < self.saturation {
            set_lane(cells, entry, c + 1);
        }
        Ok(())
    }

    pub fn memory_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }
}

/// Morton index: bits interleaved level by level, dimension 0 most significant.
pub fn morton_index(counts: &[u32], bits: u32) -> Result<u128> {
    check_curve_input(counts, bits)?;
    let mut z = 0u128;
    for level in (0..bits).rev() {
        for &c in counts {
            z = (z << 1) | u128::from((c >> level) & 1);
        }
    }
    Ok(z)
}

/// Hilbert index via Skilling's transposed-axes construction.
pub fn hilbert_index(counts: &[u32], bits: u32) -> Result<u128> {
    check_curve_input(counts, bits)?;
    let n = counts.len();
    let mut x: Vec<u32> = counts.to_vec();
    let top = 1u32 << (bits - 1);

    // Inverse undo.
    let mut q = top;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode.
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = top;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }
    morton_index(&x, bits)
}

fn check_curve_input(counts: &[u32], bits: u32) -> Result<()> {
    if counts.is_empty() || bits == 0 {
        return Err(Error::invalid("curve needs at least one dimension and one bit"));
    }
    if counts.len() * bits as usize > 128 {
        return Err(Error::invalid("curve index wider than 128 bits"));
    }
    let limit = if bits >= 32 { u64::MAX } else { 1u64 << bits };
    if let Some(&c) = counts.iter().find(|&&c| u64::from(c) >= limit) {
        return Err(Error::Invariant(format!("count {c} does not fit in {bits} bits")));
    }
    Ok(())
}

/// `⌊z·ε / 2^total_bits⌋` without overflow.
pub fn scale_to_pages(z: u128, total_bits: u32, epsilon: u64) -> u64 {
    debug_assert!((1..=128).contains(&total_bits));
    let eps = u128::from(epsilon);
    let high = (z >> 64) * eps;
    let low = (z & u128::from(u64::MAX)) * eps;
    // 192-bit product held as hi * 2^64 + lo.
    let hi = high + (low >> 64);
    let lo = low as u64;
    if total_bits >= 64 {
        (hi >> (total_bits - 64)) as u64
    } else {
        ((hi << (64 - total_bits)) | u128::from(lo >> total_bits)) as u64
    }
}

pub fn curve_value(curve: Curve, counts: &[u32], bits: u32, epsilon: u64) -> Result<HashValue> {
    if epsilon == 0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let z = match curve {
        Curve::Morton => morton_index(counts, bits)?,
        Curve::Hilbert => hilbert_index(counts, bits)?,
    };
    let total = counts.len() as u32 * bits;
    Ok(HashValue { page: scale_to_pages(z, total, epsilon) })
}

/// Morton projection of counters onto `[0, ε)`.
pub fn z_value(counts: &[u32], bits: u32, epsilon: u64) -> Result<HashValue> {
    curve_value(Curve::Morton, counts, bits, epsilon)
}

/// Concatenates the sampled bits (first sample most significant) and scales to `[0, ε)`.
pub fn bit_sampling_hash(vector: &BitVector, sampled: &[usize], epsilon: u64) -> Result<HashValue> {
    if sampled.is_empty() || sampled.len() > 128 {
        return Err(Error::invalid("bit sampling needs between 1 and 128 positions"));
    }
    if epsilon == 0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut z = 0u128;
    for &p in sampled {
        if p >= vector.len() {
            return Err(Error::invalid(format!("sampled position {p} outside vector of length {}", vector.len())));
        }
        z = (z << 1) | u128::from(vector.get(p));
    }
    Ok(HashValue { page: scale_to_pages(z, sampled.len() as u32, epsilon) })
}

pub fn static_hash(record: usize, epsilon: u64, seed: u64) -> HashValue {
    HashValue { page: SeededHash::new(seed).hash(record as u64) % epsilon.max(1) }
}

/// A function from record positions to pages that may learn from queries.
pub trait RecordHasher {
    /// Feeds one completed query.
    fn observe(&mut self, q: &QueryAccess) -> Result<()>;

    fn hash(&self, record: usize) -> Result<HashValue>;

    fn epsilon(&self) -> u64;
}

/// Where a tuned query's increments landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TuneOutcome {
    pub loc: usize,
    pub shift: u64,
}

#[derive(Clone, Debug)]
pub struct TunableLsh<M: GroupMapper = MdsTuner> {
    config: LshConfig,
    bank: CounterBank,
    mapper: M,
    last_t: Option<u64>,
}

impl TunableLsh<MdsTuner> {
    pub fn new(config: LshConfig) -> Result<Self> {
        config.validate()?;
        let mapper = MdsTuner::new(MdsConfig::new(config.k, config.b).with_seed(config.seed))?;
        Self::with_mapper(config, mapper)
    }
}

impl TunableLsh<RoundRobin> {
    /// Variant whose `f` is the fixed `t mod b`.
    pub fn unoptimized(config: LshConfig) -> Result<Self> {
        config.validate()?;
        let mapper = RoundRobin::new(config.b)?;
        Self::with_mapper(config, mapper)
    }
}

impl<M: GroupMapper> TunableLsh<M> {
    pub fn with_mapper(config: LshConfig, mapper: M) -> Result<Self> {
        config.validate()?;
        if mapper.groups() != config.b {
            return Err(Error::invalid(format!("mapper has {} groups, config has {}", mapper.groups(), config.b)));
        }
        let bank = CounterBank::new(config.omega, config.b, config.period() as u16)?;
        Ok(TunableLsh { config, bank, mapper, last_t: None })
    }

    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    pub fn bank(&self) -> &CounterBank {
        &self.bank
    }

    pub fn mapper(&self) -> &M {
        &self.mapper
    }

    pub fn shift_for(&self, t: u64) -> u64 {
        t / self.config.period() as u64
    }

    /// Records query `q`: retunes `f`, then bumps one counter for each accessed record.
    pub fn tune(&mut self, q: &QueryAccess) -> Result<TuneOutcome> {
        if let Some(last) = self.last_t {
            if q.t <= last {
                return Err(Error::OutOfOrder { last, got: q.t });
            }
        }
        q.check_capacity(self.config.omega)?;
        self.mapper.reconfigure(q)?;
        self.last_t = Some(q.t);

        let shift = self.shift_for(q.t);
        self.bank.advance_to(shift);
        let group = self.mapper.group_of(q.t)?;
        let loc = region_slot(group, shift, self.config.b);
        for &i in q.positions() {
            self.bank.increment(i, loc)?;
        }
        Ok(TuneOutcome { loc, shift })
    }

    pub fn counters(&self, record: usize) -> Result<Vec<u32>> {
        self.bank.counters(record)
    }

    pub fn hash(&self, record: usize) -> Result<HashValue> {
        let w = self.bank.width();
        let mut buf = [0u32; MAX_DIMENSIONS];
        self.bank.view_into(record, &mut buf[..w])?;
        curve_value(self.config.curve, &buf[..w], self.config.bits_per_dim(), self.config.epsilon)
    }

    pub fn memory_bytes(&self) -> usize {
        self.bank.memory_bytes()
    }
}

impl<M: GroupMapper> RecordHasher for TunableLsh<M> {
    fn observe(&mut self, q: &QueryAccess) -> Result<()> {
        self.tune(q).map(|_| ())
    }

    fn hash(&self, record: usize) -> Result<HashValue> {
        TunableLsh::hash(self, record)
    }

    fn epsilon(&self) -> u64 {
        self.config.epsilon
    }
}

#[derive(Clone, Debug)]
pub struct StaticHasher {
    hasher: SeededHash,
    epsilon: u64,
    omega: usize,
}

impl StaticHasher {
    pub fn new(epsilon: u64, omega: usize, seed: u64) -> Result<Self> {
        if epsilon == 0 || omega == 0 {
            return Err(Error::invalid("epsilon and omega must be positive"));
        }
        Ok(StaticHasher { hasher: SeededHash::new(seed), epsilon, omega })
    }
}

impl RecordHasher for StaticHasher {
    fn observe(&mut self, q: &QueryAccess) -> Result<()> {
        q.check_capacity(self.omega)
    }

    fn hash(&self, record: usize) -> Result<HashValue> {
        if record >= self.omega {
            return Err(Error::invalid(format!("record {record} outside capacity {}", self.omega)));
        }
        Ok(HashValue { page: self.hasher.hash(record as u64) % self.epsilon })
    }

    fn epsilon(&self) -> u64 {
        self.epsilon
    }
}

/// Exact record utilization vectors over the last `k ≤ 128` queries.
///
/// Bit `t mod k` of a row holds whether query `t` touched the record, for the
/// most recent such `t`. Rows are cleared lazily from the last query that
/// touched them.
#[derive(Clone, Debug)]
pub struct UtilizationWindow {
    k: usize,
    rows: Vec<u128>,
    seen: Vec<Option<u64>>,
    now: Option<u64>,
}

impl UtilizationWindow {
    pub fn new(k: usize, omega: usize) -> Result<Self> {
        if k == 0 || k > 128 {
            return Err(Error::invalid(format!("window {k} outside 1..=128")));
        }
        Ok(UtilizationWindow { k, rows: vec![0; omega], seen: vec![None; omega], now: None })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn now(&self) -> Option<u64> {
        self.now
    }

    fn mask(&self) -> u128 {
        if self.k == 128 {
            u128::MAX
        } else {
            (1u128 << self.k) - 1
        }
    }

    fn cleared(&self, bits: u128, from: u64, to: u64) -> u128 {
        let k = self.k as u64;
        if to - from >= k {
            return 0;
        }
        let mut bits = bits;
        for t in from + 1..=to {
            bits &= !(1u128 << (t % k));
        }
        bits & self.mask()
    }

    pub fn record(&mut self, q: &QueryAccess) -> Result<()> {
        if let Some(now) = self.now {
            if q.t <= now {
                return Err(Error::OutOfOrder { last: now, got: q.t });
            }
        }
        q.check_capacity(self.rows.len())?;
        self.now = Some(q.t);
        let bit = 1u128 << (q.t % self.k as u64);
        for &i in q.positions() {
            let bits = match self.seen[i] {
                Some(from) => self.cleared(self.rows[i], from, q.t),
                None => 0,
            };
            self.rows[i] = bits | bit;
            self.seen[i] = Some(q.t);
        }
        Ok(())
    }

    /// Window bits of `record` as of the latest recorded query.
    pub fn bits(&self, record: usize) -> u128 {
        match (self.seen[record], self.now) {
            (Some(from), Some(now)) => self.cleared(self.rows[record], from, now),
            _ => 0,
        }
    }

    pub fn hamming(&self, a: usize, b: usize) -> u32 {
        (self.bits(a) ^ self.bits(b)).count_ones()
    }

    /// Whether `record` was touched by any query still in the window.
    pub fn is_active(&self, record: usize) -> bool {
        self.bits(record) != 0
    }
}

/// Bit sampling over each record's utilization window.
#[derive(Clone, Debug)]
pub struct BitSamplingHasher {
    window: UtilizationWindow,
    sampled: Vec<usize>,
    epsilon: u64,
}

impl BitSamplingHasher {
    pub fn new(k: usize, samples: usize, epsilon: u64, omega: usize, seed: u64) -> Result<Self> {
        if samples == 0 || samples > k {
            return Err(Error::invalid(format!("cannot sample {samples} of {k} bits")));
        }
        if epsilon == 0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        let window = UtilizationWindow::new(k, omega)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampled = sample(&mut rng, k, samples).into_vec();
        Ok(BitSamplingHasher { window, sampled, epsilon })
    }

    pub fn sampled_positions(&self) -> &[usize] {
        &self.sampled
    }

    pub fn window(&self) -> &UtilizationWindow {
        &self.window
    }
}

impl RecordHasher for BitSamplingHasher {
    fn observe(&mut self, q: &QueryAccess) -> Result<()> {
        self.window.record(q)
    }

    fn hash(&self, record: usize) -> Result<HashValue> {
        if record >= self.window.rows.len() {
            return Err(Error::invalid(format!("record {record} outside capacity {}", self.window.rows.len())));
        }
        let bits = self.window.bits(record);
        let mut z = 0u128;
        for &p in &self.sampled {
            z = (z << 1) | ((bits >> p) & 1);
        }
        Ok(HashValue { page: scale_to_pages(z, self.sampled.len() as u32, self.epsilon) })
    }

    fn epsilon(&self) -> u64 {
        self.epsilon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn q(t: u64, positions: &[usize]) -> QueryAccess {
        QueryAccess::new(t, positions.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(LshConfig::new(4, 5, 8, 8).validate().is_err());
        assert!(LshConfig::new(4, 2, 0, 8).validate().is_err());
        assert!(LshConfig::new(4, 2, 8, 0).validate().is_err());
        assert!(LshConfig::new(0, 0, 8, 8).validate().is_err());
        // 2b = 128 dimensions of one bit each is the widest legal curve.
        assert!(LshConfig::new(64, 64, 8, 8).validate().is_ok());
        assert!(LshConfig::new(128, 64, 8, 8).validate().is_err());
        assert!(LshConfig::new(70_000, 1, 8, 8).validate().is_err());
    }

    #[test]
    fn period_and_bits() {
        let c = LshConfig::new(24, 3, 16, 1);
        assert_eq!(c.period(), 8);
        assert_eq!(c.bits_per_dim(), 4);
        let c = LshConfig::new(8, 4, 16, 1);
        assert_eq!(c.period(), 2);
        assert_eq!(c.bits_per_dim(), 2);
        assert_eq!(LshConfig::new(10, 3, 1, 1).period(), 4);
    }

    #[test]
    fn single_row_bank_starts_at_zero() {
        let bank = CounterBank::new(1, 1, 1).unwrap();
        assert_eq!(bank.counters(0).unwrap(), vec![0, 0]);
        assert_eq!(bank.shift(), 0);
        assert!(CounterBank::new(0, 1, 1).is_err());
    }

    #[test]
    fn fresh_records_hash_to_origin() {
        let lsh = TunableLsh::new(LshConfig::new(12, 3, 100, 50)).unwrap();
        for r in 0..50 {
            assert_eq!(lsh.hash(r).unwrap().page, 0);
        }
        assert!(lsh.hash(50).is_err());
    }

    #[test]
    fn allowed_region_walk() {
        let (k, b) = (12usize, 3usize);
        let p = k.div_ceil(b) as u64;
        let region = |t: u64| {
            let mut r = allowed_region(t / p, b);
            r.sort_unstable();
            r
        };
        assert_eq!(region(0), vec![0, 1, 2]);
        assert_eq!(region(p), vec![1, 2, 3]);
        assert_eq!(region(k as u64), vec![3, 4, 5]);
        assert_eq!(region((4 * k as u64).div_ceil(b as u64)), vec![0, 4, 5]);
    }

    #[test]
    fn region_slot_lands_inside_region() {
        for b in 1..=8 {
            for shift in 0..(4 * b as u64) {
                let region = allowed_region(shift, b);
                let mut hit: Vec<usize> = (0..b).map(|g| region_slot(g, shift, b)).collect();
                hit.sort_unstable();
                let mut expected = region.clone();
                expected.sort_unstable();
                assert_eq!(hit, expected, "b={b} shift={shift}");
                for g in 0..b {
                    assert_eq!(region_slot(g, shift, b) % b, g);
                }
            }
        }
    }

    #[test]
    fn reset_slot_is_the_entry_joining_the_region() {
        for b in 1..=6 {
            for s in 1..(6 * b as u64) {
                let before = allowed_region(s - 1, b);
                let after = allowed_region(s, b);
                let joined: Vec<usize> = after.iter().copied().filter(|e| !before.contains(e)).collect();
                if b == 1 {
                    assert_eq!(joined, vec![reset_slot(s, b)]);
                } else {
                    assert_eq!(joined, vec![reset_slot(s, b)], "b={b} s={s}");
                }
            }
        }
    }

    #[test]
    fn single_query_touches_only_its_rows() {
        let mut lsh = TunableLsh::new(LshConfig::new(12, 3, 64, 10)).unwrap();
        lsh.tune(&q(0, &[0, 5, 6])).unwrap();
        for r in 0..10 {
            let sum: u32 = lsh.counters(r).unwrap().iter().sum();
            let nonzero = lsh.counters(r).unwrap().iter().filter(|&&c| c > 0).count();
            if [0, 5, 6].contains(&r) {
                assert_eq!((sum, nonzero), (1, 1), "row {r}");
            } else {
                assert_eq!(sum, 0, "row {r}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range_and_out_of_order() {
        let mut lsh = TunableLsh::new(LshConfig::new(12, 3, 64, 10)).unwrap();
        assert!(matches!(lsh.tune(&q(0, &[10])), Err(Error::Capacity { .. })));
        lsh.tune(&q(1, &[1])).unwrap();
        assert!(matches!(lsh.tune(&q(1, &[1])), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn burst_then_silence_is_forgotten() {
        // Round-robin keeps every group at exactly ⌈k/b⌉ queries per window,
        // so no counter saturates and the burst is counted in full.
        for (k, b) in [(12, 3), (24, 3), (16, 4), (10, 1)] {
            let mut lsh = TunableLsh::unoptimized(LshConfig::new(k, b, 64, 2)).unwrap();
            let mut t = 0;
            for _ in 0..k {
                lsh.tune(&q(t, &[0])).unwrap();
                t += 1;
            }
            let sum: u32 = lsh.counters(0).unwrap().iter().sum();
            assert_eq!(sum, k as u32, "k={k} b={b}");
            for _ in 0..2 * k {
                lsh.tune(&q(t, &[1])).unwrap();
                t += 1;
            }
            let sum: u32 = lsh.counters(0).unwrap().iter().sum();
            assert_eq!(sum, 0, "k={k} b={b}");
        }
    }

    #[test]
    fn tuned_burst_is_forgotten_too() {
        for (k, b) in [(12, 3), (16, 4)] {
            let mut lsh = TunableLsh::new(LshConfig::new(k, b, 64, 2).with_seed(5)).unwrap();
            for t in 0..k as u64 {
                lsh.tune(&q(t, &[0])).unwrap();
            }
            let sum: u32 = lsh.counters(0).unwrap().iter().sum();
            assert!(sum > 0 && sum <= k as u32);
            for t in k as u64..3 * k as u64 {
                lsh.tune(&q(t, &[1])).unwrap();
            }
            assert_eq!(lsh.counters(0).unwrap().iter().sum::<u32>(), 0);
        }
    }

    #[test]
    fn counters_never_exceed_period() {
        let cfg = LshConfig::new(20, 4, 64, 30).with_seed(3);
        let p = cfg.period() as u32;
        let mut lsh = TunableLsh::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..2000u64 {
            let base = rng.random_range(0..3) * 10;
            let positions: Vec<usize> = (base..base + 10).collect();
            lsh.tune(&QueryAccess::new(t, positions).unwrap()).unwrap();
            for r in 0..30 {
                assert!(lsh.counters(r).unwrap().iter().all(|&c| c <= p));
            }
        }
    }

    #[test]
    fn hash_is_pure_between_tunes() {
        let mut lsh = TunableLsh::new(LshConfig::new(8, 2, 32, 4)).unwrap();
        lsh.tune(&q(0, &[0, 1])).unwrap();
        lsh.tune(&q(30, &[2])).unwrap();
        let first: Vec<u64> = (0..4).map(|r| lsh.hash(r).unwrap().page).collect();
        let again: Vec<u64> = (0..4).map(|r| lsh.hash(r).unwrap().page).collect();
        assert_eq!(first, again);
        // Row 0 is stale but its view is already cleared.
        assert_eq!(lsh.counters(0).unwrap().iter().sum::<u32>(), 0);
        assert_eq!(lsh.bank().last_shift(0), 0);
    }

    #[test]
    fn identical_rows_hash_identically() {
        let mut lsh = TunableLsh::new(LshConfig::new(12, 3, 64, 4)).unwrap();
        for t in 0..20 {
            lsh.tune(&q(t, &[1, 2])).unwrap();
        }
        assert_eq!(lsh.counters(1).unwrap(), lsh.counters(2).unwrap());
        assert_eq!(lsh.hash(1).unwrap(), lsh.hash(2).unwrap());
    }

    #[test]
    fn counter_memory_scales_with_records_and_groups() {
        let base = TunableLsh::new(LshConfig::new(64, 4, 16, 1000)).unwrap().memory_bytes();
        let more_k = TunableLsh::new(LshConfig::new(256, 4, 16, 1000)).unwrap().memory_bytes();
        let more_b = TunableLsh::new(LshConfig::new(64, 8, 16, 1000)).unwrap().memory_bytes();
        let more_w = TunableLsh::new(LshConfig::new(64, 4, 16, 2000)).unwrap().memory_bytes();
        assert_eq!(base, 1000 * (8 * 2 + 8));
        assert_eq!(more_k, base);
        assert_eq!(more_w, 2 * base);
        assert!(more_b > base && more_b < 2 * base);
    }

    /// Rows over queries q0..q7 with the pairwise distances used as the
    /// running example: r0/r6 differ in one query, r2/r6 in five.
    #[test]
    fn co_accessed_rows_hash_closer() {
        let r0 = "01111111";
        let r2 = "00101010";
        let r5 = "00101011";
        let r6 = "11111111";
        let rows = [(0usize, r0), (2, r2), (5, r5), (6, r6)];
        let mut closer = 0;
        let runs = 200;
        for seed in 0..runs {
            let mut lsh = TunableLsh::new(LshConfig::new(8, 4, 16, 8).with_seed(seed)).unwrap();
            for t in 0..8u64 {
                let positions: Vec<usize> = rows
                    .iter()
                    .filter(|(_, bits)| bits.as_bytes()[t as usize] == b'1')
                    .map(|&(r, _)| r)
                    .collect();
                lsh.tune(&QueryAccess::new(t, positions).unwrap()).unwrap();
            }
            let h = |r| lsh.hash(r).unwrap().page as i64;
            if (h(0) - h(6)).abs() <= (h(2) - h(6)).abs() {
                closer += 1;
            }
        }
        assert!(closer * 10 >= runs * 9, "{closer}/{runs}");
    }

    #[test]
    fn z_value_examples() {
        assert_eq!(z_value(&[0, 0], 2, 16).unwrap().page, 0);
        assert_eq!(z_value(&[1, 1], 1, 4).unwrap().page, 3);
        assert_eq!(z_value(&[1, 0], 1, 4).unwrap().page, 2);
        assert!(matches!(z_value(&[4, 0], 2, 16), Err(Error::Invariant(_))));
    }

    /// Morton index by building the bit string explicitly.
    fn morton_oracle(counts: &[u32], bits: u32) -> u128 {
        let mut s = String::new();
        for level in (0..bits).rev() {
            for &c in counts {
                s.push(if (c >> level) & 1 == 1 { '1' } else { '0' });
            }
        }
        u128::from_str_radix(&s, 2).unwrap()
    }

    #[test]
    fn morton_matches_string_interleaving() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let dims = rng.random_range(1..=8);
            let bits = rng.random_range(1..=(128 / dims as u32).min(16));
            let counts: Vec<u32> = (0..dims).map(|_| rng.random_range(0..(1u32 << bits))).collect();
            assert_eq!(morton_index(&counts, bits).unwrap(), morton_oracle(&counts, bits));
        }
    }

    fn manhattan2(a: (u32, u32), b: (u32, u32)) -> u32 {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }

    fn grid_by_index(curve: Curve, bits: u32) -> Vec<(u32, u32)> {
        let side = 1u32 << bits;
        let mut cells = vec![(0, 0); (side * side) as usize];
        for x in 0..side {
            for y in 0..side {
                let z = match curve {
                    Curve::Morton => morton_index(&[x, y], bits).unwrap(),
                    Curve::Hilbert => hilbert_index(&[x, y], bits).unwrap(),
                };
                cells[z as usize] = (x, y);
            }
        }
        cells
    }

    #[test]
    fn hilbert_steps_are_unit_moves() {
        for bits in 1..=4 {
            let cells = grid_by_index(Curve::Hilbert, bits);
            for w in cells.windows(2) {
                assert_eq!(manhattan2(w[0], w[1]), 1, "bits={bits} {:?}", w);
            }
        }
    }

    #[test]
    fn hilbert_is_a_bijection_in_higher_dimensions() {
        let bits = 2;
        let mut seen = [false; 1 << 6];
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    let i = hilbert_index(&[x, y, z], bits).unwrap() as usize;
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn morton_steps_are_mostly_unit_moves() {
        // Morton jumps between quadrants, so only part of its steps are unit
        // moves; counts checked against a brute-force walk of the grid.
        for (bits, unit_steps) in [(1, 2), (2, 8), (3, 32), (4, 128)] {
            let cells = grid_by_index(Curve::Morton, bits);
            let oracle = (0..cells.len() - 1)
                .filter(|&i| {
                    let a = morton_oracle_inverse(i as u128, bits);
                    let b = morton_oracle_inverse(i as u128 + 1, bits);
                    manhattan2(a, b) == 1
                })
                .count();
            let got = cells.windows(2).filter(|w| manhattan2(w[0], w[1]) == 1).count();
            assert_eq!(got, oracle);
            assert_eq!(got, unit_steps, "bits={bits}");
        }
    }

    fn morton_oracle_inverse(z: u128, bits: u32) -> (u32, u32) {
        let s = format!("{:0width$b}", z, width = 2 * bits as usize);
        let x: String = s.chars().step_by(2).collect();
        let y: String = s.chars().skip(1).step_by(2).collect();
        (u32::from_str_radix(&x, 2).unwrap(), u32::from_str_radix(&y, 2).unwrap())
    }

    #[test]
    fn scaling_matches_wide_arithmetic() {
        use num_bigint::BigUint;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let total = rng.random_range(1..=128u32);
            let z: u128 = if total == 128 { rng.random() } else { rng.random::<u128>() & ((1u128 << total) - 1) };
            let eps: u64 = rng.random_range(1..=u64::MAX);
            let expected = (BigUint::from(z) * BigUint::from(eps)) >> total;
            let got = scale_to_pages(z, total, eps);
            assert_eq!(BigUint::from(got), expected);
            assert!(got < eps);
        }
    }

    #[test]
    fn scaling_to_full_range_is_identity() {
        for z in 0..16u128 {
            assert_eq!(scale_to_pages(z, 4, 16), z as u64);
        }
    }

    #[test]
    fn bit_sampling_collision_rates() {
        let a = BitVector::parse("1001").unwrap();
        let b = BitVector::parse("0001").unwrap();
        let equal_one = (0..4)
            .filter(|&p| bit_sampling_hash(&a, &[p], 2).unwrap() == bit_sampling_hash(&b, &[p], 2).unwrap())
            .count();
        assert_eq!(equal_one, 3);
        let mut pairs = 0;
        let mut equal_two = 0;
        for p in 0..4 {
            for r in p + 1..4 {
                pairs += 1;
                if bit_sampling_hash(&a, &[p, r], 4).unwrap() == bit_sampling_hash(&b, &[p, r], 4).unwrap() {
                    equal_two += 1;
                }
            }
        }
        assert_eq!(equal_two * 2, pairs);
    }

    #[test]
    fn full_bit_sampling_is_injective() {
        let all: Vec<usize> = (0..6).collect();
        let mut seen = std::collections::HashSet::new();
        for mask in 0..64u64 {
            let v = BitVector::from_mask(6, mask);
            assert!(seen.insert(bit_sampling_hash(&v, &all, 64).unwrap()));
        }
        assert!(bit_sampling_hash(&BitVector::zeros(4), &[4], 2).is_err());
    }

    #[test]
    fn static_hash_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let eps = 64u64;
        let n = 100_000;
        let mut buckets = vec![0u64; eps as usize];
        for id in 0..n {
            buckets[static_hash(id, eps, 17).page as usize] += 1;
        }
        let expected = n as f64 / eps as f64;
        let stat: f64 = buckets.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((eps - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn static_hasher_ignores_history() {
        let mut h = StaticHasher::new(32, 10, 4).unwrap();
        let before: Vec<HashValue> = (0..10).map(|r| h.hash(r).unwrap()).collect();
        for t in 0..50 {
            h.observe(&q(t, &[1, 2, 3])).unwrap();
        }
        let after: Vec<HashValue> = (0..10).map(|r| h.hash(r).unwrap()).collect();
        assert_eq!(before, after);
        assert_eq!(before[3], static_hash(3, 32, 4));
    }

    #[test]
    fn utilization_window_matches_direct_history() {
        let k = 7;
        let omega = 5;
        let mut w = UtilizationWindow::new(k, omega).unwrap();
        let mut history: Vec<(u64, Vec<usize>)> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = 0u64;
        for _ in 0..200 {
            t += rng.random_range(1..3);
            let positions: Vec<usize> = (0..omega).filter(|_| rng.random_bool(0.4)).collect();
            if positions.is_empty() {
                continue;
            }
            w.record(&QueryAccess::new(t, positions.clone()).unwrap()).unwrap();
            history.push((t, positions));
            for r in 0..omega {
                let expected = history
                    .iter()
                    .filter(|(qt, p)| t - qt < k as u64 && p.contains(&r))
                    .fold(0u128, |acc, (qt, _)| acc | 1u128 << (qt % k as u64));
                assert_eq!(w.bits(r), expected, "t={t} r={r}");
            }
        }
    }

    #[test]
    fn bit_sampler_tracks_window() {
        let mut h = BitSamplingHasher::new(4, 4, 16, 3, 0).unwrap();
        let mut sorted = h.sampled_positions().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        for t in 0..4 {
            h.observe(&q(t, &[0])).unwrap();
        }
        assert_eq!(h.hash(0).unwrap().page, 15);
        assert_eq!(h.hash(1).unwrap().page, 0);
        for t in 4..8 {
            h.observe(&q(t, &[1])).unwrap();
        }
        assert_eq!(h.hash(0).unwrap().page, 0);
        assert_eq!(h.hash(1).unwrap().page, 15);
    }

    #[test]
    fn unoptimized_variant_uses_round_robin() {
        let mut lsh = TunableLsh::unoptimized(LshConfig::new(12, 3, 64, 2)).unwrap();
        let locs: Vec<usize> = (0..3).map(|t| lsh.tune(&q(t, &[0])).unwrap().loc).collect();
        assert_eq!(locs, vec![0, 1, 2]);
    }
}
