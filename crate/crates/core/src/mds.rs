//! Self-tuning query-to-group mapping.
//!
//! Each of the last `k` queries is a point on a line. Points attract or repel
//! each other according to the Min-Hash distance of their access sets, using
//! a sampled spring-force layout that is advanced by one sweep per query. The
//! mapping `f(t)` ranks live points by coordinate, cuts the ranks into `b`
//! consecutive groups, and names each group after a centroid picked by hashing
//! member identifiers, so group values survive drift of absolute coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::minhash::{minhash_distance, minhash_with, ElementHash, MinHashSignature, SeededHash};
use crate::model::QueryAccess;

/// Maps query sequence numbers to one of `b` counter groups.
pub trait GroupMapper {
    /// Observes the next query. Called once per tuned query, before `group_of`.
    fn reconfigure(&mut self, q: &QueryAccess) -> Result<()>;

    fn group_of(&self, t: u64) -> Result<usize>;

    fn groups(&self) -> usize;
}

/// Workload-oblivious mapping `t mod b`.
#[derive(Clone, Debug)]
pub struct RoundRobin {
    b: usize,
}

impl RoundRobin {
    pub fn new(b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::invalid("b must be positive"));
        }
        Ok(RoundRobin { b })
    }
}

impl GroupMapper for RoundRobin {
    fn reconfigure(&mut self, _q: &QueryAccess) -> Result<()> {
        Ok(())
    }

    fn group_of(&self, t: u64) -> Result<usize> {
        Ok((t % self.b as u64) as usize)
    }

    fn groups(&self) -> usize {
        self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdsConfig {
    /// Number of tracked queries.
    pub k: usize,
    /// Number of groups.
    pub b: usize,
    pub sample_capacity: usize,
    pub neighbor_capacity: usize,
    /// Velocity retained per sweep, in `(0, 1)`.
    pub decay: f64,
    /// Target coordinate distance between points whose signatures differ.
    pub d_far: f64,
    pub seed: u64,
}

impl MdsConfig {
    pub fn new(k: usize, b: usize) -> Self {
        MdsConfig {
            k,
            b,
            sample_capacity: 6,
            neighbor_capacity: 6,
            decay: 0.5,
            d_far: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.b == 0 {
            return Err(Error::invalid("k and b must be positive"));
        }
        if self.b > self.k {
            return Err(Error::invalid(format!("b ({}) exceeds k ({})", self.b, self.k)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::invalid(format!("decay {} outside (0, 1)", self.decay)));
        }
        if !(self.d_far.is_finite() && self.d_far > 0.0) {
            return Err(Error::invalid(format!("d_far {} must be positive", self.d_far)));
        }
        Ok(())
    }
}

/// One group produced by the rank partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupAssignment {
    /// Position of the group in coordinate order.
    pub group_id: usize,
    /// Member slot with the smallest identifier hash.
    pub centroid_id: usize,
    /// Value returned by `f` for every member, in `[0, b)`.
    pub value: usize,
    pub members: Vec<usize>,
}

/// Incremental one-dimensional MDS over the last `k` queries.
#[derive(Clone, Debug)]
pub struct MdsTuner {
    config: MdsConfig,
    coords: Vec<f64>,
    velocity: Vec<f64>,
    samples: Vec<Vec<usize>>,
    /// Bounded neighbour lists; the farthest member (by Min-Hash distance) is
    /// the one evicted, so they behave as max-heaps keyed on current distances.
    neighbors: Vec<Vec<usize>>,
    signatures: Vec<Option<MinHashSignature>>,
    seq: Vec<Option<u64>>,
    begin: usize,
    size: usize,
    last_t: Option<u64>,
    rng: ChaCha8Rng,
    query_hash: SeededHash,
    centroid_hash: SeededHash,
    value_hash: SeededHash,
    groups: Vec<GroupAssignment>,
    slot_value: Vec<usize>,
}

impl MdsTuner {
    pub fn new(config: MdsConfig) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        Ok(MdsTuner {
            coords: vec![0.0; k],
            velocity: vec![0.0; k],
            samples: vec![Vec::with_capacity(config.sample_capacity); k],
            neighbors: vec![Vec::with_capacity(config.neighbor_capacity); k],
            signatures: vec![None; k],
            seq: vec![None; k],
            begin: 0,
            size: 0,
            last_t: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            query_hash: SeededHash::new(config.seed ^ 0x51_7cc1_b727_220a),
            centroid_hash: SeededHash::new(config.seed ^ 0x2545_f491_4f6c_dd1d),
            value_hash: SeededHash::new(config.seed ^ 0x9e6c_63d0_676a_9a99),
            groups: Vec::new(),
            slot_value: vec![0; k],
            config,
        })
    }

    pub fn config(&self) -> &MdsConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn begin(&self) -> usize {
        self.begin
    }

    pub fn coordinate(&self, slot: usize) -> f64 {
        self.coords[slot]
    }

    pub fn velocity(&self, slot: usize) -> f64 {
        self.velocity[slot]
    }

    pub fn samples(&self, slot: usize) -> &[usize] {
        &self.samples[slot]
    }

    pub fn neighbors(&self, slot: usize) -> &[usize] {
        &self.neighbors[slot]
    }

    pub fn signature(&self, slot: usize) -> Option<MinHashSignature> {
        self.signatures[slot]
    }

    /// Query sequence number currently held by `slot`.
    pub fn query_at(&self, slot: usize) -> Option<u64> {
        self.seq[slot]
    }

    /// Live slots from oldest to newest.
    pub fn live_slots(&self) -> impl Iterator<Item = usize> + '_ {
        let k = self.config.k;
        (0..self.size).map(move |i| (self.begin + i) % k)
    }

    pub fn is_live(&self, slot: usize) -> bool {
        slot < self.config.k && (slot + self.config.k - self.begin) % self.config.k < self.size
    }

    /// Groups from the most recent reconfiguration, in coordinate order.
    pub fn group_assignments(&self) -> &[GroupAssignment] {
        &self.groups
    }

    /// Places `q` into the next ring slot and runs one force sweep.
    pub fn reconfigure(&mut self, q: &QueryAccess) -> Result<()> {
        if let Some(last) = self.last_t {
            if q.t <= last {
                return Err(Error::OutOfOrder { last, got: q.t });
            }
        }
        let signature = minhash_with(q.positions(), &self.query_hash)?;
        let k = self.config.k;
        let pos = (self.begin + self.size) % k;
        self.samples[pos].clear();
        self.neighbors[pos].clear();
        self.coords[pos] = self.rng.random_range(-0.5..=0.5);
        self.velocity[pos] = 0.0;
        self.signatures[pos] = Some(signature);
        self.seq[pos] = Some(q.t);
        self.last_t = Some(q.t);
        if self.size < k {
            self.size += 1;
        } else {
            self.begin = (self.begin + 1) % k;
        }

        for i in 0..self.size {
            let x = (self.begin + i) % k;
            self.update_sample_and_neighbors(x);
            self.update_velocity(x);
        }
        for i in 0..self.size {
            let x = (self.begin + i) % k;
            self.update_coordinates(x);
        }
        self.recompute_groups();
        Ok(())
    }

    fn distance(&self, x: usize, y: usize) -> u8 {
        match (self.signatures[x], self.signatures[y]) {
            (Some(a), Some(b)) => minhash_distance(a, b),
            _ => 1,
        }
    }

    fn random_other_live(&mut self, x: usize) -> Option<usize> {
        if self.size < 2 {
            return None;
        }
        let k = self.config.k;
        let offset_x = (x + k - self.begin) % k;
        let mut j = self.rng.random_range(0..self.size - 1);
        if j >= offset_x {
            j += 1;
        }
        Some((self.begin + j) % k)
    }

    fn farthest_neighbor(&self, x: usize) -> Option<usize> {
        let list = &self.neighbors[x];
        (0..list.len()).max_by_key(|&i| (self.distance(x, list[i]), i))
    }

    /// Refreshes the random sample of `x` and lets closer candidates displace
    /// its farthest neighbour.
    pub fn update_sample_and_neighbors(&mut self, x: usize) {
        self.samples[x].clear();
        let s_cap = self.config.sample_capacity;
        let n_cap = self.config.neighbor_capacity;
        for _ in 0..s_cap + n_cap {
            if self.samples[x].len() >= s_cap {
                break;
            }
            let Some(y) = self.random_other_live(x) else {
                return;
            };
            if self.neighbors[x].contains(&y) {
                self.samples[x].push(y);
                continue;
            }
            if self.neighbors[x].len() < n_cap {
                self.neighbors[x].push(y);
                continue;
            }
            match self.farthest_neighbor(x) {
                Some(far) if self.distance(x, y) < self.distance(x, self.neighbors[x][far]) => {
                    let displaced = self.neighbors[x].swap_remove(far);
                    self.samples[x].push(displaced);
                    self.neighbors[x].push(y);
                }
                _ => self.samples[x].push(y),
            }
        }
    }

    /// Mean spring force from the sample and neighbours, added to the decayed velocity.
    pub fn update_velocity(&mut self, x: usize) {
        let mut force = 0.0;
        let mut n = 0usize;
        for &y in self.samples[x].iter().chain(&self.neighbors[x]) {
            let target = self.config.d_far * f64::from(self.distance(x, y));
            let gap = (self.coords[x] - self.coords[y]).abs();
            force += if self.coords[x] < self.coords[y] {
                gap - target
            } else {
                target - gap
            };
            n += 1;
        }
        if n > 0 {
            force /= n as f64;
        }
        self.velocity[x] = self.config.decay * self.velocity[x] + force;
    }

    pub fn update_coordinates(&mut self, x: usize) {
        self.coords[x] += self.velocity[x];
    }

    fn slot_of(&self, t: u64) -> Result<usize> {
        let k = self.config.k;
        let guess = (t % k as u64) as usize;
        if self.seq[guess] == Some(t) && self.is_live(guess) {
            return Ok(guess);
        }
        self.live_slots()
            .find(|&s| self.seq[s] == Some(t))
            .ok_or(Error::NotLive(t))
    }

    /// Group value of query `t`, which must still be in the window.
    pub fn f(&self, t: u64) -> Result<usize> {
        let slot = self.slot_of(t)?;
        Ok(self.slot_value[slot])
    }

    fn recompute_groups(&mut self) {
        let b = self.config.b;
        let n = self.size;
        let mut ranked: Vec<usize> = self.live_slots().collect();
        ranked.sort_by(|&a, &c| self.coords[a].total_cmp(&self.coords[c]).then(a.cmp(&c)));

        let mut groups: Vec<GroupAssignment> = Vec::with_capacity(b);
        for (rank, &slot) in ranked.iter().enumerate() {
            let group_id = rank * b / n;
            match groups.last_mut() {
                Some(g) if g.group_id == group_id => g.members.push(slot),
                _ => groups.push(GroupAssignment {
                    group_id,
                    centroid_id: slot,
                    value: 0,
                    members: vec![slot],
                }),
            }
        }
        for g in &mut groups {
            g.centroid_id = *g
                .members
                .iter()
                .min_by_key(|&&s| (self.centroid_hash.hash(s as u64), s))
                .expect("groups are non-empty");
        }

        // Raw values can collide; later groups (by centroid hash) probe to the
        // next unused value so no two groups share one.
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&i| (self.centroid_hash.hash(groups[i].centroid_id as u64), groups[i].centroid_id));
        let mut used = vec![false; b];
        for i in order {
            let mut value = (self.value_hash.hash(groups[i].centroid_id as u64) % b as u64) as usize;
            while used[value] {
                value = (value + 1) % b;
            }
            used[value] = true;
            groups[i].value = value;
            for &s in &groups[i].members {
                self.slot_value[s] = value;
            }
        }
        self.groups = groups;
    }
}

impl GroupMapper for MdsTuner {
    fn reconfigure(&mut self, q: &QueryAccess) -> Result<()> {
        MdsTuner::reconfigure(self, q)
    }

    fn group_of(&self, t: u64) -> Result<usize> {
        self.f(t)
    }

    fn groups(&self) -> usize {
        self.config.b
    }
}
