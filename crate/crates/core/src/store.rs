//! Paged in-memory key-value store whose placement follows a [`RecordHasher`].
//!
//! Records live in fixed-size slots of fixed-size pages. A record's page is
//! its current hash target, or the next page (wrapping) with a free slot.
//! Queries are bracketed by `begin_query`/`end_query`; at the end of each
//! non-empty query the hasher is fed the query's access set and the accessed
//! records are moved towards their new targets.

use std::collections::HashMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::lsh::{LshConfig, RecordHasher, StaticHasher, TunableLsh};
use crate::model::QueryAccess;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreConfig {
    pub page_size: usize,
    pub record_size: usize,
    pub pages: u64,
    /// Relocate accessed records at the end of each query.
    pub relocate: bool,
    /// Moves allowed per query; `None` means one per accessed record.
    pub move_budget: Option<usize>,
}

impl StoreConfig {
    pub fn new(pages: u64) -> Self {
        StoreConfig { page_size: 4096, record_size: 128, pages, relocate: true, move_budget: None }
    }

    pub fn slots_per_page(&self) -> usize {
        self.page_size / self.record_size.max(1)
    }

    pub fn capacity(&self) -> usize {
        self.slots_per_page() * self.pages as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.record_size == 0 || self.pages == 0 {
            return Err(Error::invalid("record size and page count must be positive"));
        }
        if self.slots_per_page() == 0 {
            return Err(Error::invalid(format!(
                "record size {} exceeds page size {}",
                self.record_size, self.page_size
            )));
        }
        if self.slots_per_page() > u16::MAX as usize {
            return Err(Error::invalid("more than 65535 slots per page"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryMetrics {
    pub t: u64,
    /// Time from `begin_query` to `end_query`.
    pub fetch_ns: u64,
    /// Time spent inside `end_query` tuning and relocating.
    pub tune_ns: u64,
    pub pages_touched: u64,
    pub moves: u64,
    pub records: u64,
}

/// Where a key lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub position: usize,
    pub page: u64,
    pub slot: usize,
}

struct OpenQuery {
    started: Instant,
    accessed: Vec<usize>,
    pages_touched: u64,
}

pub struct PagedStore<H: RecordHasher> {
    config: StoreConfig,
    hasher: H,
    spp: usize,
    data: Vec<u8>,
    /// Global slot index to position, `usize::MAX` when free.
    slot_position: Vec<usize>,
    free: Vec<Vec<u16>>,
    has_free: Vec<u64>,
    directory: HashMap<u64, usize>,
    position_key: Vec<u64>,
    position_slot: Vec<usize>,
    position_stamp: Vec<u64>,
    page_stamp: Vec<u64>,
    next_t: u64,
    open: Option<OpenQuery>,
    last_accessed: Vec<usize>,
    metrics: Vec<QueryMetrics>,
}

const FREE: usize = usize::MAX;
/// Pages examined per record during relocation.
const PROBE_LIMIT: usize = 64;

impl PagedStore<TunableLsh> {
    /// Self-clustering store placed by a freshly initialised Tunable-LSH.
    pub fn self_clustering(config: StoreConfig, lsh: LshConfig) -> Result<Self> {
        if lsh.epsilon != config.pages {
            return Err(Error::invalid(format!(
                "hasher has {} pages, store has {}",
                lsh.epsilon, config.pages
            )));
        }
        PagedStore::new(config, TunableLsh::new(lsh)?)
    }
}

impl PagedStore<StaticHasher> {
    /// Baseline placed by a seeded uniform hash, never relocated.
    pub fn static_placement(mut config: StoreConfig, seed: u64) -> Result<Self> {
        config.relocate = false;
        let hasher = StaticHasher::new(config.pages, config.capacity(), seed)?;
        PagedStore::new(config, hasher)
    }
}

impl<H: RecordHasher> PagedStore<H> {
    pub fn new(config: StoreConfig, hasher: H) -> Result<Self> {
        config.validate()?;
        if hasher.epsilon() != config.pages {
            return Err(Error::invalid(format!(
                "hasher has {} pages, store has {}",
                hasher.epsilon(),
                config.pages
            )));
        }
        let spp = config.slots_per_page();
        let pages = config.pages as usize;
        let capacity = config.capacity();
        let free = (0..pages).map(|_| (0..spp as u16).rev().collect()).collect();
        let mut has_free = vec![u64::MAX; pages.div_ceil(64)];
        if !pages.is_multiple_of(64) {
            *has_free.last_mut().expect("at least one page") = (1u64 << (pages % 64)) - 1;
        }
        Ok(PagedStore {
            spp,
            data: vec![0; capacity * config.record_size],
            slot_position: vec![FREE; capacity],
            free,
            has_free,
            directory: HashMap::new(),
            position_key: Vec::new(),
            position_slot: Vec::new(),
            position_stamp: Vec::new(),
            page_stamp: vec![0; pages],
            next_t: 0,
            open: None,
            last_accessed: Vec::new(),
            metrics: Vec::new(),
            hasher,
            config,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn hasher(&self) -> &H {
        &self.hasher
    }

    pub fn len(&self) -> usize {
        self.directory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directory.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity()
    }

    pub fn metrics(&self) -> &[QueryMetrics] {
        &self.metrics
    }

    pub fn take_metrics(&mut self) -> Vec<QueryMetrics> {
        std::mem::take(&mut self.metrics)
    }

    pub fn location(&self, key: u64) -> Option<Location> {
        let &position = self.directory.get(&key)?;
        let slot = self.position_slot[position];
        Some(Location { position, page: (slot / self.spp) as u64, slot: slot % self.spp })
    }

    pub fn page_occupancy(&self, page: u64) -> usize {
        self.spp - self.free[page as usize].len()
    }

    fn set_has_free(&mut self, page: usize, value: bool) {
        let (w, bit) = (page / 64, 1u64 << (page % 64));
        if value {
            self.has_free[w] |= bit;
        } else {
            self.has_free[w] &= !bit;
        }
    }

    /// First page at or after `start` (wrapping) with a free slot.
    fn next_free_page(&self, start: usize) -> Option<usize> {
        let pages = self.config.pages as usize;
        let words = self.has_free.len();
        let (w0, b0) = (start / 64, start % 64);
        let head = self.has_free[w0] & (u64::MAX << b0);
        if head != 0 {
            return Some(w0 * 64 + head.trailing_zeros() as usize);
        }
        for i in 1..=words {
            let w = (w0 + i) % words;
            let mut word = self.has_free[w];
            if w == w0 {
                word &= !(u64::MAX << b0);
            }
            if word != 0 {
                let page = w * 64 + word.trailing_zeros() as usize;
                debug_assert!(page < pages);
                return Some(page);
            }
        }
        None
    }

    fn take_slot(&mut self, page: usize) -> usize {
        let slot = self.free[page].pop().expect("page has a free slot") as usize;
        if self.free[page].is_empty() {
            self.set_has_free(page, false);
        }
        page * self.spp + slot
    }

    fn release_slot(&mut self, global: usize) {
        let page = global / self.spp;
        if self.free[page].is_empty() {
            self.set_has_free(page, true);
        }
        self.free[page].push((global % self.spp) as u16);
        self.slot_position[global] = FREE;
    }

    fn payload_range(&self, global: usize) -> std::ops::Range<usize> {
        let r = self.config.record_size;
        global * r..(global + 1) * r
    }

    /// Inserts or overwrites `key`.
    pub fn put(&mut self, key: u64, payload: &[u8]) -> Result<()> {
        if payload.len() != self.config.record_size {
            return Err(Error::invalid(format!(
                "payload is {} bytes, records are {}",
                payload.len(),
                self.config.record_size
            )));
        }
        if let Some(&position) = self.directory.get(&key) {
            let range = self.payload_range(self.position_slot[position]);
            self.data[range].copy_from_slice(payload);
            return Ok(());
        }
        if self.len() >= self.capacity() {
            return Err(Error::StoreFull { capacity: self.capacity() });
        }
        let position = self.position_key.len();
        let target = self.hasher.hash(position)?.page as usize;
        let page = self.next_free_page(target).ok_or(Error::StoreFull { capacity: self.capacity() })?;
        let global = self.take_slot(page);
        self.slot_position[global] = position;
        let range = self.payload_range(global);
        self.data[range].copy_from_slice(payload);
        self.directory.insert(key, position);
        self.position_key.push(key);
        self.position_slot.push(global);
        self.position_stamp.push(0);
        Ok(())
    }

    /// Returns the payload of `key`, recording the access if a query is open.
    pub fn get(&mut self, key: u64) -> Result<&[u8]> {
        let &position = self.directory.get(&key).ok_or(Error::NotFound(key))?;
        let global = self.position_slot[position];
        if let Some(open) = self.open.as_mut() {
            let stamp = self.next_t + 1;
            if self.position_stamp[position] != stamp {
                self.position_stamp[position] = stamp;
                open.accessed.push(position);
            }
            let page = global / self.spp;
            if self.page_stamp[page] != stamp {
                self.page_stamp[page] = stamp;
                open.pages_touched += 1;
            }
        }
        Ok(&self.data[self.payload_range(global)])
    }

    pub fn begin_query(&mut self) -> Result<()> {
        if self.open.is_some() {
            return Err(Error::QueryState("a query is already open"));
        }
        self.open = Some(OpenQuery { started: Instant::now(), accessed: Vec::new(), pages_touched: 0 });
        Ok(())
    }

    /// Closes the open query, tunes the hasher and relocates; returns the query number.
    pub fn end_query(&mut self) -> Result<u64> {
        let open = self.open.take().ok_or(Error::QueryState("no query is open"))?;
        let tune_start = Instant::now();
        let fetch_ns = (tune_start - open.started).as_nanos() as u64;
        let t = self.next_t;
        self.next_t += 1;

        let records = open.accessed.len() as u64;
        let mut moves = 0;
        if !open.accessed.is_empty() {
            let q = QueryAccess::from_unsorted(t, open.accessed);
            self.hasher.observe(&q)?;
            self.last_accessed = q.positions().to_vec();
            if self.config.relocate {
                let budget = self.config.move_budget.unwrap_or(self.last_accessed.len());
                moves = self.relocate(budget)?;
            }
        } else {
            self.last_accessed.clear();
        }
        let tune_ns = tune_start.elapsed().as_nanos() as u64;
        self.metrics.push(QueryMetrics {
            t,
            fetch_ns,
            tune_ns,
            pages_touched: open.pages_touched,
            moves: moves as u64,
            records,
        });
        Ok(t)
    }

    /// Moves records accessed by the last query towards their hash targets.
    ///
    /// Pages are walked from the target, at most `PROBE_LIMIT` of them. A record
    /// takes the first free slot it meets, or swaps with a resident that was not
    /// accessed by the last query and sits farther from its own target than the
    /// record would. It stays put if its current page comes first. `budget`
    /// bounds the number of accessed records relocated; the return value counts
    /// every physical move, displaced residents included.
    pub fn relocate(&mut self, budget: usize) -> Result<usize> {
        if self.open.is_some() {
            return Err(Error::QueryState("cannot relocate while a query is open"));
        }
        if budget == 0 {
            return Ok(0);
        }
        let pages = self.config.pages as usize;
        let mut pending = Vec::with_capacity(self.last_accessed.len());
        for &position in &self.last_accessed {
            let target = self.hasher.hash(position)?.page as usize;
            let current = self.position_slot[position] / self.spp;
            if target != current {
                pending.push((target, position));
            }
        }
        pending.sort_unstable();

        let stamp = self.next_t;
        let (mut moves, mut relocated) = (0, 0);
        let mut cursor = (usize::MAX, 0);
        for (target, position) in pending {
            if relocated == budget {
                break;
            }
            if cursor.0 != target {
                cursor = (target, target);
            }
            let current = self.position_slot[position] / self.spp;
            let dist = |p: usize| (p + pages - target) % pages;
            let mut page = cursor.1;
            let mut placed = None;
            for _ in 0..PROBE_LIMIT.min(pages) {
                if page == current {
                    break;
                }
                if !self.free[page].is_empty() {
                    placed = Some(Err(page));
                    break;
                }
                if let Some(slot) = self.displaceable(page, dist(page), stamp)? {
                    placed = Some(Ok(slot));
                    break;
                }
                page = (page + 1) % pages;
                cursor.1 = page;
            }
            let from = self.position_slot[position];
            match placed {
                None => {}
                Some(Err(free_page)) => {
                    let to = self.take_slot(free_page);
                    let src = self.payload_range(from);
                    self.data.copy_within(src, to * self.config.record_size);
                    self.slot_position[to] = position;
                    self.position_slot[position] = to;
                    self.release_slot(from);
                    moves += 1;
                    relocated += 1;
                }
                Some(Ok(to)) => {
                    let other = self.slot_position[to];
                    let r = self.config.record_size;
                    let (lo, hi) = (from.min(to), from.max(to));
                    let (head, tail) = self.data.split_at_mut(hi * r);
                    head[lo * r..(lo + 1) * r].swap_with_slice(&mut tail[..r]);
                    self.slot_position[to] = position;
                    self.slot_position[from] = other;
                    self.position_slot[position] = to;
                    self.position_slot[other] = from;
                    moves += 2;
                    relocated += 1;
                }
            }
        }
        Ok(moves)
    }

    /// A slot on `page` whose record was not accessed at `stamp` and lies more
    /// than `dist` pages past its own target.
    fn displaceable(&self, page: usize, dist: usize, stamp: u64) -> Result<Option<usize>> {
        let pages = self.config.pages as usize;
        for global in page * self.spp..(page + 1) * self.spp {
            let other = self.slot_position[global];
            if other == FREE || self.position_stamp[other] == stamp {
                continue;
            }
            let home = self.hasher.hash(other)?.page as usize;
            if (page + pages - home) % pages > dist {
                return Ok(Some(global));
            }
        }
        Ok(None)
    }

    /// Checks directory, slot and free-list consistency.
    pub fn check_integrity(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(m));
        if self.directory.len() != self.position_key.len() {
            return fail("directory and position table disagree in size".into());
        }
        for (&key, &position) in &self.directory {
            if self.position_key.get(position) != Some(&key) {
                return fail(format!("key {key} maps to position {position} owned by another key"));
            }
            let global = self.position_slot[position];
            if self.slot_position[global] != position {
                return fail(format!("slot {global} does not hold key {key}"));
            }
        }
        let occupied = self.slot_position.iter().filter(|&&p| p != FREE).count();
        if occupied != self.directory.len() {
            return fail(format!("{occupied} occupied slots for {} keys", self.directory.len()));
        }
        for page in 0..self.config.pages as usize {
            let free = &self.free[page];
            if free.len() > self.spp {
                return fail(format!("page {page} lists {} free slots", free.len()));
            }
            let used = (0..self.spp).filter(|s| self.slot_position[page * self.spp + s] != FREE).count();
            if used + free.len() != self.spp {
                return fail(format!("page {page}: {used} used + {} free != {}", free.len(), self.spp));
            }
            if free.iter().any(|&s| self.slot_position[page * self.spp + s as usize] != FREE) {
                return fail(format!("page {page} lists an occupied slot as free"));
            }
            let flagged = self.has_free[page / 64] >> (page % 64) & 1 == 1;
            if flagged != !free.is_empty() {
                return fail(format!("free-page bitmap wrong for page {page}"));
            }
        }
        Ok(())
    }

    /// All stored `(key, payload)` pairs, sorted by key.
    pub fn contents(&self) -> Vec<(u64, Vec<u8>)> {
        let mut out: Vec<(u64, Vec<u8>)> = self
            .directory
            .iter()
            .map(|(&k, &p)| (k, self.data[self.payload_range(self.position_slot[p])].to_vec()))
            .collect();
        out.sort_unstable();
        out
    }
}
