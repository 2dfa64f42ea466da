//! Seeded synthetic query traces with a controllable rate of pattern change.
//!
//! A small pool of access templates is kept. Each query either retires the
//! oldest template in favour of a fresh one (probability `p`) or reuses a
//! template drawn uniformly from the pool, and then keeps a random subset of
//! that template's members. `p` is calibrated so that the expected number of
//! distinct templates seen in any 100 consecutive queries matches the
//! requested uniqueness.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::QueryAccess;

/// Width of the window over which uniqueness is measured.
pub const UNIQUENESS_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccessMode {
    Sequential,
    #[default]
    Random,
}

impl FromStr for AccessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(AccessMode::Sequential),
            "random" => Ok(AccessMode::Random),
            other => Err(Error::invalid(format!("unknown access mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AccessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccessMode::Sequential => "sequential",
            AccessMode::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub num_queries: usize,
    pub record_count: usize,
    /// Payload bytes per record; carried for the store, unused by generation.
    pub record_size: usize,
    pub records_per_query: usize,
    /// Expected distinct templates per 100 consecutive queries, in `[1, 100]`.
    pub uniqueness_100: f64,
    pub access_mode: AccessMode,
    pub seed: u64,
    /// Fraction of a template each query leaves out.
    pub jitter: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            num_queries: 3000,
            record_count: 100_000,
            record_size: 128,
            records_per_query: 2000,
            uniqueness_100: 10.0,
            access_mode: AccessMode::Random,
            seed: 0,
            jitter: 0.05,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=100.0).contains(&self.uniqueness_100) {
            return Err(Error::invalid(format!("uniqueness_100 {} outside [1, 100]", self.uniqueness_100)));
        }
        if self.records_per_query == 0 {
            return Err(Error::invalid("records_per_query must be positive"));
        }
        if self.records_per_query > self.record_count {
            return Err(Error::invalid(format!(
                "records_per_query {} exceeds record_count {}",
                self.records_per_query, self.record_count
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid(format!("jitter {} outside [0, 1)", self.jitter)));
        }
        if self.record_size == 0 {
            return Err(Error::invalid("record_size must be positive"));
        }
        Ok(())
    }

    /// Number of templates alive at once.
    pub fn pool_size(&self) -> usize {
        ((self.uniqueness_100 / 2.0).ceil() as usize).max(1)
    }

    /// Members per template, before each query's subsampling.
    pub fn template_size(&self) -> usize {
        let wide = (self.records_per_query as f64 / (1.0 - self.jitter)).round() as usize;
        wide.clamp(self.records_per_query, self.record_count)
    }

    fn header(&self) -> String {
        format!(
            "# num_queries={} record_count={} record_size={} records_per_query={} uniqueness_100={} access_mode={} seed={} jitter={}",
            self.num_queries,
            self.record_count,
            self.record_size,
            self.records_per_query,
            self.uniqueness_100,
            self.access_mode,
            self.seed,
            self.jitter
        )
    }

    fn parse_header(line: &str, line_no: usize) -> Result<Self> {
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut spec = WorkloadSpec::default();
        let mut seen = 0;
        for field in line.trim_start_matches('#').split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(format!("header field '{field}' is not key=value")))?;
            let bad = |_| err(format!("bad value '{value}' for {key}"));
            match key {
                "num_queries" => spec.num_queries = value.parse().map_err(bad)?,
                "record_count" => spec.record_count = value.parse().map_err(bad)?,
                "record_size" => spec.record_size = value.parse().map_err(bad)?,
                "records_per_query" => spec.records_per_query = value.parse().map_err(bad)?,
                "uniqueness_100" => spec.uniqueness_100 = value.parse().map_err(|_| err(format!("bad value '{value}' for {key}")))?,
                "access_mode" => spec.access_mode = value.parse().map_err(|_| err(format!("bad value '{value}' for {key}")))?,
                "seed" => spec.seed = value.parse().map_err(bad)?,
                "jitter" => spec.jitter = value.parse().map_err(|_| err(format!("bad value '{value}' for {key}")))?,
                other => return Err(err(format!("unknown header field '{other}'"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(err(format!("header has {seen} of 8 fields")));
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    /// Parameters the trace was generated from, if known.
    pub spec: Option<WorkloadSpec>,
    pub queries: Vec<QueryAccess>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Expected distinct templates among `window` queries when each query is
/// fresh with probability `p` and otherwise draws uniformly from `pool`
/// templates, the oldest being retired on every fresh draw.
pub fn expected_distinct(p: f64, pool: usize, window: usize) -> f64 {
    let fresh = p * window as f64;
    let pick = (1.0 - p) / pool as f64;
    // Template of age rank j (0 = oldest) survives j fresh draws. Track the
    // probability of it being alive and unused after each fresh draw count.
    let mut reused = 0.0;
    for j in 0..pool {
        let mut alive = vec![0.0; j + 1];
        alive[0] = 1.0;
        let mut used = 0.0;
        for _ in 0..window {
            let mut next = vec![0.0; j + 1];
            for (e, &a) in alive.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                used += a * pick;
                next[e] += a * (1.0 - p - pick);
                if e < j {
                    next[e + 1] += a * p;
                }
            }
            alive = next;
        }
        reused += used;
    }
    fresh + reused
}

/// Fresh-template probability giving `uniqueness` expected distinct templates
/// per window for the given pool size.
pub fn calibrate_fresh_probability(uniqueness: f64, pool: usize, window: usize) -> f64 {
    if expected_distinct(0.0, pool, window) >= uniqueness {
        return 0.0;
    }
    if uniqueness >= window as f64 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_distinct(mid, pool, window) < uniqueness {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn new_template(spec: &WorkloadSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let size = spec.template_size();
    match spec.access_mode {
        AccessMode::Sequential => {
            let start = rng.random_range(0..=spec.record_count - size);
            (start..start + size).collect()
        }
        AccessMode::Random => {
            let mut members = sample(rng, spec.record_count, size).into_vec();
            members.sort_unstable();
            members
        }
    }
}

/// Generates a trace together with the template id behind each query.
pub fn generate_labeled(spec: &WorkloadSpec) -> Result<(Trace, Vec<u64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool_size = spec.pool_size();
    let p = calibrate_fresh_probability(spec.uniqueness_100, pool_size, UNIQUENESS_WINDOW);

    let mut next_id = 0u64;
    let mut pool: VecDeque<(u64, Vec<usize>)> = VecDeque::with_capacity(pool_size);
    for _ in 0..pool_size {
        pool.push_back((next_id, new_template(spec, &mut rng)));
        next_id += 1;
    }

    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut labels = Vec::with_capacity(spec.num_queries);
    for t in 0..spec.num_queries {
        let index = if rng.random_bool(p) {
            pool.pop_front();
            pool.push_back((next_id, new_template(spec, &mut rng)));
            next_id += 1;
            pool.len() - 1
        } else {
            rng.random_range(0..pool.len())
        };
        let (id, members) = &pool[index];
        let keep = sample(&mut rng, members.len(), spec.records_per_query);
        let mut positions: Vec<usize> = keep.iter().map(|i| members[i]).collect();
        positions.sort_unstable();
        queries.push(QueryAccess::new(t as u64, positions)?);
        labels.push(*id);
    }
    Ok((Trace { spec: Some(spec.clone()), queries }, labels))
}

pub fn generate(spec: &WorkloadSpec) -> Result<Trace> {
    generate_labeled(spec).map(|(trace, _)| trace)
}

pub fn write_trace_to<W: Write>(trace: &Trace, mut out: W) -> Result<()> {
    if let Some(spec) = &trace.spec {
        writeln!(out, "{}", spec.header())?;
    }
    let mut line = String::new();
    for q in &trace.queries {
        line.clear();
        write!(line, "{}:", q.t).expect("writing to a String");
        for p in q.positions() {
            write!(line, " {p}").expect("writing to a String");
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_trace_to(trace, BufWriter::new(File::create(path)?))
}

pub fn read_trace_from<R: BufRead>(input: R) -> Result<Trace> {
    let mut trace = Trace::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let err = |message: String| Error::Parse { line: line_no, message };
        if line.starts_with('#') {
            if i != 0 {
                return Err(err("header must be the first line".into()));
            }
            trace.spec = Some(WorkloadSpec::parse_header(&line, line_no)?);
            continue;
        }
        let (t, rest) = line.split_once(':').ok_or_else(|| err("expected 't: positions'".into()))?;
        let t: u64 = t.trim().parse().map_err(|_| err(format!("bad query number '{t}'")))?;
        if t != trace.queries.len() as u64 {
            return Err(err(format!("expected query {}, found {t}", trace.queries.len())));
        }
        let positions = rest
            .split_whitespace()
            .map(|p| p.parse::<usize>().map_err(|_| err(format!("bad position '{p}'"))))
            .collect::<Result<Vec<_>>>()?;
        let q = QueryAccess::new(t, positions).map_err(|e| err(e.to_string()))?;
        trace.queries.push(q);
    }
    Ok(trace)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(u: f64) -> WorkloadSpec {
        WorkloadSpec {
            num_queries: 3000,
            record_count: 20_000,
            records_per_query: 200,
            uniqueness_100: u,
            seed: 7,
            ..WorkloadSpec::default()
        }
    }

    fn jaccard(a: &[usize], b: &[usize]) -> f64 {
        let a: HashSet<_> = a.iter().collect();
        let b: HashSet<_> = b.iter().collect();
        a.intersection(&b).count() as f64 / a.union(&b).count() as f64
    }

    /// Direct simulation of the template process, independent of the DP.
    fn simulated_distinct(p: f64, pool: usize, window: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ages: VecDeque<u64> = (0..pool as u64).collect();
        let mut next = pool as u64;
        let runs = 4000;
        let mut total = 0usize;
        for _ in 0..runs {
            let mut seen = HashSet::new();
            for _ in 0..window {
                if rng.random_bool(p) {
                    ages.pop_front();
                    ages.push_back(next);
                    seen.insert(next);
                    next += 1;
                } else {
                    seen.insert(ages[rng.random_range(0..pool)]);
                }
            }
            total += seen.len();
        }
        total as f64 / runs as f64
    }

    #[test]
    fn distinct_count_matches_simulation() {
        for (p, pool) in [(0.0, 3), (0.05, 5), (0.2, 13), (0.5, 25), (1.0, 50)] {
            let exact = expected_distinct(p, pool, 100);
            let sim = simulated_distinct(p, pool, 100, 11);
            assert!((exact - sim).abs() < 0.02 * exact.max(1.0), "p={p} pool={pool}: {exact} vs {sim}");
        }
    }

    #[test]
    fn calibration_hits_extremes() {
        assert_eq!(calibrate_fresh_probability(1.0, 1, 100), 0.0);
        assert_eq!(calibrate_fresh_probability(100.0, 50, 100), 1.0);
        for u in [2.0, 10.0, 25.0, 50.0, 75.0] {
            let pool = spec(u).pool_size();
            let p = calibrate_fresh_probability(u, pool, 100);
            assert!((expected_distinct(p, pool, 100) - u).abs() < 1e-6, "u={u}");
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let s = spec(10.0);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = WorkloadSpec { seed: 8, ..s.clone() };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn full_dynamism_never_repeats_a_template() {
        let (_, labels) = generate_labeled(&spec(100.0)).unwrap();
        let distinct: HashSet<_> = labels.iter().collect();
        assert_eq!(distinct.len(), labels.len());
    }

    #[test]
    fn no_dynamism_keeps_queries_similar() {
        let (trace, labels) = generate_labeled(&spec(1.0)).unwrap();
        assert!(labels.iter().all(|&l| l == labels[0]));
        let n = trace.len() - 1;
        let mean: f64 = trace
            .queries
            .windows(2)
            .map(|w| jaccard(w[0].positions(), w[1].positions()))
            .sum::<f64>()
            / n as f64;
        assert!(mean >= 0.9, "mean consecutive Jaccard {mean}");
    }

    #[test]
    fn windowed_uniqueness_tracks_target() {
        for u in [1.0, 5.0, 10.0, 20.0, 25.0, 50.0, 100.0] {
            let (_, labels) = generate_labeled(&spec(u)).unwrap();
            let windows = labels.len() - UNIQUENESS_WINDOW + 1;
            let mean = (0..windows)
                .map(|s| labels[s..s + UNIQUENESS_WINDOW].iter().collect::<HashSet<_>>().len())
                .sum::<usize>() as f64
                / windows as f64;
            assert!((mean - u).abs() <= 0.1 * u, "u={u}: measured {mean}");
        }
    }

    #[test]
    fn records_per_query_mean() {
        let s = WorkloadSpec { num_queries: 1000, ..spec(10.0) };
        let trace = generate(&s).unwrap();
        let mean = trace.queries.iter().map(|q| q.len()).sum::<usize>() as f64 / trace.len() as f64;
        assert!((mean - 200.0).abs() <= 10.0);
    }

    #[test]
    fn t_values_are_consecutive_and_in_range() {
        let s = spec(25.0);
        let trace = generate(&s).unwrap();
        for (i, q) in trace.queries.iter().enumerate() {
            assert_eq!(q.t, i as u64);
            assert!(q.check_capacity(s.record_count).is_ok());
        }
    }

    #[test]
    fn sequential_mode_uses_contiguous_templates() {
        let s = WorkloadSpec { access_mode: AccessMode::Sequential, jitter: 0.0, ..spec(10.0) };
        let trace = generate(&s).unwrap();
        for q in &trace.queries {
            let p = q.positions();
            assert_eq!(p[p.len() - 1] - p[0], p.len() - 1);
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let s = WorkloadSpec { records_per_query: 30_000, ..spec(10.0) };
        assert!(generate(&s).is_err());
        assert!(generate(&WorkloadSpec { uniqueness_100: 0.5, ..spec(1.0) }).is_err());
        assert!(generate(&WorkloadSpec { uniqueness_100: 101.0, ..spec(1.0) }).is_err());
        assert!(generate(&WorkloadSpec { jitter: 1.0, ..spec(1.0) }).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let s = WorkloadSpec { num_queries: 50, ..spec(10.0) };
        let trace = generate(&s).unwrap();
        let mut buf = Vec::new();
        write_trace_to(&trace, &mut buf).unwrap();
        assert_eq!(read_trace_from(&buf[..]).unwrap(), trace);

        let bare = Trace { spec: None, queries: trace.queries.clone() };
        let mut buf = Vec::new();
        write_trace_to(&bare, &mut buf).unwrap();
        assert_eq!(read_trace_from(&buf[..]).unwrap(), bare);
    }

    #[test]
    fn text_format_is_exact() {
        let trace = Trace {
            spec: None,
            queries: vec![QueryAccess::new(0, vec![1, 4]).unwrap(), QueryAccess::new(1, vec![]).unwrap()],
        };
        let mut buf = Vec::new();
        write_trace_to(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0: 1 4\n1:\n");
    }

    #[test]
    fn empty_input_is_empty_trace() {
        assert_eq!(read_trace_from(&b""[..]).unwrap(), Trace::default());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let cases: [(&str, usize); 5] = [
            ("0: 1 2\n1 3\n", 2),
            ("0: 1 2\n1: 3 x\n", 2),
            ("0: 2 1\n", 1),
            ("0: 1\n2: 3\n", 2),
            ("0: 1\n# seed=1\n", 2),
        ];
        for (text, line) in cases {
            match read_trace_from(text.as_bytes()) {
                Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
