//! Store replays and hasher sensitivity runs behind `store-bench` and `lsh-bench`.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tlsh_core::lsh::{BitSamplingHasher, LshConfig, RecordHasher, StaticHasher, TunableLsh, UtilizationWindow};
use tlsh_core::store::{PagedStore, QueryMetrics, StoreConfig};
use tlsh_core::workload::{generate, Trace, WorkloadSpec};

use crate::config::{ExperimentConfig, LshParams, SweepParam};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StoreKind {
    SelfClustering,
    Static,
    BitSampling,
}

impl StoreKind {
    pub const ALL: [StoreKind; 3] = [StoreKind::SelfClustering, StoreKind::Static, StoreKind::BitSampling];

    pub fn name(self) -> &'static str {
        match self {
            StoreKind::SelfClustering => "self_clustering",
            StoreKind::Static => "static",
            StoreKind::BitSampling => "bit_sampling",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HasherKind {
    Tunable,
    Unoptimized,
    BitSampling,
    Static,
}

impl HasherKind {
    pub const ALL: [HasherKind; 4] =
        [HasherKind::Tunable, HasherKind::Unoptimized, HasherKind::BitSampling, HasherKind::Static];

    pub fn name(self) -> &'static str {
        match self {
            HasherKind::Tunable => "tunable",
            HasherKind::Unoptimized => "tunable_unoptimized",
            HasherKind::BitSampling => "bit_sampling",
            HasherKind::Static => "static",
        }
    }
}

/// Pages needed to hold `records` at the given fill factor.
pub fn store_pages(records: usize, record_size: usize, fill: f64) -> u64 {
    let spp = StoreConfig { record_size, ..StoreConfig::new(1) }.slots_per_page().max(1);
    ((records as f64 / (spp as f64 * fill)).ceil() as u64).max(1)
}

fn payload(key: u64, size: usize) -> Vec<u8> {
    key.to_le_bytes().iter().copied().cycle().take(size).collect()
}

fn replay<H: RecordHasher>(mut store: PagedStore<H>, spec: &WorkloadSpec, trace: &Trace) -> Result<Vec<QueryMetrics>> {
    for key in 0..spec.record_count as u64 {
        store.put(key, &payload(key, spec.record_size))?;
    }
    for q in &trace.queries {
        store.begin_query()?;
        for &p in q.positions() {
            store.get(p as u64)?;
        }
        store.end_query()?;
    }
    Ok(store.take_metrics())
}

/// Loads `spec.record_count` records into a store of the given kind and replays `trace`.
pub fn replay_store(
    kind: StoreKind,
    spec: &WorkloadSpec,
    trace: &Trace,
    lsh: &LshParams,
    fill: f64,
    seed: u64,
) -> Result<Vec<QueryMetrics>> {
    let pages = store_pages(spec.record_count, spec.record_size, fill);
    let config = StoreConfig { record_size: spec.record_size, ..StoreConfig::new(pages) };
    match kind {
        StoreKind::SelfClustering => {
            let lsh = LshConfig::new(lsh.k, lsh.b, pages, spec.record_count)
                .with_seed(seed)
                .with_curve(lsh.curve);
            replay(PagedStore::self_clustering(config, lsh)?, spec, trace)
        }
        StoreKind::Static => replay(PagedStore::static_placement(config, seed)?, spec, trace),
        StoreKind::BitSampling => {
            let hasher = BitSamplingHasher::new(lsh.k, 2 * lsh.b, pages, spec.record_count, seed)?;
            replay(PagedStore::new(config, hasher)?, spec, trace)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StoreSummary {
    pub pages_touched: f64,
    pub moves: f64,
    pub fetch_ns: f64,
    pub tune_ns: f64,
}

impl StoreSummary {
    pub fn of(metrics: &[QueryMetrics]) -> Self {
        let n = metrics.len().max(1) as f64;
        let mean = |f: fn(&QueryMetrics) -> u64| metrics.iter().map(|m| f(m) as f64).sum::<f64>() / n;
        StoreSummary {
            pages_touched: mean(|m| m.pages_touched),
            moves: mean(|m| m.moves),
            fetch_ns: mean(|m| m.fetch_ns),
            tune_ns: mean(|m| m.tune_ns),
        }
    }

    pub fn tune_fraction(&self) -> f64 {
        let total = self.fetch_ns + self.tune_ns;
        if total == 0.0 {
            0.0
        } else {
            self.tune_ns / total
        }
    }

    fn mean(items: &[StoreSummary]) -> Self {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&StoreSummary) -> f64| items.iter().map(f).sum::<f64>() / n;
        StoreSummary {
            pages_touched: sum(|s| s.pages_touched),
            moves: sum(|s| s.moves),
            fetch_ns: sum(|s| s.fetch_ns),
            tune_ns: sum(|s| s.tune_ns),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreRow {
    pub value: f64,
    pub kind: StoreKind,
    pub summary: StoreSummary,
}

fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64)
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    (0..cfg.values.len()).flat_map(|v| (0..cfg.repetitions).map(move |r| (v, r))).collect()
}

/// Replays each swept value and repetition against every store kind; rows are means over repetitions.
pub fn run_store_benchmark(cfg: &ExperimentConfig) -> Result<Vec<StoreRow>> {
    cfg.validate()?;
    let results: Vec<Vec<StoreSummary>> = jobs(cfg)
        .into_par_iter()
        .map(|(v, rep)| {
            let (mut spec, lsh) = cfg.at(cfg.values[v]);
            spec.seed = rep_seed(spec.seed, rep);
            let trace = generate(&spec)?;
            StoreKind::ALL
                .iter()
                .map(|&kind| {
                    let metrics = replay_store(kind, &spec, &trace, &lsh, cfg.fill, spec.seed)?;
                    let skip = cfg.warmup.min(metrics.len());
                    Ok(StoreSummary::of(&metrics[skip..]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (v, &value) in cfg.values.iter().enumerate() {
        let reps = &results[v * cfg.repetitions..(v + 1) * cfg.repetitions];
        for (i, &kind) in StoreKind::ALL.iter().enumerate() {
            let per_rep: Vec<StoreSummary> = reps.iter().map(|r| r[i]).collect();
            rows.push(StoreRow { value, kind, summary: StoreSummary::mean(&per_rep) });
        }
    }
    Ok(rows)
}

pub fn write_store_csv<W: Write>(cfg: &ExperimentConfig, rows: &[StoreRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["experiment", "parameter", "value", "store", "repetitions", "pages_touched", "moves"];
    if cfg.with_timings {
        header.extend(["fetch_ms", "tune_ms", "tune_fraction"]);
    }
    w.write_record(&header)?;
    for row in rows {
        let s = &row.summary;
        let mut record = vec![
            cfg.experiment.clone(),
            cfg.sweep.to_string(),
            format_value(row.value),
            row.kind.name().to_string(),
            cfg.repetitions.to_string(),
            format!("{:.4}", s.pages_touched),
            format!("{:.4}", s.moves),
        ];
        if cfg.with_timings {
            record.push(format!("{:.6}", s.fetch_ns / 1e6));
            record.push(format!("{:.6}", s.tune_ns / 1e6));
            record.push(format!("{:.6}", s.tune_fraction()));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Hits and conditioning events for one hasher in one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccuracyTally {
    pub hits: u64,
    pub conditioned: u64,
}

impl AccuracyTally {
    pub fn probability(&self) -> Option<f64> {
        (self.conditioned > 0).then(|| self.hits as f64 / self.conditioned as f64)
    }
}

/// Settings for one sensitivity run.
#[derive(Clone, Debug)]
pub struct SensitivityRun {
    pub spec: WorkloadSpec,
    pub lsh: LshParams,
    pub theta: f64,
    pub x: f64,
    pub pairs_per_query: usize,
    pub warmup: usize,
    pub seed: u64,
}

fn build_hashers(run: &SensitivityRun) -> Result<Vec<Box<dyn RecordHasher + Send>>> {
    let l = &run.lsh;
    let omega = run.spec.record_count;
    let cfg = LshConfig::new(l.k, l.b, l.epsilon, omega).with_seed(run.seed).with_curve(l.curve);
    Ok(vec![
        Box::new(TunableLsh::new(cfg.clone())?),
        Box::new(TunableLsh::unoptimized(cfg)?),
        Box::new(BitSamplingHasher::new(l.k, 2 * l.b, l.epsilon, omega, run.seed)?),
        Box::new(StaticHasher::new(l.epsilon, omega, run.seed)?),
    ])
}

/// Replays a trace through every hasher and tallies `Pr(δ* ≤ θ | δ ≤ x)`.
///
/// After each query past the warm-up, pairs are drawn uniformly from the
/// records touched within the last `k` queries. `δ` is their window Hamming
/// distance over `k` and `δ*` their page distance over `ε − 1`.
pub fn sensitivity_run(run: &SensitivityRun, trace: &Trace) -> Result<[AccuracyTally; 4]> {
    let k = run.lsh.k;
    let omega = run.spec.record_count;
    let mut hashers = build_hashers(run)?;
    let mut window = UtilizationWindow::new(k, omega)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0xa076_1d64_78bd_642f);
    let mut recent: VecDeque<usize> = VecDeque::with_capacity(k);
    let mut stamp = vec![usize::MAX; omega];
    let mut active = Vec::new();
    let mut tallies = [AccuracyTally::default(); 4];
    let max_hamming = (run.x * k as f64 + 1e-9).floor() as u32;
    let span = run.lsh.epsilon.saturating_sub(1) as f64;

    for (i, q) in trace.queries.iter().enumerate() {
        for h in hashers.iter_mut() {
            h.observe(q)?;
        }
        window.record(q)?;
        if recent.len() == k {
            recent.pop_front();
        }
        recent.push_back(i);
        if i + 1 < run.warmup.max(k) {
            continue;
        }
        active.clear();
        for &j in &recent {
            for &p in trace.queries[j].positions() {
                if stamp[p] != i {
                    stamp[p] = i;
                    active.push(p);
                }
            }
        }
        if active.len() < 2 {
            continue;
        }
        for _ in 0..run.pairs_per_query {
            let ia = rng.random_range(0..active.len());
            let mut ib = rng.random_range(0..active.len() - 1);
            if ib >= ia {
                ib += 1;
            }
            let (a, b) = (active[ia], active[ib]);
            if window.hamming(a, b) > max_hamming {
                continue;
            }
            for (tally, h) in tallies.iter_mut().zip(&hashers) {
                tally.conditioned += 1;
                let d = h.hash(a)?.page.abs_diff(h.hash(b)?.page) as f64;
                if d <= run.theta * span {
                    tally.hits += 1;
                }
            }
        }
    }
    Ok(tallies)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    pub value: f64,
    pub hasher: HasherKind,
    /// Mean over repetitions that saw at least one conditioning pair.
    pub probability: f64,
    pub theta: f64,
    pub x: f64,
    pub conditioned_pairs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyCurve {
    pub parameter: SweepParam,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyCurve {
    pub fn probability(&self, value: f64, hasher: HasherKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.hasher == hasher)
            .map(|r| r.probability)
    }
}

pub fn run_lsh_sensitivity(cfg: &ExperimentConfig) -> Result<AccuracyCurve> {
    cfg.validate()?;
    let results: Vec<[AccuracyTally; 4]> = jobs(cfg)
        .into_par_iter()
        .map(|(v, rep)| {
            let (mut spec, lsh) = cfg.at(cfg.values[v]);
            spec.seed = rep_seed(spec.seed, rep);
            let trace = generate(&spec)?;
            let run = SensitivityRun {
                seed: spec.seed,
                spec,
                lsh,
                theta: cfg.theta,
                x: cfg.x,
                pairs_per_query: cfg.pairs_per_query,
                warmup: cfg.warmup,
            };
            sensitivity_run(&run, &trace)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (v, &value) in cfg.values.iter().enumerate() {
        let reps = &results[v * cfg.repetitions..(v + 1) * cfg.repetitions];
        for (i, &hasher) in HasherKind::ALL.iter().enumerate() {
            let probs: Vec<f64> = reps.iter().filter_map(|r| r[i].probability()).collect();
            let probability = if probs.is_empty() { 0.0 } else { probs.iter().sum::<f64>() / probs.len() as f64 };
            rows.push(AccuracyRow {
                value,
                hasher,
                probability,
                theta: cfg.theta,
                x: cfg.x,
                conditioned_pairs: reps.iter().map(|r| r[i].conditioned).sum(),
            });
        }
    }
    Ok(AccuracyCurve { parameter: cfg.sweep, rows })
}

pub fn write_accuracy_csv<W: Write>(cfg: &ExperimentConfig, curve: &AccuracyCurve, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["experiment", "parameter", "value", "hasher", "theta", "x", "probability", "conditioned_pairs"])?;
    for row in &curve.rows {
        w.write_record([
            cfg.experiment.clone(),
            curve.parameter.to_string(),
            format_value(row.value),
            row.hasher.name().to_string(),
            format!("{}", row.theta),
            format!("{}", row.x),
            format!("{:.6}", row.probability),
            row.conditioned_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
