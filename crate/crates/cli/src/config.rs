//! Experiment configuration from `key=value` files and command-line overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tlsh_core::lsh::Curve;
use tlsh_core::workload::{AccessMode, WorkloadSpec};

use crate::error::{CliError, Result};

/// Parameter varied by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    RecordsPerQuery,
    RecordCount,
    RecordSize,
    Uniqueness,
    K,
    B,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::RecordsPerQuery => "records_per_query",
            SweepParam::RecordCount => "record_count",
            SweepParam::RecordSize => "record_size",
            SweepParam::Uniqueness => "uniqueness_100",
            SweepParam::K => "k",
            SweepParam::B => "b",
        }
    }
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "records_per_query" => SweepParam::RecordsPerQuery,
            "record_count" => SweepParam::RecordCount,
            "record_size" => SweepParam::RecordSize,
            "uniqueness_100" => SweepParam::Uniqueness,
            "k" => SweepParam::K,
            "b" => SweepParam::B,
            other => return Err(CliError::Config(format!("cannot sweep '{other}'"))),
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hasher parameters shared by every run of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct LshParams {
    pub k: usize,
    pub b: usize,
    /// Hash range for the sensitivity experiment; stores derive theirs from the page count.
    pub epsilon: u64,
    pub curve: Curve,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams { k: 60, b: 4, epsilon: 1 << 16, curve: Curve::Morton }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub workload: WorkloadSpec,
    pub lsh: LshParams,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
    /// Normalised hash-distance threshold.
    pub theta: f64,
    /// Normalised utilization-distance threshold.
    pub x: f64,
    pub pairs_per_query: usize,
    /// Target fraction of occupied slots when sizing a store.
    pub fill: f64,
    /// Queries excluded from averages at the start of each run.
    pub warmup: usize,
    pub with_timings: bool,
}

impl ExperimentConfig {
    pub fn store_defaults() -> Self {
        ExperimentConfig {
            experiment: "store".into(),
            sweep: SweepParam::Uniqueness,
            values: vec![1.0, 10.0, 25.0, 50.0, 100.0],
            workload: WorkloadSpec::default(),
            lsh: LshParams { k: 32, b: 4, ..LshParams::default() },
            repetitions: 20,
            output: None,
            theta: 0.2,
            x: 0.1,
            pairs_per_query: 200,
            fill: 0.8,
            warmup: 0,
            with_timings: false,
        }
    }

    pub fn lsh_defaults() -> Self {
        ExperimentConfig {
            experiment: "lsh".into(),
            workload: WorkloadSpec {
                num_queries: 600,
                record_count: 4000,
                records_per_query: 200,
                ..WorkloadSpec::default()
            },
            lsh: LshParams::default(),
            ..ExperimentConfig::store_defaults()
        }
    }

    /// Applies `key=value` settings in order; later keys win.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CliError::Config(format!("bad value '{value}' for {key}")))
        }
        let w = &mut self.workload;
        match key {
            "experiment" => self.experiment = value.to_string(),
            "sweep" => self.sweep = value.parse()?,
            "values" => {
                self.values = value
                    .split(',')
                    .filter(|v| !v.trim().is_empty())
                    .map(|v| num::<f64>(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "num_queries" => w.num_queries = num(key, value)?,
            "record_count" => w.record_count = num(key, value)?,
            "record_size" => w.record_size = num(key, value)?,
            "records_per_query" => w.records_per_query = num(key, value)?,
            "uniqueness_100" => w.uniqueness_100 = num(key, value)?,
            "access_mode" => w.access_mode = value.parse::<AccessMode>()?,
            "seed" => w.seed = num(key, value)?,
            "jitter" => w.jitter = num(key, value)?,
            "k" => self.lsh.k = num(key, value)?,
            "b" => self.lsh.b = num(key, value)?,
            "epsilon" => self.lsh.epsilon = num(key, value)?,
            "curve" => self.lsh.curve = value.parse()?,
            "repetitions" => self.repetitions = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "theta" => self.theta = num(key, value)?,
            "x" => self.x = num(key, value)?,
            "pairs_per_query" => self.pairs_per_query = num(key, value)?,
            "fill" => self.fill = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "with_timings" => self.with_timings = num(key, value)?,
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.values.is_empty() {
            return bad("sweep needs at least one value".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return bad(format!("fill {} outside (0, 1]", self.fill));
        }
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.x) {
            return bad("theta and x are normalised distances in [0, 1]".into());
        }
        for &v in &self.values {
            if v < 0.0 || !v.is_finite() {
                return bad(format!("sweep value {v} must be a non-negative number"));
            }
            if self.sweep != SweepParam::Uniqueness && v.fract() != 0.0 {
                return bad(format!("{} takes integer values, got {v}", self.sweep));
            }
        }
        Ok(())
    }

    /// Workload and hasher parameters with the swept value substituted.
    pub fn at(&self, value: f64) -> (WorkloadSpec, LshParams) {
        let mut w = self.workload.clone();
        let mut l = self.lsh.clone();
        let n = value as usize;
        match self.sweep {
            SweepParam::RecordsPerQuery => w.records_per_query = n,
            SweepParam::RecordCount => w.record_count = n,
            SweepParam::RecordSize => w.record_size = n,
            SweepParam::Uniqueness => w.uniqueness_100 = value,
            SweepParam::K => l.k = n,
            SweepParam::B => l.b = n,
        }
        (w, l)
    }
}

/// Parses a `key=value` file; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    parse_pairs(&fs::read_to_string(path)?)
}
