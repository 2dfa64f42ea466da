//! Workload-adaptive locality-sensitive hashing of records by query co-access,
//! with a self-clustering paged store and a synthetic workload generator.

pub mod error;
pub mod lsh;
pub mod mds;
pub mod minhash;
pub mod model;
pub mod store;
pub mod workload;

pub use error::{Error, Result};
pub use lsh::{
    BitSamplingHasher, CounterBank, Curve, HashValue, LshConfig, RecordHasher, StaticHasher, TunableLsh,
    TuneOutcome, UtilizationWindow,
};
pub use mds::{GroupMapper, MdsConfig, MdsTuner, RoundRobin};
pub use minhash::MinHashSignature;
pub use model::{BitVector, CounterVector, Probability, QueryAccess};
pub use store::{Location, PagedStore, QueryMetrics, StoreConfig};
pub use workload::{generate, read_trace, write_trace, AccessMode, Trace, WorkloadSpec};
