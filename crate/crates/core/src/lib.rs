//! Bi-directional compression for cross-device federated learning.
//!
//! The server periodically publishes compressed snapshots of the model
//! ("anchors") that clients prefetch ahead of their participation round,
//! and at participation time sends only a low-bit compressed difference
//! ("correction") between the live weights and the client's anchor.
//! Uplink gradients are compressed independently.
//!
//! Layout:
//!
//! * [`codec`]: vector compressors with exact bit accounting, including the
//!   entropy-constrained uniform quantizer used for anchors.
//! * [`protocol`]: server and client state machines, anchor queue, and the
//!   round engine (also the bounded-staleness meta-algorithm and the naive
//!   weight-compression baseline).
//! * [`scheduler`]: client participation processes.
//! * [`tasks`]: objectives and stochastic gradient oracles.
//! * [`telemetry`]: bandwidth ledger, per-round metrics, estimation-error ratio.
//! * [`harness`]: configuration, experiment runner, sweeps and benchmarks.

pub mod codec;
pub mod harness;
pub mod protocol;
pub mod rng;
pub mod scheduler;
pub mod tasks;
pub mod telemetry;
mod vector;

pub use codec::{CodecError, CompressorSpec, EncodedBlob, SchemeId};
pub use harness::{ExperimentConfig, HarnessError, RunResult};
pub use protocol::{AnchorQueue, ProtocolError, ServerState};
pub use scheduler::{Population, RoundSchedule, Tier};
pub use tasks::{Task, TaskError};
pub use telemetry::{BandwidthLedger, Channel, MetricsRow};
pub use vector::DenseVector;

/// Bits used to ship one uncompressed coordinate.
pub const FULL_PRECISION_BITS: u32 = 32;

/// Client identifier; an index into the population.
pub type ClientId = usize;

/// Training round index.
pub type Round = u64;
