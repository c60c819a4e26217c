//! Parameter-server and client state machines.
//!
//! The server deploys a compressed snapshot of its weights (an anchor) into
//! a bounded queue every `K` rounds. A client notified at round `s` for
//! participation at round `t` downloads an anchor from the queue within
//! `[s, t]`; at `t` it receives only the compressed difference between the
//! live weights and its decoded anchor, reconstructs an estimate, and
//! uploads a compressed gradient at that estimate.
//!
//! Because the correction is taken against the *decoded* anchor, the
//! estimate is unbiased whenever the correction compressor is, regardless
//! of how the anchor was compressed.

mod client;
mod engine;
mod naive;
mod queue;
mod server;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use client::{
    client_compute_gradient, client_construct_estimate, client_obtain_anchor, AnchorPick,
    ClientSession, ObtainedAnchor,
};
pub use engine::{run_meta_algorithm, run_rounds, EngineConfig, EngineOutput, FetchTime, Mode};
pub use naive::{
    mean_iterate, naive_fixed_point, run_naive_weight_compression, two_point_residual,
    NaiveTrajectory,
};
pub use queue::{AnchorEntry, AnchorQueue};
pub use server::{
    aggregate_and_step, deploy_anchor, serve_correction, CorrectionPacket, ServerState,
};

use crate::codec::{CodecError, CompressorSpec};
use crate::tasks::TaskError;
use crate::{ClientId, Round};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("anchor deployment at round {round} is off the every-{anchor_rate} schedule")]
    OffSchedule { round: Round, anchor_rate: u64 },
    #[error("anchor queue is empty")]
    EmptyQueue,
    #[error("anchor stamp {offered} does not follow newest stamp {newest}")]
    StampOrder { newest: Round, offered: Round },
    #[error("round {round} is outside client window [{notify}, {participate}]")]
    OutsideWindow {
        round: Round,
        notify: Round,
        participate: Round,
    },
    #[error("client {client} could not complete its anchor download by round {round}")]
    AnchorUnavailable { client: ClientId, round: Round },
    #[error("client session has no {0} yet")]
    MissingState(&'static str),
    #[error("expected {expected} gradients, got {actual}")]
    WrongGradientCount { expected: usize, actual: usize },
    #[error("non-finite weights after round {round}; last good round {last_good}")]
    NumericBlowup { round: Round, last_good: Round },
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Anchor, correction and uplink compressors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compressors {
    pub anchor: CompressorSpec,
    pub correction: CompressorSpec,
    pub uplink: CompressorSpec,
}

impl Compressors {
    pub fn identity() -> Self {
        Self {
            anchor: CompressorSpec::Identity,
            correction: CompressorSpec::Identity,
            uplink: CompressorSpec::Identity,
        }
    }
}

impl fmt::Display for AnchorPick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorPick::Newest => "newest",
            AnchorPick::Oldest => "oldest",
            AnchorPick::Uniform => "uniform",
        })
    }
}

impl FromStr for AnchorPick {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "newest" => Ok(AnchorPick::Newest),
            "oldest" => Ok(AnchorPick::Oldest),
            "uniform" => Ok(AnchorPick::Uniform),
            other => Err(ProtocolError::InvalidConfig(format!(
                "anchor pick `{other}`"
            ))),
        }
    }
}
