use rand::Rng;

use super::queue::{AnchorEntry, AnchorQueue};
use super::server::{apply_correction, CorrectionPacket};
use super::ProtocolError;
use crate::codec::{CompressorSpec, EncodedBlob};
use crate::rng::{rng_from, stream_seed, Stream};
use crate::tasks::Task;
use crate::{ClientId, DenseVector, Round};

/// Which queue entry a client downloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorPick {
    /// The newest entry, as in the base protocol.
    #[default]
    Newest,
    /// The oldest entry still queued (staleness stress test).
    Oldest,
    /// A uniformly random queued entry.
    Uniform,
}

/// An anchor held by a client.
#[derive(Debug, Clone, PartialEq)]
pub struct ObtainedAnchor {
    pub stamp: Round,
    pub fetched_at: Round,
    pub decoded: DenseVector,
    /// Server-side copy of the uncompressed weights at `stamp`, used only
    /// for diagnostics.
    pub exact: DenseVector,
}

/// One client's participation: notified at `notify_round`, participating
/// at `participate_round`. Clients keep no state across sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSession {
    pub client: ClientId,
    pub notify_round: Round,
    pub participate_round: Round,
    anchor: Option<ObtainedAnchor>,
    estimate: Option<DenseVector>,
}

impl ClientSession {
    pub fn new(
        client: ClientId,
        notify_round: Round,
        participate_round: Round,
    ) -> Result<Self, ProtocolError> {
        if notify_round > participate_round {
            return Err(ProtocolError::OutsideWindow {
                round: notify_round,
                notify: notify_round,
                participate: participate_round,
            });
        }
        Ok(Self {
            client,
            notify_round,
            participate_round,
            anchor: None,
            estimate: None,
        })
    }

    pub fn anchor(&self) -> Option<&ObtainedAnchor> {
        self.anchor.as_ref()
    }

    pub fn estimate(&self) -> Option<&DenseVector> {
        self.estimate.as_ref()
    }

    /// `participate_round - stamp` once an anchor is held.
    pub fn anchor_age(&self) -> Option<Round> {
        self.anchor
            .as_ref()
            .map(|a| self.participate_round - a.stamp)
    }

    pub(crate) fn set_anchor(&mut self, anchor: ObtainedAnchor) {
        self.anchor = Some(anchor);
    }

    pub(crate) fn set_estimate(&mut self, estimate: DenseVector) {
        self.estimate = Some(estimate);
    }
}

/// Downloads an anchor from `queue` at round `now`, which must lie in the
/// session's window. Returns the entry used.
pub fn client_obtain_anchor<'q>(
    session: &mut ClientSession,
    queue: &'q AnchorQueue,
    now: Round,
    pick: AnchorPick,
    seed: u64,
) -> Result<&'q AnchorEntry, ProtocolError> {
    if now < session.notify_round || now > session.participate_round {
        return Err(ProtocolError::OutsideWindow {
            round: now,
            notify: session.notify_round,
            participate: session.participate_round,
        });
    }
    let entry = match pick {
        AnchorPick::Newest => queue.top(),
        AnchorPick::Oldest => queue.oldest(),
        AnchorPick::Uniform => {
            if queue.is_empty() {
                None
            } else {
                let mut rng = rng_from(stream_seed(
                    seed,
                    Stream::AnchorPick,
                    session.client as u64,
                    session.participate_round,
                ));
                queue.get(rng.random_range(0..queue.len()))
            }
        }
    }
    .ok_or(ProtocolError::EmptyQueue)?;
    session.set_anchor(ObtainedAnchor {
        stamp: entry.stamp,
        fetched_at: now,
        decoded: entry.decoded.clone(),
        exact: entry.exact.clone(),
    });
    Ok(entry)
}

/// `w_hat = y_hat + decode(correction)`; stored on the session and returned.
pub fn client_construct_estimate(
    session: &mut ClientSession,
    packet: &CorrectionPacket,
) -> Result<DenseVector, ProtocolError> {
    let anchor = session
        .anchor()
        .ok_or(ProtocolError::MissingState("anchor"))?;
    let estimate = apply_correction(&anchor.decoded, &packet.blob)?;
    session.set_estimate(estimate.clone());
    Ok(estimate)
}

/// Stochastic local gradient at the session's estimate, compressed for
/// upload. Randomness is keyed by `(seed, client, participation round)`.
pub fn client_compute_gradient(
    session: &ClientSession,
    task: &Task,
    uplink: &CompressorSpec,
    seed: u64,
) -> Result<EncodedBlob, ProtocolError> {
    let w = session
        .estimate()
        .ok_or(ProtocolError::MissingState("estimate"))?;
    gradient_at(
        w,
        session.client,
        session.participate_round,
        task,
        uplink,
        seed,
    )
}

pub(crate) fn gradient_at(
    w: &DenseVector,
    client: ClientId,
    round: Round,
    task: &Task,
    uplink: &CompressorSpec,
    seed: u64,
) -> Result<EncodedBlob, ProtocolError> {
    let mut rng = rng_from(stream_seed(seed, Stream::Gradient, client as u64, round));
    let g = task.stochastic_grad(client, &w.to_f64(), &mut rng)?;
    let g = DenseVector::from_f64(&g)?;
    Ok(uplink.compress(&g, stream_seed(seed, Stream::Uplink, client as u64, round))?)
}
