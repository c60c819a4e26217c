use super::client::ClientSession;
use super::queue::{AnchorEntry, AnchorQueue};
use super::{Compressors, ProtocolError};
use crate::codec::{
    decompress, xor_delta_apply, xor_delta_encode, CompressorSpec, EncodedBlob, SchemeId,
};
use crate::rng::{stream_seed, Stream};
use crate::{DenseVector, Round};

/// Server weights, round counter and anchor queue.
#[derive(Debug, Clone)]
pub struct ServerState {
    weights: DenseVector,
    round: Round,
    learning_rate: f64,
    anchor_rate: u64,
    queue: AnchorQueue,
    compressors: Compressors,
    seed: u64,
}

impl ServerState {
    pub fn new(
        weights: DenseVector,
        learning_rate: f64,
        anchor_rate: u64,
        queue_capacity: usize,
        compressors: Compressors,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(ProtocolError::InvalidConfig(format!(
                "learning rate {learning_rate}"
            )));
        }
        if anchor_rate == 0 {
            return Err(ProtocolError::InvalidConfig(
                "anchor rate K must be positive".into(),
            ));
        }
        Ok(Self {
            weights,
            round: 0,
            learning_rate,
            anchor_rate,
            queue: AnchorQueue::new(queue_capacity)?,
            compressors,
            seed,
        })
    }

    pub fn weights(&self) -> &DenseVector {
        &self.weights
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn anchor_rate(&self) -> u64 {
        self.anchor_rate
    }

    pub fn queue(&self) -> &AnchorQueue {
        &self.queue
    }

    pub fn compressors(&self) -> &Compressors {
        &self.compressors
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_deployment_round(&self) -> bool {
        self.round.is_multiple_of(self.anchor_rate)
    }
}

/// Compresses the current weights into the queue. Returns the evicted entry.
pub fn deploy_anchor(server: &mut ServerState) -> Result<Option<AnchorEntry>, ProtocolError> {
    if !server.is_deployment_round() {
        return Err(ProtocolError::OffSchedule {
            round: server.round,
            anchor_rate: server.anchor_rate,
        });
    }
    let seed = stream_seed(server.seed, Stream::Anchor, 0, server.round);
    let blob = server.compressors.anchor.compress(&server.weights, seed)?;
    let decoded = decompress(&blob)?;
    server.queue.enqueue(AnchorEntry {
        stamp: server.round,
        blob,
        decoded,
        exact: server.weights.clone(),
    })
}

/// Encodes `target - base`. The identity compressor ships a bitwise delta so
/// that applying it reproduces `target` exactly.
pub(crate) fn encode_correction(
    spec: &CompressorSpec,
    target: &DenseVector,
    base: &DenseVector,
    seed: u64,
) -> Result<EncodedBlob, ProtocolError> {
    target.check_dim(base)?;
    if *spec == CompressorSpec::Identity {
        return Ok(xor_delta_encode(target, base)?);
    }
    let diff: Vec<f64> = target
        .iter()
        .zip(base.iter())
        .map(|(&t, &b)| t as f64 - b as f64)
        .collect();
    Ok(spec.compress(&DenseVector::from_f64(&diff)?, seed)?)
}

/// `base + decode(blob)`.
pub(crate) fn apply_correction(
    base: &DenseVector,
    blob: &EncodedBlob,
) -> Result<DenseVector, ProtocolError> {
    if blob.scheme == SchemeId::XorDelta {
        return Ok(xor_delta_apply(base, blob)?);
    }
    let delta = decompress(blob)?;
    base.check_dim(&delta)?;
    let sum: Vec<f64> = base
        .iter()
        .zip(delta.iter())
        .map(|(&b, &d)| b as f64 + d as f64)
        .collect();
    Ok(DenseVector::from_f64(&sum)?)
}

/// Compressed correction for one client at the server's current round.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPacket {
    pub blob: EncodedBlob,
    pub bits: u64,
}

pub(crate) fn correction_seed(server_seed: u64, session: &ClientSession) -> u64 {
    stream_seed(
        server_seed,
        Stream::Correction,
        session.client as u64,
        session.participate_round,
    )
}

/// Compresses `w_t - y_hat` against the client's decoded anchor.
pub fn serve_correction(
    server: &ServerState,
    session: &ClientSession,
) -> Result<CorrectionPacket, ProtocolError> {
    let anchor = session
        .anchor()
        .ok_or(ProtocolError::MissingState("anchor"))?;
    let blob = encode_correction(
        &server.compressors.correction,
        &server.weights,
        &anchor.decoded,
        correction_seed(server.seed, session),
    )?;
    Ok(CorrectionPacket {
        bits: blob.bit_length,
        blob,
    })
}

/// Averages the decoded gradients and takes one step, then advances the
/// round. Fails without modifying the state if the step is non-finite.
pub fn aggregate_and_step(
    server: &mut ServerState,
    gradients: &[EncodedBlob],
    expected: usize,
) -> Result<(), ProtocolError> {
    if gradients.len() != expected || expected == 0 {
        return Err(ProtocolError::WrongGradientCount {
            expected,
            actual: gradients.len(),
        });
    }
    let d = server.weights.len();
    let mut mean = vec![0.0f64; d];
    for blob in gradients {
        let g = decompress(blob)?;
        server.weights.check_dim(&g)?;
        mean.iter_mut()
            .zip(g.iter())
            .for_each(|(m, &v)| *m += v as f64);
    }
    let scale = server.learning_rate / expected as f64;
    let next: Vec<f32> = server
        .weights
        .iter()
        .zip(&mean)
        .map(|(&w, &g)| (w as f64 - scale * g) as f32)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(ProtocolError::NumericBlowup {
            round: server.round,
            last_good: server.round,
        });
    }
    server.weights = DenseVector::new(next)?;
    server.round += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::identity_encode;

    fn server(w: Vec<f32>, k: u64, v: usize) -> ServerState {
        ServerState::new(
            DenseVector::new(w).unwrap(),
            0.5,
            k,
            v,
            Compressors::identity(),
            1,
        )
        .unwrap()
    }

    fn step_to(s: &mut ServerState, round: Round) {
        while s.round < round {
            let d = s.weights.len();
            aggregate_and_step(s, &[identity_encode(&DenseVector::zeros(d))], 1).unwrap();
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut s = server(vec![1.0], 10, 3);
        for t in [0, 10, 20, 30] {
            step_to(&mut s, t);
            deploy_anchor(&mut s).unwrap();
        }
        assert_eq!(s.queue().stamps(), vec![10, 20, 30]);
    }

    #[test]
    fn single_slot_queue_holds_latest() {
        let mut s = server(vec![1.0], 2, 1);
        for t in [0, 2, 4] {
            step_to(&mut s, t);
            deploy_anchor(&mut s).unwrap();
            assert_eq!(s.queue().stamps(), vec![t]);
        }
    }

    #[test]
    fn off_schedule_deploy_fails() {
        let mut s = server(vec![1.0], 10, 3);
        step_to(&mut s, 3);
        assert!(matches!(
            deploy_anchor(&mut s),
            Err(ProtocolError::OffSchedule { .. })
        ));
    }

    #[test]
    fn identity_anchor_is_exact() {
        let mut s = server(vec![0.1, -3.5, 7.25], 1, 2);
        deploy_anchor(&mut s).unwrap();
        assert_eq!(&s.queue().top().unwrap().decoded, s.weights());
    }

    #[test]
    fn step_examples() {
        // f(w) = w^2 / 2, exact gradient, eta = 0.5.
        let mut s = server(vec![1.0], 1, 1);
        let g = identity_encode(&DenseVector::new(vec![1.0]).unwrap());
        aggregate_and_step(&mut s, std::slice::from_ref(&g), 1).unwrap();
        assert_eq!(s.weights().as_slice(), &[0.5]);
        let neg = identity_encode(&DenseVector::new(vec![-1.0]).unwrap());
        aggregate_and_step(&mut s, &[g.clone(), neg], 2).unwrap();
        assert_eq!(s.weights().as_slice(), &[0.5]);
        assert!(aggregate_and_step(&mut s, std::slice::from_ref(&g), 2).is_err());

        let mut frozen = ServerState::new(
            DenseVector::new(vec![2.0]).unwrap(),
            0.0,
            1,
            1,
            Compressors::identity(),
            0,
        )
        .unwrap();
        aggregate_and_step(&mut frozen, &[g], 1).unwrap();
        assert_eq!(frozen.weights().as_slice(), &[2.0]);
    }

    #[test]
    fn blowup_is_reported() {
        let mut s = ServerState::new(
            DenseVector::new(vec![3e38]).unwrap(),
            1.0,
            1,
            1,
            Compressors::identity(),
            0,
        )
        .unwrap();
        let g = identity_encode(&DenseVector::new(vec![-3e38]).unwrap());
        assert!(matches!(
            aggregate_and_step(&mut s, &[g], 1),
            Err(ProtocolError::NumericBlowup { .. })
        ));
        assert_eq!(s.round(), 0);
    }
}
