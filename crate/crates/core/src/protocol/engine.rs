use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rayon::prelude::*;

use super::client::{client_obtain_anchor, gradient_at, AnchorPick, ClientSession, ObtainedAnchor};
use super::server::{
    aggregate_and_step, apply_correction, correction_seed, deploy_anchor, encode_correction,
    serve_correction, ServerState,
};
use super::{client_construct_estimate, Compressors, ProtocolError};
use crate::codec::{decompress, identity_encode, CodecError, EncodedBlob};
use crate::rng::{rng_from, stream_seed, Stream};
use crate::scheduler::{Assignment, RoundSchedule};
use crate::tasks::Task;
use crate::telemetry::{rho_ratio, BandwidthLedger, Channel, MetricsRow};
use crate::{DenseVector, Round};

/// What the client receives in place of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Queued compressed anchors plus compressed corrections.
    DoCoFL,
    /// Full-precision weights.
    Baseline,
    /// The correction compressor applied to the weights directly.
    Naive,
    /// Exact past weights `w_{t - tau}` with `tau <= horizon` as the anchor,
    /// chosen by the anchor-pick policy.
    Meta { horizon: u64 },
}

/// When a client downloads its anchor within `[s, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FetchTime {
    #[default]
    Notification,
    Participation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub compressors: Compressors,
    pub learning_rate: f64,
    /// `K`: anchors are deployed every `K` rounds.
    pub anchor_rate: u64,
    /// `V`: queue capacity.
    pub queue_capacity: usize,
    pub anchor_pick: AnchorPick,
    pub fetch: FetchTime,
    /// Rounds an anchor download takes; `0` means instantaneous.
    pub download_rounds: u64,
    /// Fail when a download cannot complete in time; otherwise the client
    /// takes the newest anchor at its participation round.
    pub strict_anchor: bool,
    pub rho_enabled: bool,
    pub record_trajectory: bool,
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(mode: Mode, compressors: Compressors, learning_rate: f64, seed: u64) -> Self {
        Self {
            mode,
            compressors,
            learning_rate,
            anchor_rate: 10,
            queue_capacity: 3,
            anchor_pick: AnchorPick::Newest,
            fetch: FetchTime::Notification,
            download_rounds: 0,
            strict_anchor: false,
            rho_enabled: false,
            record_trajectory: false,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub rows: Vec<MetricsRow>,
    pub ledger: BandwidthLedger,
    pub final_weights: DenseVector,
    pub final_loss: f64,
    /// `w_0, ..., w_T` when recorded.
    pub trajectory: Vec<DenseVector>,
    /// Participations per anchor age.
    pub anchor_ages: BTreeMap<Round, u64>,
    /// Lenient-mode substitutions of an anchor that could not be downloaded in time.
    pub anchor_fallbacks: u64,
}

impl EngineOutput {
    pub fn max_anchor_age(&self) -> Option<Round> {
        self.anchor_ages.keys().next_back().copied()
    }
}

struct Participation {
    corr_blob: Option<EncodedBlob>,
    grad: EncodedBlob,
    corr_norm: f64,
    errors: Option<(f64, f64)>,
}

/// Runs every round of `schedule` on `task` from `w0`.
///
/// Within a round, clients are processed in parallel; each client's
/// randomness is keyed by `(seed, client, round)` and results are reduced
/// in schedule order, so output does not depend on thread count.
pub fn run_rounds(
    task: &Task,
    schedule: &RoundSchedule,
    w0: DenseVector,
    cfg: &EngineConfig,
    mut observer: Option<&mut dyn FnMut(Round, &DenseVector)>,
) -> Result<EngineOutput, ProtocolError> {
    if schedule.n() != task.num_clients() {
        return Err(ProtocolError::InvalidConfig(format!(
            "schedule has {} clients, task has {}",
            schedule.n(),
            task.num_clients()
        )));
    }
    if w0.len() != task.dim() {
        return Err(ProtocolError::InvalidConfig(format!(
            "initial weights have dimension {}, task has {}",
            w0.len(),
            task.dim()
        )));
    }
    if cfg.queue_capacity == 0 || cfg.anchor_rate == 0 {
        return Err(ProtocolError::InvalidConfig(
            "K and V must be positive".into(),
        ));
    }
    let dim = task.dim();
    let rounds = schedule.len();
    let s = schedule.s();
    let mut server = ServerState::new(
        w0,
        cfg.learning_rate,
        cfg.anchor_rate,
        cfg.queue_capacity,
        cfg.compressors,
        cfg.seed,
    )?;
    let mut ledger = BandwidthLedger::new(dim);
    let mut rows = Vec::with_capacity(rounds);
    let mut trajectory = Vec::new();
    let mut anchor_ages = BTreeMap::new();
    let mut fallbacks = 0u64;
    let mut cum = [0u64; 3];

    // Notification index: round s -> sessions announced at s.
    let mut by_notify: Vec<Vec<(Round, Assignment)>> = vec![Vec::new(); rounds];
    for (t, set) in schedule.rounds().iter().enumerate() {
        for a in set {
            by_notify[a.notify_round as usize].push((t as Round, *a));
        }
    }
    let mut pending: HashMap<(usize, Round), ClientSession> = HashMap::new();
    let horizon = match cfg.mode {
        Mode::Meta { horizon } => horizon,
        _ => 0,
    };
    let mut history: VecDeque<DenseVector> = VecDeque::new();

    for t in 0..rounds as Round {
        let mut bits = [0u64; 3];
        if cfg.record_trajectory {
            trajectory.push(server.weights().clone());
        }
        if let Some(obs) = observer.as_mut() {
            obs(t, server.weights());
        }
        let w_t = server.weights().clone();
        let docofl = cfg.mode == Mode::DoCoFL;
        if docofl && server.is_deployment_round() {
            deploy_anchor(&mut server)?;
        }
        if let Mode::Meta { .. } = cfg.mode {
            history.push_back(w_t.clone());
            if history.len() as u64 > horizon + 1 {
                history.pop_front();
            }
        }

        for &(pt, a) in &by_notify[t as usize] {
            let mut session = ClientSession::new(a.client, a.notify_round, pt)?;
            if docofl && cfg.fetch == FetchTime::Notification {
                let entry = client_obtain_anchor(
                    &mut session,
                    server.queue(),
                    t,
                    cfg.anchor_pick,
                    cfg.seed,
                )?;
                ledger.record_client_transfer(a.client, Channel::Anchor, &entry.blob);
                bits[0] += entry.blob.bit_length;
            }
            pending.insert((a.client, pt), session);
        }

        let mut sessions = Vec::with_capacity(s);
        for a in schedule.round(t) {
            let mut session = pending
                .remove(&(a.client, t))
                .ok_or(ProtocolError::MissingState("session"))?;
            match cfg.mode {
                Mode::DoCoFL => {
                    if cfg.fetch == FetchTime::Participation {
                        let entry = client_obtain_anchor(
                            &mut session,
                            server.queue(),
                            t,
                            cfg.anchor_pick,
                            cfg.seed,
                        )?;
                        ledger.record_client_transfer(a.client, Channel::Anchor, &entry.blob);
                        bits[0] += entry.blob.bit_length;
                    }
                    let anchor = session.anchor().expect("fetched above");
                    let done = anchor.fetched_at + cfg.download_rounds;
                    let evicted_at = anchor.stamp + cfg.anchor_rate * cfg.queue_capacity as u64;
                    if done > t || done > evicted_at {
                        if cfg.strict_anchor {
                            return Err(ProtocolError::AnchorUnavailable {
                                client: a.client,
                                round: t,
                            });
                        }
                        // Arrives at the participation round, so it is online traffic.
                        let entry = client_obtain_anchor(
                            &mut session,
                            server.queue(),
                            t,
                            AnchorPick::Newest,
                            cfg.seed,
                        )?;
                        ledger.record_client_transfer(a.client, Channel::Correction, &entry.blob);
                        bits[1] += entry.blob.bit_length;
                        fallbacks += 1;
                    }
                }
                Mode::Meta { .. } => {
                    let avail = history.len() as u64 - 1;
                    let tau = match cfg.anchor_pick {
                        AnchorPick::Newest => 0,
                        AnchorPick::Oldest => avail,
                        AnchorPick::Uniform => {
                            let mut rng = rng_from(stream_seed(
                                cfg.seed,
                                Stream::AnchorPick,
                                a.client as u64,
                                t,
                            ));
                            rng.random_range(0..=avail)
                        }
                    };
                    let y = history[(avail - tau) as usize].clone();
                    let blob = identity_encode(&y);
                    ledger.record_client_transfer(a.client, Channel::Anchor, &blob);
                    bits[0] += blob.bit_length;
                    session.set_anchor(ObtainedAnchor {
                        stamp: t - tau,
                        fetched_at: t,
                        decoded: y.clone(),
                        exact: y,
                    });
                }
                Mode::Baseline | Mode::Naive => {}
            }
            if let Some(age) = session.anchor_age() {
                *anchor_ages.entry(age).or_insert(0) += 1;
            }
            ledger.record_participation();
            sessions.push(session);
        }

        let results: Vec<Participation> = sessions
            .par_iter_mut()
            .map(|session| participate(session, &server, task, cfg, &w_t))
            .collect::<Result<_, ProtocolError>>()
            .map_err(|e| match e {
                // Finite weights whose correction or gradient overflows f32.
                ProtocolError::Codec(CodecError::NonFinite { .. }) => {
                    ProtocolError::NumericBlowup {
                        round: t,
                        last_good: t,
                    }
                }
                e => e,
            })?;

        let mut grads = Vec::with_capacity(s);
        let mut corr_norm = 0.0;
        let mut errors = Vec::with_capacity(s);
        for (session, r) in sessions.iter().zip(results) {
            if let Some(blob) = &r.corr_blob {
                ledger.record_client_transfer(session.client, Channel::Correction, blob);
                bits[1] += blob.bit_length;
            }
            ledger.record_client_transfer(session.client, Channel::Uplink, &r.grad);
            bits[2] += r.grad.bit_length;
            corr_norm += r.corr_norm;
            if let Some(e) = r.errors {
                errors.push(e);
            }
            grads.push(r.grad);
        }

        let wf = w_t.to_f64();
        let train_loss = task.loss(&wf)?;
        let g = task.grad(&wf)?;
        for c in 0..3 {
            cum[c] += bits[c];
        }
        rows.push(MetricsRow {
            round: t,
            train_loss,
            grad_sq_norm: g.iter().map(|v| v * v).sum(),
            mean_corr_norm: corr_norm / s as f64,
            rho: if cfg.rho_enabled {
                rho_ratio(&errors)
            } else {
                None
            },
            anchor_bits: bits[0],
            corr_bits: bits[1],
            uplink_bits: bits[2],
            cum_anchor_bits: cum[0],
            cum_corr_bits: cum[1],
            cum_uplink_bits: cum[2],
        });

        aggregate_and_step(&mut server, &grads, s)?;
    }

    let final_weights = server.weights().clone();
    if cfg.record_trajectory {
        trajectory.push(final_weights.clone());
    }
    let final_loss = task.loss(&final_weights.to_f64())?;
    Ok(EngineOutput {
        rows,
        ledger,
        final_weights,
        final_loss,
        trajectory,
        anchor_ages,
        anchor_fallbacks: fallbacks,
    })
}

fn participate(
    session: &mut ClientSession,
    server: &ServerState,
    task: &Task,
    cfg: &EngineConfig,
    w_t: &DenseVector,
) -> Result<Participation, ProtocolError> {
    let (client, t) = (session.client, session.participate_round);
    let (estimate, corr_blob, corr_norm, errors) = match cfg.mode {
        Mode::Baseline => (w_t.clone(), Some(identity_encode(w_t)), 0.0, None),
        Mode::Naive => {
            let seed = correction_seed(cfg.seed, session);
            let blob = cfg.compressors.correction.compress(w_t, seed)?;
            (decompress(&blob)?, Some(blob), 0.0, None)
        }
        Mode::DoCoFL | Mode::Meta { .. } => {
            let packet = serve_correction(server, session)?;
            let estimate = client_construct_estimate(session, &packet)?;
            let anchor = session
                .anchor()
                .expect("anchor obtained before participation");
            let corr_norm = w_t.dist_sq(&anchor.decoded).sqrt();
            let errors = if cfg.rho_enabled {
                let with = w_t.dist_sq(&estimate);
                let without = if anchor.exact == anchor.decoded {
                    with
                } else {
                    let blob = encode_correction(
                        &cfg.compressors.correction,
                        w_t,
                        &anchor.exact,
                        correction_seed(cfg.seed, session),
                    )?;
                    w_t.dist_sq(&apply_correction(&anchor.exact, &blob)?)
                };
                Some((with, without))
            } else {
                None
            };
            (estimate, Some(packet.blob), corr_norm, errors)
        }
    };
    let grad = gradient_at(
        &estimate,
        client,
        t,
        task,
        &cfg.compressors.uplink,
        cfg.seed,
    )?;
    Ok(Participation {
        corr_blob,
        grad,
        corr_norm,
        errors,
    })
}

/// Runs the bounded-staleness generalization: each participant's anchor is
/// the exact iterate from `tau <= horizon` rounds earlier, with `tau` chosen
/// by `cfg.anchor_pick` (newest: 0; oldest: `min(t, horizon)`; uniform).
pub fn run_meta_algorithm(
    task: &Task,
    schedule: &RoundSchedule,
    w0: DenseVector,
    cfg: &EngineConfig,
    horizon: u64,
) -> Result<EngineOutput, ProtocolError> {
    let cfg = EngineConfig {
        mode: Mode::Meta { horizon },
        ..cfg.clone()
    };
    run_rounds(task, schedule, w0, &cfg, None)
}
