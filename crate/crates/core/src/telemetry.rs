//! Bandwidth accounting, per-round metrics and run summaries.
//!
//! "Online" downlink bits are the corrections that must reach a client at
//! its participation round. Anchor bits can be prefetched and are counted
//! separately, one anchor per client session.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::codec::{CompressorSpec, EncodedBlob};
use crate::{ClientId, Round, FULL_PRECISION_BITS};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("no participations recorded")]
    Empty,
    #[error("metrics I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed metrics row: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    /// Prefetchable anchor download.
    Anchor,
    /// Correction download at participation time.
    Correction,
    Uplink,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Anchor, Channel::Correction, Channel::Uplink];

    fn index(self) -> usize {
        self as usize
    }
}

/// Cumulative payload and side-information bits per channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandwidthLedger {
    payload: [u64; 3],
    side_info: [u64; 3],
    transfers: [u64; 3],
    online_by_client: BTreeMap<ClientId, u64>,
    participations: u64,
    dim: usize,
}

impl BandwidthLedger {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `blob`'s payload bits (and, separately, its side-information bits).
    pub fn record_transfer(&mut self, channel: Channel, blob: &EncodedBlob) {
        let c = channel.index();
        self.payload[c] += blob.bit_length;
        self.side_info[c] += blob.side_info_bits();
        self.transfers[c] += 1;
    }

    /// As [`record_transfer`](Self::record_transfer), also attributing
    /// correction bits to `client`'s online total.
    pub fn record_client_transfer(
        &mut self,
        client: ClientId,
        channel: Channel,
        blob: &EncodedBlob,
    ) {
        self.record_transfer(channel, blob);
        if channel == Channel::Correction {
            *self.online_by_client.entry(client).or_default() += blob.bit_length;
        }
    }

    /// Counts one client participation against the uncompressed baseline.
    pub fn record_participation(&mut self) {
        self.participations += 1;
    }

    pub fn payload_bits(&self, channel: Channel) -> u64 {
        self.payload[channel.index()]
    }

    pub fn side_info_bits(&self, channel: Channel) -> u64 {
        self.side_info[channel.index()]
    }

    pub fn transfers(&self, channel: Channel) -> u64 {
        self.transfers[channel.index()]
    }

    pub fn participations(&self) -> u64 {
        self.participations
    }

    pub fn online_bits_of(&self, client: ClientId) -> u64 {
        self.online_by_client.get(&client).copied().unwrap_or(0)
    }

    /// Downlink bits of the uncompressed baseline: one full-precision model
    /// per participation.
    pub fn baseline_bits(&self) -> u64 {
        self.participations * self.dim as u64 * FULL_PRECISION_BITS as u64
    }

    pub fn total_payload_bits(&self) -> u64 {
        self.payload.iter().sum()
    }
}

/// Downlink reduction factors relative to full-precision models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    /// `32 / b_c` from the configured budgets, when both are nominal.
    pub nominal_online: Option<f64>,
    /// `32 / (b_w + b_c)`.
    pub nominal_total: Option<f64>,
    /// Baseline bits over recorded correction payload bits.
    pub online: f64,
    /// Baseline bits over recorded anchor plus correction payload bits.
    pub total: f64,
    pub online_with_side_info: f64,
    pub total_with_side_info: f64,
    pub participations: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::INFINITY
    } else {
        num as f64 / den as f64
    }
}

/// Reduction factors, nominal (from the compressors' per-coordinate budgets)
/// and measured (from the ledger). Payload bits only unless stated.
pub fn reduction_report(
    ledger: &BandwidthLedger,
    anchor: &CompressorSpec,
    correction: &CompressorSpec,
) -> Result<ReductionReport, TelemetryError> {
    if ledger.participations == 0 {
        return Err(TelemetryError::Empty);
    }
    let full = FULL_PRECISION_BITS as f64;
    let (nominal_online, nominal_total) = match (anchor.nominal_bits(), correction.nominal_bits()) {
        (Some(bw), Some(bc)) => (Some(full / bc), Some(full / (bw + bc))),
        _ => (None, None),
    };
    let base = ledger.baseline_bits();
    let corr = ledger.payload_bits(Channel::Correction);
    let anc = ledger.payload_bits(Channel::Anchor);
    let corr_side = corr + ledger.side_info_bits(Channel::Correction);
    let anc_side = anc + ledger.side_info_bits(Channel::Anchor);
    Ok(ReductionReport {
        nominal_online,
        nominal_total,
        online: ratio(base, corr),
        total: ratio(base, anc + corr),
        online_with_side_info: ratio(base, corr_side),
        total_with_side_info: ratio(base, anc_side + corr_side),
        participations: ledger.participations,
    })
}

/// `sum e_hat^2 / sum e^2` over participants, where each pair holds the
/// squared estimation error with the compressed anchor and with the exact
/// anchor. `None` when the denominator is zero.
pub fn rho_ratio(errors: &[(f64, f64)]) -> Option<f64> {
    let num: f64 = errors.iter().map(|e| e.0).sum();
    let den: f64 = errors.iter().map(|e| e.1).sum();
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// One round of telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: Round,
    pub train_loss: f64,
    pub grad_sq_norm: f64,
    /// Mean `||w_t - y||` over the round's participants.
    pub mean_corr_norm: f64,
    pub rho: Option<f64>,
    pub anchor_bits: u64,
    pub corr_bits: u64,
    pub uplink_bits: u64,
    pub cum_anchor_bits: u64,
    pub cum_corr_bits: u64,
    pub cum_uplink_bits: u64,
}

pub const METRICS_COLUMNS: [&str; 11] = [
    "round",
    "train_loss",
    "grad_sq_norm",
    "mean_corr_norm",
    "rho",
    "anchor_bits",
    "corr_bits",
    "uplink_bits",
    "cum_anchor_bits",
    "cum_corr_bits",
    "cum_uplink_bits",
];

/// Writes the header and one line per row; an undefined ratio is `nan`.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), TelemetryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.train_loss.to_string(),
            r.grad_sq_norm.to_string(),
            r.mean_corr_norm.to_string(),
            r.rho.map_or_else(|| "nan".to_string(), |v| v.to_string()),
            r.anchor_bits.to_string(),
            r.corr_bits.to_string(),
            r.uplink_bits.to_string(),
            r.cum_anchor_bits.to_string(),
            r.cum_corr_bits.to_string(),
            r.cum_uplink_bits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, TelemetryError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(TelemetryError::Malformed(format!("header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let bad = |i: usize| {
            TelemetryError::Malformed(format!("column {} in {:?}", METRICS_COLUMNS[i], rec))
        };
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(i));
        let u = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(i));
        let rho = f(4)?;
        rows.push(MetricsRow {
            round: u(0)?,
            train_loss: f(1)?,
            grad_sq_norm: f(2)?,
            mean_corr_norm: f(3)?,
            rho: if rho.is_nan() { None } else { Some(rho) },
            anchor_bits: u(5)?,
            corr_bits: u(6)?,
            uplink_bits: u(7)?,
            cum_anchor_bits: u(8)?,
            cum_corr_bits: u(9)?,
            cum_uplink_bits: u(10)?,
        });
    }
    Ok(rows)
}

/// Averages over a completed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSummary {
    pub rounds: usize,
    /// `(1/T) sum ||grad f(w_t)||^2`.
    pub avg_grad_sq_norm: f64,
    pub final_loss: f64,
    pub last_decile_loss: f64,
    pub last_decile_grad_sq_norm: f64,
    pub first_decile_corr_norm: f64,
    pub last_decile_corr_norm: f64,
    /// Mean of the defined ratios, if any.
    pub mean_rho: Option<f64>,
}

pub fn convergence_summary(rows: &[MetricsRow]) -> Result<ConvergenceSummary, TelemetryError> {
    if rows.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let n = rows.len();
    let decile = (n / 10).max(1);
    let mean = |it: &mut dyn Iterator<Item = f64>, k: usize| it.sum::<f64>() / k as f64;
    let first = &rows[..decile];
    let last = &rows[n - decile..];
    let rhos: Vec<f64> = rows.iter().filter_map(|r| r.rho).collect();
    Ok(ConvergenceSummary {
        rounds: n,
        avg_grad_sq_norm: mean(&mut rows.iter().map(|r| r.grad_sq_norm), n),
        final_loss: rows[n - 1].train_loss,
        last_decile_loss: mean(&mut last.iter().map(|r| r.train_loss), decile),
        last_decile_grad_sq_norm: mean(&mut last.iter().map(|r| r.grad_sq_norm), decile),
        first_decile_corr_norm: mean(&mut first.iter().map(|r| r.mean_corr_norm), decile),
        last_decile_corr_norm: mean(&mut last.iter().map(|r| r.mean_corr_norm), decile),
        mean_rho: if rhos.is_empty() {
            None
        } else {
            Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
        },
    })
}
