//! Client participation processes.
//!
//! A schedule fixes, for every round, the `S` participants and the round at
//! which each of them was notified. Participation sets are drawn per target
//! round from that round's own seed stream, so any round can be regenerated
//! independently.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::rng::{rng_from, stream_seed, Stream};
use crate::{ClientId, Round};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid policy parameters: {0}")]
    InvalidPolicy(String),
    #[error("schedule export failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("schedule export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Strong,
    Weak,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Strong => "strong",
            Tier::Weak => "weak",
        }
    }
}

/// `N` clients of which `S` participate per round, optionally split into tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    ids: Vec<ClientId>,
    participants: usize,
    tiers: Option<Vec<Tier>>,
}

impl Population {
    /// Clients `0..n`.
    pub fn new(n: usize, participants: usize) -> Result<Self, ScheduleError> {
        Self::with_ids((0..n).collect(), participants)
    }

    /// Clients with explicit ids; positions matter for sampling, so a
    /// relabeled id list yields the correspondingly relabeled schedule.
    pub fn with_ids(ids: Vec<ClientId>, participants: usize) -> Result<Self, ScheduleError> {
        if ids.is_empty() {
            return Err(ScheduleError::InvalidPopulation("no clients".into()));
        }
        if participants == 0 || participants > ids.len() {
            return Err(ScheduleError::InvalidPopulation(format!(
                "participants per round must be in 1..={}, got {participants}",
                ids.len()
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScheduleError::InvalidPopulation(
                "duplicate client id".into(),
            ));
        }
        Ok(Self {
            ids,
            participants,
            tiers: None,
        })
    }

    /// Assigns tiers by position.
    pub fn with_tiers(mut self, tiers: Vec<Tier>) -> Result<Self, ScheduleError> {
        if tiers.len() != self.ids.len() {
            return Err(ScheduleError::InvalidPopulation(format!(
                "{} tiers for {} clients",
                tiers.len(),
                self.ids.len()
            )));
        }
        self.tiers = Some(tiers);
        Ok(self)
    }

    /// The first `round(strong_fraction * n)` clients are strong, the rest weak.
    pub fn two_tier(
        n: usize,
        participants: usize,
        strong_fraction: f64,
    ) -> Result<Self, ScheduleError> {
        if !(0.0..=1.0).contains(&strong_fraction) {
            return Err(ScheduleError::InvalidPopulation(format!(
                "strong fraction {strong_fraction} outside [0, 1]"
            )));
        }
        let strong = (strong_fraction * n as f64).round() as usize;
        let tiers = (0..n)
            .map(|i| if i < strong { Tier::Strong } else { Tier::Weak })
            .collect();
        Self::new(n, participants)?.with_tiers(tiers)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn s(&self) -> usize {
        self.participants
    }

    pub fn ids(&self) -> &[ClientId] {
        &self.ids
    }

    pub fn tier_at(&self, position: usize) -> Option<Tier> {
        self.tiers.as_ref().map(|t| t[position])
    }

    /// Tier of a client by id.
    pub fn tier_of(&self, client: ClientId) -> Option<Tier> {
        let pos = self.ids.iter().position(|&c| c == client)?;
        self.tier_at(pos)
    }

    /// Same population with every id mapped through `f`.
    pub fn relabel(&self, f: impl Fn(ClientId) -> ClientId) -> Result<Self, ScheduleError> {
        let mut out = Self::with_ids(self.ids.iter().map(|&c| f(c)).collect(), self.participants)?;
        out.tiers = self.tiers.clone();
        Ok(out)
    }
}

/// One client's slot in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub client: ClientId,
    pub notify_round: Round,
    pub tier: Option<Tier>,
}

/// Participant sets for rounds `0..T` with notification rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSchedule {
    n: usize,
    participants: usize,
    warmup: Round,
    rounds: Vec<Vec<Assignment>>,
}

impl RoundSchedule {
    /// Builds a schedule from explicit round sets (for audits of external or
    /// adversarial schedules). Every set must hold `S` distinct clients with
    /// `notify_round <= round`.
    pub fn from_rounds(
        n: usize,
        participants: usize,
        rounds: Vec<Vec<Assignment>>,
    ) -> Result<Self, ScheduleError> {
        for (t, set) in rounds.iter().enumerate() {
            if set.len() != participants {
                return Err(ScheduleError::InvalidPolicy(format!(
                    "round {t} has {} participants, expected {participants}",
                    set.len()
                )));
            }
            let mut ids: Vec<_> = set.iter().map(|a| a.client).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(ScheduleError::InvalidPolicy(format!(
                    "round {t} repeats a client"
                )));
            }
            if set.iter().any(|a| a.notify_round > t as Round) {
                return Err(ScheduleError::InvalidPolicy(format!(
                    "round {t} has a notification after participation"
                )));
            }
        }
        Ok(Self {
            n,
            participants,
            warmup: 0,
            rounds,
        })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.participants
    }

    /// First round at which the policy's notification windows are in force.
    pub fn warmup(&self) -> Round {
        self.warmup
    }

    pub fn round(&self, t: Round) -> &[Assignment] {
        &self.rounds[t as usize]
    }

    pub fn rounds(&self) -> &[Vec<Assignment>] {
        &self.rounds
    }

    /// Clients notified at round `s`, with their participation rounds.
    pub fn notified_at(&self, s: Round) -> Vec<(Round, Assignment)> {
        let hi = self
            .rounds
            .len()
            .min(s as usize + 1 + self.max_window() as usize);
        (s as usize..hi)
            .flat_map(|t| {
                self.rounds[t]
                    .iter()
                    .filter(move |a| a.notify_round == s)
                    .map(move |a| (t as Round, *a))
            })
            .collect()
    }

    fn max_window(&self) -> Round {
        self.rounds
            .iter()
            .enumerate()
            .flat_map(|(t, set)| set.iter().map(move |a| t as Round - a.notify_round))
            .max()
            .unwrap_or(0)
    }

    /// Writes `round,client_id,notify_round,tier`; untiered clients get `none`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ScheduleError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "client_id", "notify_round", "tier"])?;
        for (t, set) in self.rounds.iter().enumerate() {
            for a in set {
                w.write_record([
                    t.to_string(),
                    a.client.to_string(),
                    a.notify_round.to_string(),
                    a.tier.map_or("none", Tier::as_str).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), ScheduleError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn draw_positions(population: &Population, round: Round, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(stream_seed(seed, Stream::Schedule, 0, round));
    sample(&mut rng, population.n(), population.s()).into_vec()
}

/// Uniform `S`-subsets without replacement, notified at the participation
/// round itself.
pub fn uniform_policy(population: &Population, rounds: u64, seed: u64) -> RoundSchedule {
    let sets = (0..rounds)
        .map(|t| {
            draw_positions(population, t, seed)
                .into_iter()
                .map(|p| Assignment {
                    client: population.ids[p],
                    notify_round: t,
                    tier: population.tier_at(p),
                })
                .collect()
        })
        .collect();
    RoundSchedule {
        n: population.n(),
        participants: population.s(),
        warmup: 0,
        rounds: sets,
    }
}

/// Two-tier notification: strong clients learn of their round `T_s` rounds
/// ahead, weak clients `T_w` rounds ahead.
///
/// The participant set of every round is a uniform `S`-subset, drawn at the
/// earliest notification time for that round; its weak members are notified
/// at `t - T_w` and its strong members at `t - T_s`. Drawing the whole set at
/// once keeps every set at exactly `S` members, so no collision handling is
/// needed. Rounds before the warmup (the largest delay among tiers present)
/// use zero-window notification.
pub fn two_tier_policy(
    population: &Population,
    strong_delay: Round,
    weak_delay: Round,
    rounds: u64,
    seed: u64,
) -> Result<RoundSchedule, ScheduleError> {
    if strong_delay > weak_delay {
        return Err(ScheduleError::InvalidPolicy(format!(
            "strong delay {strong_delay} exceeds weak delay {weak_delay}"
        )));
    }
    let tiers = population
        .tiers
        .as_ref()
        .ok_or_else(|| ScheduleError::InvalidPolicy("population has no tiers".into()))?;
    let delay = |tier: Tier| match tier {
        Tier::Strong => strong_delay,
        Tier::Weak => weak_delay,
    };
    let warmup = tiers.iter().map(|&t| delay(t)).max().unwrap_or(0);
    let mut schedule = uniform_policy(population, rounds, seed);
    for (t, set) in schedule.rounds.iter_mut().enumerate() {
        let t = t as Round;
        if t < warmup {
            continue;
        }
        for a in set.iter_mut() {
            a.notify_round = t - delay(a.tier.expect("tiered population"));
        }
    }
    schedule.warmup = warmup;
    Ok(schedule)
}

/// Participation-frequency audit of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub rounds: u64,
    pub expected: f64,
    /// Per-client participation frequency, indexed by client id.
    pub frequencies: Vec<f64>,
    /// Standard error of one client's frequency under uniform sampling.
    pub std_error: f64,
    pub max_deviation: f64,
    /// `max_deviation / std_error`.
    pub max_z: f64,
    /// Statistic with `N - 1` degrees of freedom, normalized for sampling
    /// without replacement.
    pub chi_square: f64,
    pub p_value: f64,
}

impl UniformityReport {
    /// True when every client's frequency is within `k` standard errors.
    pub fn within_sigma(&self, k: f64) -> bool {
        self.max_z <= k
    }
}

/// Counts participations in rounds `warmup..T` and compares them with `S/N`.
///
/// Client ids are expected to lie in `0..N`.
pub fn audit_uniformity(
    schedule: &RoundSchedule,
    warmup: Round,
) -> Result<UniformityReport, ScheduleError> {
    let total = schedule.len() as u64;
    if warmup >= total {
        return Err(ScheduleError::InvalidPolicy(format!(
            "warmup {warmup} leaves no rounds out of {total}"
        )));
    }
    let n = schedule.n;
    let mut counts = vec![0u64; n];
    for set in &schedule.rounds[warmup as usize..] {
        for a in set {
            if a.client >= n {
                return Err(ScheduleError::InvalidPolicy(format!(
                    "client id {} outside 0..{n}",
                    a.client
                )));
            }
            counts[a.client] += 1;
        }
    }
    let r = (total - warmup) as f64;
    let p = schedule.participants as f64 / n as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / r).collect();
    let max_deviation = frequencies
        .iter()
        .map(|f| (f - p).abs())
        .fold(0.0, f64::max);
    let var = p * (1.0 - p);
    let std_error = (var / r).sqrt();
    let (max_z, chi_square, p_value) = if var == 0.0 || n < 2 {
        let z = if max_deviation == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        (z, 0.0, 1.0)
    } else {
        let expected = r * p;
        let scale = r * var * n as f64 / (n as f64 - 1.0);
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2))
            .sum::<f64>()
            / scale;
        let dist = ChiSquared::new(n as f64 - 1.0).expect("positive degrees of freedom");
        (max_deviation / std_error, stat, dist.sf(stat))
    };
    Ok(UniformityReport {
        rounds: total - warmup,
        expected: p,
        frequencies,
        std_error,
        max_deviation,
        max_z,
        chi_square,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_validation() {
        assert!(Population::new(0, 0).is_err());
        assert!(Population::new(3, 4).is_err());
        assert!(Population::new(3, 0).is_err());
        assert!(Population::with_ids(vec![1, 1], 1).is_err());
        let p = Population::two_tier(4, 2, 0.5).unwrap();
        assert_eq!(p.tier_of(0), Some(Tier::Strong));
        assert_eq!(p.tier_of(3), Some(Tier::Weak));
    }

    #[test]
    fn uniform_sets_are_distinct_and_full() {
        let pop = Population::new(10, 2).unwrap();
        let sched = uniform_policy(&pop, 200, 3);
        for (t, set) in sched.rounds().iter().enumerate() {
            assert_eq!(set.len(), 2);
            assert_ne!(set[0].client, set[1].client);
            assert!(set.iter().all(|a| a.notify_round == t as Round));
        }
    }

    #[test]
    fn full_participation() {
        let pop = Population::new(5, 5).unwrap();
        let sched = uniform_policy(&pop, 10, 0);
        for set in sched.rounds() {
            let mut ids: Vec<_> = set.iter().map(|a| a.client).collect();
            ids.sort();
            assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        }
        let report = audit_uniformity(&sched, 0).unwrap();
        assert_eq!(report.max_deviation, 0.0);
    }

    #[test]
    fn uniform_chi_square_passes() {
        let pop = Population::new(10, 2).unwrap();
        let sched = uniform_policy(&pop, 10_000, 11);
        let report = audit_uniformity(&sched, 0).unwrap();
        assert!((report.expected - 0.2).abs() < 1e-12);
        assert!(report.p_value > 0.01, "{report:?}");
    }

    #[test]
    fn fixed_set_is_flagged() {
        let rounds = (0..1000)
            .map(|t| {
                (0..2)
                    .map(|c| Assignment {
                        client: c,
                        notify_round: t,
                        tier: None,
                    })
                    .collect()
            })
            .collect();
        let sched = RoundSchedule::from_rounds(10, 2, rounds).unwrap();
        let report = audit_uniformity(&sched, 0).unwrap();
        assert!(report.max_z > 5.0);
        assert!(!report.within_sigma(5.0));
    }

    #[test]
    fn two_tier_windows() {
        let pop = Population::two_tier(20, 4, 0.5).unwrap();
        let sched = two_tier_policy(&pop, 1, 5, 300, 2).unwrap();
        assert_eq!(sched.warmup(), 5);
        for (t, set) in sched.rounds().iter().enumerate() {
            for a in set {
                let window = t as Round - a.notify_round;
                if (t as Round) < sched.warmup() {
                    assert_eq!(window, 0);
                } else {
                    let want = if a.tier == Some(Tier::Strong) { 1 } else { 5 };
                    assert_eq!(window, want);
                }
            }
        }
        assert!(two_tier_policy(&pop, 5, 1, 10, 0).is_err());
        assert!(two_tier_policy(&Population::new(3, 1).unwrap(), 0, 1, 10, 0).is_err());
    }

    #[test]
    fn two_tier_degenerate_cases_match_uniform() {
        let pop = Population::two_tier(12, 3, 0.5).unwrap();
        let u = uniform_policy(&pop, 50, 9);
        assert_eq!(two_tier_policy(&pop, 0, 0, 50, 9).unwrap(), u);
        let strong = Population::two_tier(12, 3, 1.0).unwrap();
        let s = two_tier_policy(&strong, 2, 7, 50, 9).unwrap();
        assert_eq!(s.warmup(), 2);
        for (t, set) in s.rounds().iter().enumerate().skip(2) {
            let base = u.round(t as Round);
            assert_eq!(
                set.iter().map(|a| a.client).collect::<Vec<_>>(),
                base.iter().map(|a| a.client).collect::<Vec<_>>()
            );
            assert!(set.iter().all(|a| a.notify_round == t as Round - 2));
        }
    }

    #[test]
    fn notified_at_inverts_windows() {
        let pop = Population::two_tier(8, 2, 0.5).unwrap();
        let sched = two_tier_policy(&pop, 1, 3, 40, 5).unwrap();
        let mut seen = 0;
        for s in 0..40 {
            for (t, a) in sched.notified_at(s) {
                assert!(sched.round(t).contains(&a));
                seen += 1;
            }
        }
        assert_eq!(seen, 80);
    }

    #[test]
    fn csv_export() {
        let pop = Population::two_tier(4, 1, 0.5).unwrap();
        let sched = two_tier_policy(&pop, 0, 1, 3, 0).unwrap();
        let mut buf = Vec::new();
        sched.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "round,client_id,notify_round,tier");
        assert_eq!(lines.len(), 4);
    }
}
