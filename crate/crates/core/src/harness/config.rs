//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys are errors. Keys not given take their defaults,
//! and [`ExperimentConfig::to_text`] always writes every key, so parsing the
//! serialized form gives back the same configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::codec::CompressorSpec;
use crate::protocol::{AnchorPick, Compressors, FetchTime, Mode};
use crate::tasks::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Counterexample,
    Quadratic,
    Logistic,
    Mlp,
}

impl TaskKind {
    fn as_str(self) -> &'static str {
        match self {
            TaskKind::Counterexample => "counterexample",
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logistic => "logistic",
            TaskKind::Mlp => "mlp",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "counterexample" => TaskKind::Counterexample,
            "quadratic" => TaskKind::Quadratic,
            "logistic" => TaskKind::Logistic,
            "mlp" => TaskKind::Mlp,
            _ => return Err("expected counterexample, quadratic, logistic or mlp".into()),
        })
    }
}

/// Step size: a number, or derived from estimated problem constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    Tuned,
}

impl fmt::Display for LearningRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearningRate::Fixed(v) => write!(f, "{v}"),
            LearningRate::Tuned => f.write_str("tuned"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Uniform,
    TwoTier,
}

impl PolicyKind {
    fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::TwoTier => "two_tier",
        }
    }
}

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// `N`.
    pub clients: usize,
    /// `S`.
    pub participants: usize,
    /// `T`.
    pub rounds: u64,
    pub dim: usize,
    pub samples_per_client: usize,
    /// Share of each client's samples drawn from its favoured class.
    pub skew: f64,
    pub separation: f64,
    pub regularization: f64,
    /// Minibatch size; 0 means full batch.
    pub batch: usize,
    pub condition: f64,
    pub spread: f64,
    /// Additive Gaussian oracle noise for the quadratic task.
    pub noise: f64,
    pub hidden: usize,
    pub activation: Activation,
    /// CSV file replacing the synthetic data (logistic and MLP).
    pub data_csv: Option<PathBuf>,
    /// Seed for data and task generation, kept apart from the training seed.
    pub data_seed: u64,
    /// Starting value for every coordinate; MLP ignores it and uses its own
    /// random initialization.
    pub init: f64,
    pub learning_rate: LearningRate,
    pub mode: Mode,
    /// `K`.
    pub anchor_rate: u64,
    /// `V`.
    pub queue: usize,
    pub anchor: CompressorSpec,
    pub correction: CompressorSpec,
    pub uplink: CompressorSpec,
    pub policy: PolicyKind,
    pub strong_delay: u64,
    pub weak_delay: u64,
    pub strong_fraction: f64,
    pub anchor_pick: AnchorPick,
    pub fetch: FetchTime,
    pub download_rounds: u64,
    pub strict_anchor: bool,
    pub rho_enabled: bool,
    /// Write the weights every this many rounds; 0 disables checkpoints.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Output directory; nothing is written when absent.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Logistic,
            clients: 100,
            participants: 10,
            rounds: 2000,
            dim: 32,
            samples_per_client: 50,
            skew: 0.5,
            separation: 1.0,
            regularization: 1e-2,
            batch: 1,
            condition: 10.0,
            spread: 1.0,
            noise: 0.0,
            hidden: 16,
            activation: Activation::Tanh,
            data_csv: None,
            data_seed: 0,
            init: 0.0,
            learning_rate: LearningRate::Fixed(0.5),
            mode: Mode::DoCoFL,
            anchor_rate: 10,
            queue: 3,
            anchor: CompressorSpec::Ecuq {
                bits: 4,
                tolerance: 0.1,
            },
            correction: CompressorSpec::HadamardSq { bits: 2 },
            uplink: CompressorSpec::HadamardSq { bits: 2 },
            policy: PolicyKind::Uniform,
            strong_delay: 1,
            weak_delay: 5,
            strong_fraction: 0.5,
            anchor_pick: AnchorPick::Newest,
            fetch: FetchTime::Notification,
            download_rounds: 0,
            strict_anchor: false,
            rho_enabled: false,
            checkpoint_every: 0,
            seed: 1,
            output: None,
        }
    }
}

const KEYS: &[&str] = &[
    "task",
    "clients",
    "participants",
    "rounds",
    "dim",
    "samples_per_client",
    "skew",
    "separation",
    "regularization",
    "batch",
    "condition",
    "spread",
    "noise",
    "hidden",
    "activation",
    "data_csv",
    "data_seed",
    "init",
    "learning_rate",
    "mode",
    "horizon",
    "anchor_rate",
    "queue",
    "anchor",
    "correction",
    "uplink",
    "policy",
    "strong_delay",
    "weak_delay",
    "strong_fraction",
    "anchor_pick",
    "fetch",
    "download_rounds",
    "strict_anchor",
    "rho",
    "checkpoint_every",
    "seed",
    "output",
];

fn config_err(line: Option<usize>, field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}`: expected true or false")),
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    if v.is_empty() || v == "none" {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

impl ExperimentConfig {
    /// Parses the text form, reporting the offending line and key.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut mode_name = String::from("docofl");
        let mut mode_line = None;
        let mut horizon: Option<(u64, usize)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    Some(line_no),
                    "",
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(config_err(Some(line_no), key, "unknown key"));
            };
            if seen.contains(&known) {
                return Err(config_err(Some(line_no), key, "duplicate key"));
            }
            seen.push(known);
            let at = |m: String| config_err(Some(line_no), key, m);
            match known {
                "task" => cfg.task = value.parse().map_err(at)?,
                "clients" => cfg.clients = parse_num(value).map_err(at)?,
                "participants" => cfg.participants = parse_num(value).map_err(at)?,
                "rounds" => cfg.rounds = parse_num(value).map_err(at)?,
                "dim" => cfg.dim = parse_num(value).map_err(at)?,
                "samples_per_client" => cfg.samples_per_client = parse_num(value).map_err(at)?,
                "skew" => cfg.skew = parse_num(value).map_err(at)?,
                "separation" => cfg.separation = parse_num(value).map_err(at)?,
                "regularization" => cfg.regularization = parse_num(value).map_err(at)?,
                "batch" => cfg.batch = parse_num(value).map_err(at)?,
                "condition" => cfg.condition = parse_num(value).map_err(at)?,
                "spread" => cfg.spread = parse_num(value).map_err(at)?,
                "noise" => cfg.noise = parse_num(value).map_err(at)?,
                "hidden" => cfg.hidden = parse_num(value).map_err(at)?,
                "activation" => cfg.activation = value.parse().map_err(|e| at(format!("{e}")))?,
                "data_csv" => cfg.data_csv = parse_path(value),
                "data_seed" => cfg.data_seed = parse_num(value).map_err(at)?,
                "init" => cfg.init = parse_num(value).map_err(at)?,
                "learning_rate" => {
                    cfg.learning_rate = if value == "tuned" {
                        LearningRate::Tuned
                    } else {
                        LearningRate::Fixed(parse_num(value).map_err(at)?)
                    }
                }
                "mode" => {
                    mode_name = value.to_string();
                    mode_line = Some(line_no);
                }
                "horizon" => horizon = Some((parse_num(value).map_err(at)?, line_no)),
                "anchor_rate" => cfg.anchor_rate = parse_num(value).map_err(at)?,
                "queue" => cfg.queue = parse_num(value).map_err(at)?,
                "anchor" => cfg.anchor = value.parse().map_err(|e| at(format!("{e}")))?,
                "correction" => cfg.correction = value.parse().map_err(|e| at(format!("{e}")))?,
                "uplink" => cfg.uplink = value.parse().map_err(|e| at(format!("{e}")))?,
                "policy" => {
                    cfg.policy = match value {
                        "uniform" => PolicyKind::Uniform,
                        "two_tier" => PolicyKind::TwoTier,
                        _ => return Err(at("expected uniform or two_tier".into())),
                    }
                }
                "strong_delay" => cfg.strong_delay = parse_num(value).map_err(at)?,
                "weak_delay" => cfg.weak_delay = parse_num(value).map_err(at)?,
                "strong_fraction" => cfg.strong_fraction = parse_num(value).map_err(at)?,
                "anchor_pick" => cfg.anchor_pick = value.parse().map_err(|e| at(format!("{e}")))?,
                "fetch" => {
                    cfg.fetch = match value {
                        "notification" => FetchTime::Notification,
                        "participation" => FetchTime::Participation,
                        _ => return Err(at("expected notification or participation".into())),
                    }
                }
                "download_rounds" => cfg.download_rounds = parse_num(value).map_err(at)?,
                "strict_anchor" => cfg.strict_anchor = parse_bool(value).map_err(at)?,
                "rho" => cfg.rho_enabled = parse_bool(value).map_err(at)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_num(value).map_err(at)?,
                "seed" => cfg.seed = parse_num(value).map_err(at)?,
                "output" => cfg.output = parse_path(value),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.mode = match mode_name.as_str() {
            "docofl" => Mode::DoCoFL,
            "baseline" => Mode::Baseline,
            "naive" => Mode::Naive,
            "meta" => Mode::Meta {
                horizon: horizon.map(|(h, _)| h).unwrap_or(0),
            },
            _ => {
                return Err(config_err(
                    mode_line,
                    "mode",
                    "expected docofl, baseline, naive or meta",
                ))
            }
        };
        if let (Some((_, line)), false) = (horizon, matches!(cfg.mode, Mode::Meta { .. })) {
            return Err(config_err(
                Some(line),
                "horizon",
                "only meaningful with mode = meta",
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks cross-field constraints. Errors name the field but no line.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, m: &str| Err(config_err(None, field, m));
        if self.clients == 0 {
            return bad("clients", "must be at least 1");
        }
        if self.participants == 0 || self.participants > self.clients {
            return bad("participants", "must lie in 1..=clients");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        if self.anchor_rate == 0 {
            return bad("anchor_rate", "must be at least 1");
        }
        if self.queue == 0 {
            return bad("queue", "must be at least 1");
        }
        if let LearningRate::Fixed(eta) = self.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("learning_rate", "must be positive and finite");
            }
        }
        if self.task != TaskKind::Counterexample && self.dim == 0 && self.data_csv.is_none() {
            return bad("dim", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return bad("skew", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.strong_fraction) {
            return bad("strong_fraction", "must lie in [0, 1]");
        }
        if self.strong_delay > self.weak_delay {
            return bad("strong_delay", "must not exceed weak_delay");
        }
        Ok(())
    }

    pub fn compressors(&self) -> Compressors {
        Compressors {
            anchor: self.anchor,
            correction: self.correction,
            uplink: self.uplink,
        }
    }

    /// Canonical text form listing every key.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| match p {
            Some(p) => p.display().to_string(),
            None => "none".to_string(),
        };
        let (mode, horizon) = match self.mode {
            Mode::DoCoFL => ("docofl", None),
            Mode::Baseline => ("baseline", None),
            Mode::Naive => ("naive", None),
            Mode::Meta { horizon } => ("meta", Some(horizon)),
        };
        let fetch = match self.fetch {
            FetchTime::Notification => "notification",
            FetchTime::Participation => "participation",
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("task", self.task.as_str().into());
        put("clients", self.clients.to_string());
        put("participants", self.participants.to_string());
        put("rounds", self.rounds.to_string());
        put("dim", self.dim.to_string());
        put("samples_per_client", self.samples_per_client.to_string());
        put("skew", self.skew.to_string());
        put("separation", self.separation.to_string());
        put("regularization", self.regularization.to_string());
        put("batch", self.batch.to_string());
        put("condition", self.condition.to_string());
        put("spread", self.spread.to_string());
        put("noise", self.noise.to_string());
        put("hidden", self.hidden.to_string());
        put("activation", self.activation.to_string());
        put("data_csv", path(&self.data_csv));
        put("data_seed", self.data_seed.to_string());
        put("init", self.init.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("mode", mode.into());
        if let Some(h) = horizon {
            put("horizon", h.to_string());
        }
        put("anchor_rate", self.anchor_rate.to_string());
        put("queue", self.queue.to_string());
        put("anchor", self.anchor.to_string());
        put("correction", self.correction.to_string());
        put("uplink", self.uplink.to_string());
        put("policy", self.policy.as_str().into());
        put("strong_delay", self.strong_delay.to_string());
        put("weak_delay", self.weak_delay.to_string());
        put("strong_fraction", self.strong_fraction.to_string());
        put("anchor_pick", self.anchor_pick.to_string());
        put("fetch", fetch.into());
        put("download_rounds", self.download_rounds.to_string());
        put("strict_anchor", self.strict_anchor.to_string());
        put("rho", self.rho_enabled.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("seed", self.seed.to_string());
        put("output", path(&self.output));
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
