//! Experiment runner: configuration, seeded orchestration, sweeps and
//! benchmark commands. Everything it emits is CSV or plain text.

mod bench;
mod config;
mod experiments;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use bench::{codec_bench, write_bench_csv, BenchOptions, BenchRow, Distribution};
pub use config::{ExperimentConfig, LearningRate, PolicyKind, TaskKind};
pub use experiments::{
    counterexample_cmd, kv_sweep, run_seeds, schedule_audit_cmd, write_counterexample_csv,
    write_kv_csv, AuditParams, CounterexampleOptions, CounterexampleRow, KvRow,
};

use crate::codec::{decompress, identity_encode, CodecError, EncodedBlob};
use crate::protocol::{run_rounds, EngineConfig, EngineOutput, Mode, ProtocolError};
use crate::scheduler::{two_tier_policy, uniform_policy, Population, RoundSchedule, ScheduleError};
use crate::tasks::{
    estimate_constants, make_mlp, make_quadratic, random_probes, tuned_eta, Dataset,
    EstimateOptions, LogisticTask, Task, TaskError,
};
use crate::telemetry::{
    convergence_summary, reduction_report, write_metrics_csv, ConvergenceSummary, ReductionReport,
    TelemetryError,
};
use crate::{DenseVector, Round};

/// Overrides the configured output directory when set.
pub const OUTPUT_DIR_ENV: &str = "DOCOFL_OUTPUT_DIR";

/// Distance of the counterexample's time-averaged iterate from `w* = 1`
/// above which a run is flagged as not converging.
pub const BIAS_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error{}, field `{field}`: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        field: String,
        message: String,
    },
    #[error("numeric blowup at round {round}; last good round {last_good}")]
    Numeric { round: Round, last_good: Round },
    #[error(transparent)]
    Protocol(ProtocolError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<ProtocolError> for HarnessError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::NumericBlowup { round, last_good } => {
                HarnessError::Numeric { round, last_good }
            }
            other => HarnessError::Protocol(other),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 for numeric failure, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numeric { .. } => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Canonical text of the configuration that ran.
    pub config_echo: String,
    /// Hex SHA-256 of the configuration (output path excluded), seed included.
    pub fingerprint: String,
    pub learning_rate: f64,
    /// The metrics CSV as written.
    pub metrics_csv: String,
    pub metrics_path: Option<PathBuf>,
    pub summary: ConvergenceSummary,
    pub reduction: ReductionReport,
    /// Counterexample only: `|mean(w) - 1|` over the second half of the run.
    pub bias: Option<f64>,
    pub engine: EngineOutput,
}

impl RunResult {
    /// False only for counterexample runs whose bias exceeds [`BIAS_THRESHOLD`].
    pub fn converged(&self) -> bool {
        self.bias.is_none_or(|b| b <= BIAS_THRESHOLD)
    }

    /// Short human-readable report.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let r = &self.reduction;
        let mut out = format!(
            "fingerprint {}\nrounds {}\nlearning_rate {}\nfinal_loss {}\nlast_decile_loss {}\n\
             avg_grad_sq_norm {}\nmean_rho {}\nonline_reduction {}\ntotal_reduction {}\n\
             online_reduction_with_side_info {}\ntotal_reduction_with_side_info {}\n",
            self.fingerprint,
            s.rounds,
            self.learning_rate,
            s.final_loss,
            s.last_decile_loss,
            s.avg_grad_sq_norm,
            s.mean_rho.map_or("nan".into(), |v| v.to_string()),
            r.online,
            r.total,
            r.online_with_side_info,
            r.total_with_side_info,
        );
        if let Some(b) = self.bias {
            out.push_str(&format!("bias {b}\nconverged {}\n", self.converged()));
        }
        out
    }
}

/// Builds the objective named by the configuration.
pub fn build_task(cfg: &ExperimentConfig) -> Result<Task, HarnessError> {
    let data = || -> Result<Dataset, TaskError> {
        match &cfg.data_csv {
            Some(path) => Dataset::from_csv(path, cfg.clients, cfg.data_seed),
            None => Dataset::synthetic(
                cfg.clients,
                cfg.dim,
                cfg.samples_per_client,
                cfg.skew,
                cfg.separation,
                cfg.data_seed,
            ),
        }
    };
    Ok(match cfg.task {
        config::TaskKind::Counterexample => Task::counterexample(cfg.clients)?,
        config::TaskKind::Quadratic => Task::Quadratic(
            make_quadratic(
                cfg.clients,
                cfg.dim,
                cfg.condition,
                cfg.spread,
                cfg.data_seed,
            )?
            .with_noise(cfg.noise)?,
        ),
        config::TaskKind::Logistic => {
            Task::Logistic(LogisticTask::new(data()?, cfg.regularization, cfg.batch)?)
        }
        config::TaskKind::Mlp => Task::Mlp(
            make_mlp(cfg.hidden, cfg.activation, data()?)?
                .with_batch(cfg.batch)
                .with_regularization(cfg.regularization)?,
        ),
    })
}

/// Builds the participation schedule named by the configuration.
pub fn build_schedule(cfg: &ExperimentConfig) -> Result<RoundSchedule, HarnessError> {
    Ok(match cfg.policy {
        PolicyKind::Uniform => uniform_policy(
            &Population::new(cfg.clients, cfg.participants)?,
            cfg.rounds,
            cfg.seed,
        ),
        PolicyKind::TwoTier => {
            let pop = Population::two_tier(cfg.clients, cfg.participants, cfg.strong_fraction)?;
            two_tier_policy(&pop, cfg.strong_delay, cfg.weak_delay, cfg.rounds, cfg.seed)?
        }
    })
}

fn initial_weights(cfg: &ExperimentConfig, task: &Task) -> Vec<f64> {
    match task {
        Task::Mlp(_) => task.initial_weights(cfg.data_seed),
        _ => vec![cfg.init; task.dim()],
    }
}

/// Resolves `learning_rate = tuned` from constants estimated around `w0`.
fn resolve_learning_rate(
    cfg: &ExperimentConfig,
    task: &Task,
    w0: &[f64],
) -> Result<f64, HarnessError> {
    let eta = match cfg.learning_rate {
        LearningRate::Fixed(eta) => return Ok(eta),
        LearningRate::Tuned => {
            let omega = match cfg.mode {
                Mode::Baseline | Mode::Meta { .. } => Some(0.0),
                Mode::DoCoFL | Mode::Naive => cfg.correction.contract(task.dim()).omega(),
            };
            let Some(omega) = omega else {
                return Err(HarnessError::Config {
                    line: None,
                    field: "learning_rate".into(),
                    message: format!(
                        "tuned step needs a correction compressor with a known bound, not {}",
                        cfg.correction
                    ),
                });
            };
            let probes = random_probes(w0, 1.0, 20, cfg.data_seed);
            let opts = EstimateOptions {
                seed: cfg.data_seed,
                ..EstimateOptions::default()
            };
            let constants = estimate_constants(task, w0, &probes, &opts)?;
            tuned_eta(
                &constants,
                cfg.rounds,
                cfg.participants,
                omega,
                cfg.anchor_rate,
                cfg.queue,
            )?
        }
    };
    Ok(eta)
}

/// Hex SHA-256 of the configuration with its output path cleared.
pub fn fingerprint(cfg: &ExperimentConfig) -> String {
    let text = ExperimentConfig {
        output: None,
        ..cfg.clone()
    }
    .to_text();
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn output_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Some(PathBuf::from(dir)),
        _ => cfg.output.clone(),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// Checkpoint file for round `t` inside `dir`.
pub fn checkpoint_path(dir: &Path, t: Round) -> PathBuf {
    dir.join("checkpoints").join(format!("round_{t:08}.bin"))
}

/// Reads weights written by a checkpointing run.
pub fn load_checkpoint(path: &Path) -> Result<DenseVector, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let (blob, _) = EncodedBlob::from_bytes(&bytes)?;
    Ok(decompress(&blob)?)
}

/// Runs one experiment end to end.
///
/// With an output directory (from the config or [`OUTPUT_DIR_ENV`]) it
/// writes `metrics.csv`, `config.txt`, `summary.txt` and, when enabled,
/// `checkpoints/round_*.bin` holding `w_t` before round `t`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let task = build_task(cfg)?;
    let schedule = build_schedule(cfg)?;
    let w0 = initial_weights(cfg, &task);
    let learning_rate = resolve_learning_rate(cfg, &task, &w0)?;
    let out_dir = output_dir(cfg);
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }

    let mut engine_cfg = EngineConfig::new(cfg.mode, cfg.compressors(), learning_rate, cfg.seed);
    engine_cfg.anchor_rate = cfg.anchor_rate;
    engine_cfg.queue_capacity = cfg.queue;
    engine_cfg.anchor_pick = cfg.anchor_pick;
    engine_cfg.fetch = cfg.fetch;
    engine_cfg.download_rounds = cfg.download_rounds;
    engine_cfg.strict_anchor = cfg.strict_anchor;
    engine_cfg.rho_enabled = cfg.rho_enabled;
    engine_cfg.record_trajectory = cfg.task == TaskKind::Counterexample;

    let w0 = DenseVector::from_f64(&w0)?;
    let engine = match (&out_dir, cfg.checkpoint_every) {
        (Some(dir), every) if every > 0 => {
            let ckpt = dir.join("checkpoints");
            fs::create_dir_all(&ckpt).map_err(|e| HarnessError::io(&ckpt, e))?;
            let mut failure: Option<HarnessError> = None;
            let mut observer = |t: Round, w: &DenseVector| {
                if t.is_multiple_of(every) && failure.is_none() {
                    let path = checkpoint_path(dir, t);
                    if let Err(e) = write_file(&path, &identity_encode(w).to_bytes()) {
                        failure = Some(e);
                    }
                }
            };
            let out = run_rounds(&task, &schedule, w0, &engine_cfg, Some(&mut observer))?;
            if let Some(e) = failure {
                return Err(e);
            }
            out
        }
        _ => run_rounds(&task, &schedule, w0, &engine_cfg, None)?,
    };

    let summary = convergence_summary(&engine.rows)?;
    let reduction = reduction_report(&engine.ledger, &cfg.anchor, &cfg.correction)?;
    let bias = (cfg.task == TaskKind::Counterexample).then(|| {
        let half = &engine.trajectory[engine.trajectory.len() / 2..];
        let mean = half.iter().map(|w| w.as_slice()[0] as f64).sum::<f64>() / half.len() as f64;
        (mean - 1.0).abs()
    });
    let mut csv = Vec::new();
    write_metrics_csv(&engine.rows, &mut csv)?;
    let metrics_csv = String::from_utf8(csv).expect("csv writer emits utf-8");

    let mut result = RunResult {
        config: cfg.clone(),
        config_echo: cfg.to_text(),
        fingerprint: fingerprint(cfg),
        learning_rate,
        metrics_csv,
        metrics_path: None,
        summary,
        reduction,
        bias,
        engine,
    };
    if let Some(dir) = out_dir {
        let metrics = dir.join("metrics.csv");
        write_file(&metrics, result.metrics_csv.as_bytes())?;
        write_file(&dir.join("config.txt"), result.config_echo.as_bytes())?;
        write_file(&dir.join("summary.txt"), result.summary_text().as_bytes())?;
        result.metrics_path = Some(metrics);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CompressorSpec;
    use crate::telemetry::read_metrics_csv;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            clients: 12,
            participants: 4,
            rounds: 60,
            dim: 8,
            samples_per_client: 20,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn identity_run_matches_baseline_and_reruns_identically() {
        let identity = ExperimentConfig {
            anchor: CompressorSpec::Identity,
            correction: CompressorSpec::Identity,
            uplink: CompressorSpec::Identity,
            ..small()
        };
        let baseline = ExperimentConfig {
            mode: Mode::Baseline,
            ..identity.clone()
        };
        let a = run(&identity).unwrap();
        let b = run(&identity).unwrap();
        let c = run(&baseline).unwrap();
        assert_eq!(a.metrics_csv, b.metrics_csv);
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.engine.final_weights, c.engine.final_weights);
        assert_ne!(a.fingerprint, c.fingerprint);
    }

    #[test]
    fn ledger_reconciles_with_csv() {
        let r = run(&small()).unwrap();
        let rows = read_metrics_csv(r.metrics_csv.as_bytes()).unwrap();
        let last = rows.last().unwrap();
        let l = &r.engine.ledger;
        use crate::telemetry::Channel::*;
        assert_eq!(last.cum_anchor_bits, l.payload_bits(Anchor));
        assert_eq!(last.cum_corr_bits, l.payload_bits(Correction));
        assert_eq!(last.cum_uplink_bits, l.payload_bits(Uplink));
    }

    #[test]
    fn writes_outputs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output: Some(dir.path().to_path_buf()),
            checkpoint_every: 20,
            ..small()
        };
        let r = run(&cfg).unwrap();
        let path = r.metrics_path.clone().unwrap();
        assert_eq!(fs::read_to_string(path).unwrap(), r.metrics_csv);
        let echo = fs::read_to_string(dir.path().join("config.txt")).unwrap();
        assert_eq!(ExperimentConfig::parse(&echo).unwrap(), cfg);
        let w = load_checkpoint(&checkpoint_path(dir.path(), 0)).unwrap();
        assert!(w.is_zero());
        assert!(checkpoint_path(dir.path(), 40).exists());
        assert!(!checkpoint_path(dir.path(), 30).exists());
    }

    #[test]
    fn naive_counterexample_is_flagged() {
        let cfg = ExperimentConfig {
            task: TaskKind::Counterexample,
            clients: 1,
            participants: 1,
            rounds: 4000,
            learning_rate: LearningRate::Fixed(0.05),
            mode: Mode::Naive,
            correction: CompressorSpec::TwoPoint { omega: 0.5 },
            uplink: CompressorSpec::Identity,
            anchor: CompressorSpec::Identity,
            ..ExperimentConfig::default()
        };
        let naive = run(&cfg).unwrap();
        assert!(!naive.converged(), "bias {:?}", naive.bias);
        let docofl = run(&ExperimentConfig {
            mode: Mode::DoCoFL,
            ..cfg
        })
        .unwrap();
        assert!(docofl.bias.unwrap() < naive.bias.unwrap());
    }

    #[test]
    fn blowup_exits_with_code_two() {
        let cfg = ExperimentConfig {
            task: TaskKind::Quadratic,
            condition: 50.0,
            learning_rate: LearningRate::Fixed(10.0),
            ..small()
        };
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn tuned_learning_rate_is_positive() {
        let cfg = ExperimentConfig {
            task: TaskKind::Quadratic,
            learning_rate: LearningRate::Tuned,
            rounds: 30,
            ..small()
        };
        let r = run(&cfg).unwrap();
        assert!(r.learning_rate > 0.0 && r.learning_rate.is_finite());
        let biased = ExperimentConfig {
            correction: CompressorSpec::Sq { bits: 2 },
            ..cfg
        };
        assert_eq!(run(&biased).unwrap_err().exit_code(), 1);
    }
}
