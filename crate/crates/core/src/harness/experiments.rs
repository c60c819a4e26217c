//! Multi-run commands: seed replicas, the counterexample study, schedule
//! audits and the `(K, V)` sweep.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use super::{
    build_schedule, run, ExperimentConfig, HarnessError, LearningRate, PolicyKind, RunResult,
    TaskKind,
};
use crate::codec::CompressorSpec;
use crate::protocol::{
    mean_iterate, naive_fixed_point, run_naive_weight_compression, two_point_residual, Mode,
};
use crate::scheduler::{audit_uniformity, UniformityReport};

/// Runs `cfg` once per seed, in parallel. Results follow `seeds`.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<RunResult>, HarnessError> {
    seeds
        .par_iter()
        .map(|&seed| {
            run(&ExperimentConfig {
                seed,
                ..cfg.clone()
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: "<csv output>".into(),
        source: e.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleOptions {
    pub omegas: Vec<f64>,
    pub learning_rate: f64,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    /// `K` and `V` of the compressed-correction comparison run.
    pub anchor_rate: u64,
    pub queue: usize,
}

impl Default for CounterexampleOptions {
    fn default() -> Self {
        Self {
            omegas: vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0],
            learning_rate: 0.05,
            rounds: 20_000,
            seeds: vec![1, 2, 3, 4, 5],
            anchor_rate: 10,
            queue: 3,
        }
    }
}

/// One `omega` of the counterexample study. Biases are `|w_bar - 1|` with
/// `w_bar` the mean iterate over the second half of the run, averaged over
/// seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    pub omega: f64,
    /// Seed-averaged `w_bar` of weight compression.
    pub naive_mean: f64,
    pub naive_bias: f64,
    /// `3 / (3 + omega)`.
    pub naive_fixed_point: f64,
    /// `E[f'(w + eps |w|)]` at `w_bar`; vanishes at the fixed point.
    pub residual_at_mean: f64,
    /// `E[f'(1 + eps)] = omega / 2`, the drift that keeps `w* = 1` from
    /// being stationary.
    pub residual_at_optimum: f64,
    /// Same measurement for exact anchors plus `omega`-compressed corrections.
    pub docofl_bias: f64,
}

/// Weight compression versus compressed corrections on the scalar
/// counterexample, one row per `omega`.
pub fn counterexample_cmd(
    opts: &CounterexampleOptions,
) -> Result<Vec<CounterexampleRow>, HarnessError> {
    if opts.seeds.is_empty() || opts.rounds < 2 {
        return Err(HarnessError::Config {
            line: None,
            field: "seeds".into(),
            message: "need at least one seed and two rounds".into(),
        });
    }
    opts.omegas
        .par_iter()
        .map(|&omega| {
            if !(omega >= 0.0 && omega.is_finite()) {
                return Err(HarnessError::Config {
                    line: None,
                    field: "omega".into(),
                    message: format!("{omega} is not a nonnegative number"),
                });
            }
            let half = (opts.rounds / 2) as usize;
            let n = opts.seeds.len() as f64;
            let mut naive_mean = 0.0;
            let mut naive_bias = 0.0;
            for &seed in &opts.seeds {
                let t = run_naive_weight_compression(
                    omega,
                    opts.learning_rate,
                    opts.rounds as usize,
                    0.0,
                    seed,
                );
                let m = mean_iterate(&t.iterates, half);
                naive_mean += m / n;
                naive_bias += (m - 1.0).abs() / n;
            }
            let cfg = ExperimentConfig {
                task: TaskKind::Counterexample,
                clients: 1,
                participants: 1,
                rounds: opts.rounds,
                learning_rate: LearningRate::Fixed(opts.learning_rate),
                mode: Mode::DoCoFL,
                anchor_rate: opts.anchor_rate,
                queue: opts.queue,
                anchor: CompressorSpec::Identity,
                correction: CompressorSpec::TwoPoint { omega },
                uplink: CompressorSpec::Identity,
                output: None,
                ..ExperimentConfig::default()
            };
            let docofl_bias = run_seeds(&cfg, &opts.seeds)?
                .iter()
                .map(|r| r.bias.expect("counterexample runs report bias"))
                .sum::<f64>()
                / n;
            Ok(CounterexampleRow {
                omega,
                naive_mean,
                naive_bias,
                naive_fixed_point: naive_fixed_point(omega),
                residual_at_mean: two_point_residual(naive_mean, omega),
                residual_at_optimum: two_point_residual(1.0, omega),
                docofl_bias,
            })
        })
        .collect()
}

pub fn write_counterexample_csv<W: Write>(
    rows: &[CounterexampleRow],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "omega",
        "naive_mean",
        "naive_bias",
        "naive_fixed_point",
        "residual_at_mean",
        "residual_at_optimum",
        "docofl_bias",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record(
            [
                r.omega,
                r.naive_mean,
                r.naive_bias,
                r.naive_fixed_point,
                r.residual_at_mean,
                r.residual_at_optimum,
                r.docofl_bias,
            ]
            .map(|v| v.to_string()),
        )
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditParams {
    pub clients: usize,
    pub participants: usize,
    pub rounds: u64,
    pub policy: PolicyKind,
    pub strong_delay: u64,
    pub weak_delay: u64,
    pub strong_fraction: f64,
    pub seed: u64,
    /// Also write the schedule as CSV.
    pub export: Option<PathBuf>,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            clients: 50,
            participants: 5,
            rounds: 20_000,
            policy: PolicyKind::TwoTier,
            strong_delay: 1,
            weak_delay: 5,
            strong_fraction: 0.5,
            seed: 0,
            export: None,
        }
    }
}

/// Builds the schedule and audits participation frequencies after its warmup.
pub fn schedule_audit_cmd(p: &AuditParams) -> Result<UniformityReport, HarnessError> {
    let cfg = ExperimentConfig {
        clients: p.clients,
        participants: p.participants,
        rounds: p.rounds,
        policy: p.policy,
        strong_delay: p.strong_delay,
        weak_delay: p.weak_delay,
        strong_fraction: p.strong_fraction,
        seed: p.seed,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let schedule = build_schedule(&cfg)?;
    if let Some(path) = &p.export {
        schedule.export_csv(path)?;
    }
    Ok(audit_uniformity(&schedule, schedule.warmup())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvRow {
    pub anchor_rate: u64,
    pub queue: usize,
    pub kv: u64,
    pub final_loss: f64,
    pub last_decile_loss: f64,
    /// Mean over rounds of the per-round mean `||w_t - y||`.
    pub mean_corr_norm: f64,
    pub fingerprint: String,
}

/// Runs the template at every `(K, V)` pair, in parallel.
///
/// With an output directory each cell writes into `k{K}_v{V}/` below it.
/// Rows are ordered by `K`, then `V`, as given.
pub fn kv_sweep(
    template: &ExperimentConfig,
    ks: &[u64],
    vs: &[usize],
) -> Result<Vec<KvRow>, HarnessError> {
    template.validate()?;
    let grid: Vec<(u64, usize)> = ks
        .iter()
        .flat_map(|&k| vs.iter().map(move |&v| (k, v)))
        .collect();
    grid.par_iter()
        .map(|&(k, v)| {
            let cfg = ExperimentConfig {
                anchor_rate: k,
                queue: v,
                output: template
                    .output
                    .as_ref()
                    .map(|o| o.join(format!("k{k}_v{v}"))),
                ..template.clone()
            };
            let r = run(&cfg)?;
            let rows = &r.engine.rows;
            let mean_corr_norm =
                rows.iter().map(|m| m.mean_corr_norm).sum::<f64>() / rows.len() as f64;
            Ok(KvRow {
                anchor_rate: k,
                queue: v,
                kv: k * v as u64,
                final_loss: r.summary.final_loss,
                last_decile_loss: r.summary.last_decile_loss,
                mean_corr_norm,
                fingerprint: r.fingerprint,
            })
        })
        .collect()
}

pub fn write_kv_csv<W: Write>(rows: &[KvRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "anchor_rate",
        "queue",
        "kv",
        "final_loss",
        "last_decile_loss",
        "mean_corr_norm",
        "fingerprint",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.anchor_rate.to_string(),
            r.queue.to_string(),
            r.kv.to_string(),
            r.final_loss.to_string(),
            r.last_decile_loss.to_string(),
            r.mean_corr_norm.to_string(),
            r.fingerprint.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_rows() {
        let rows = counterexample_cmd(&CounterexampleOptions {
            omegas: vec![0.0, 0.25, 0.5],
            rounds: 6000,
            seeds: vec![1, 2],
            ..CounterexampleOptions::default()
        })
        .unwrap();
        assert!(rows[0].naive_bias < 1e-6 && rows[0].docofl_bias < 1e-6);
        assert!(rows[1].naive_bias <= rows[2].naive_bias);
        for r in &rows[1..] {
            assert!(r.residual_at_optimum > 0.0);
            assert!((r.residual_at_optimum - r.omega / 2.0).abs() < 1e-12);
            assert!((r.naive_mean - r.naive_fixed_point).abs() < 0.02, "{r:?}");
        }
        let mut buf = Vec::new();
        write_counterexample_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn audit_defaults_pass() {
        let report = schedule_audit_cmd(&AuditParams {
            rounds: 4000,
            ..AuditParams::default()
        })
        .unwrap();
        assert!(report.within_sigma(4.0), "{report:?}");
    }

    #[test]
    fn sweep_cell_matches_single_run() {
        let template = ExperimentConfig {
            clients: 10,
            participants: 3,
            rounds: 40,
            dim: 6,
            samples_per_client: 10,
            ..ExperimentConfig::default()
        };
        let rows = kv_sweep(&template, &[1, 5], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].anchor_rate, rows[0].queue), (1, 1));
        let single = run(&ExperimentConfig {
            anchor_rate: 1,
            queue: 1,
            ..template
        })
        .unwrap();
        assert_eq!(rows[0].final_loss, single.summary.final_loss);
        assert_eq!(rows[0].fingerprint, single.fingerprint);
    }
}
