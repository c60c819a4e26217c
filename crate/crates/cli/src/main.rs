use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use docofl_core::harness::{
    codec_bench, counterexample_cmd, kv_sweep, run, schedule_audit_cmd, write_bench_csv,
    write_counterexample_csv, write_kv_csv, AuditParams, BenchOptions, CounterexampleOptions,
    Distribution, ExperimentConfig, HarnessError, PolicyKind, OUTPUT_DIR_ENV,
};

/// Simulator for anchor/correction downlink compression in federated learning.
#[derive(Debug, Parser)]
#[command(name = "docofl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment from a `key = value` config file.
    Run {
        config: PathBuf,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Mean NMSE and encode time per scheme, distribution, budget and dimension.
    CodecBench {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "identity,ecuq,sq,hsq,qsgd"
        )]
        families: Vec<String>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "lognormal,normal,uniform"
        )]
        distributions: Vec<Distribution>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        budgets: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "1024,16384")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight compression versus compressed corrections on the scalar counterexample.
    Counterexample {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25,0.5,0.75,1")]
        omegas: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        #[arg(long, default_value_t = 20_000)]
        rounds: u64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Participation-frequency audit of a scheduling policy.
    ScheduleAudit {
        #[arg(long, default_value_t = 50)]
        clients: usize,
        #[arg(long, default_value_t = 5)]
        participants: usize,
        #[arg(long, default_value_t = 20_000)]
        rounds: u64,
        /// `uniform` or `two_tier`.
        #[arg(long, default_value = "two_tier")]
        policy: String,
        #[arg(long, default_value_t = 1)]
        strong_delay: u64,
        #[arg(long, default_value_t = 5)]
        weak_delay: u64,
        #[arg(long, default_value_t = 0.5)]
        strong_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pass threshold in standard errors.
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        /// Also write the schedule as CSV.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Grid of runs over anchor rate K and queue capacity V.
    KvSweep {
        template: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        vs: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Reads a config file; `overrides` replace any line setting the same key.
fn load_config(path: &Path, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let key_of = |line: &str| -> Option<String> {
        let line = line.trim();
        (!line.starts_with('#'))
            .then(|| line.split_once('=').map(|(k, _)| k.trim().to_string()))
            .flatten()
    };
    let replaced: Vec<String> = overrides.iter().filter_map(|o| key_of(o)).collect();
    let mut merged: Vec<&str> = text
        .lines()
        .filter(|l| key_of(l).is_none_or(|k| !replaced.contains(&k)))
        .collect();
    merged.extend(overrides.iter().map(String::as_str));
    Ok(ExperimentConfig::parse(&merged.join("\n"))?)
}

/// Explicit path, else `$DOCOFL_OUTPUT_DIR/<default_name>`, else stdout.
fn sink(
    out: Option<PathBuf>,
    default_name: &str,
) -> anyhow::Result<(Box<dyn Write>, Option<PathBuf>)> {
    let path = out.or_else(|| {
        std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(default_name))
    });
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            Ok((Box::new(f), Some(p)))
        }
        None => Ok((Box::new(io::stdout().lock()), None)),
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let result = run(&cfg)?;
            print!("{}", result.summary_text());
            if let Some(p) = &result.metrics_path {
                println!("metrics {}", p.display());
            }
        }
        Command::CodecBench {
            families,
            distributions,
            budgets,
            dims,
            trials,
            seed,
            out,
        } => {
            let rows = codec_bench(&BenchOptions {
                families,
                distributions,
                budgets,
                dims,
                trials,
                seed,
            })?;
            let (w, path) = sink(out, "codec_bench.csv")?;
            write_bench_csv(&rows, w)?;
            if let Some(p) = path {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Counterexample {
            omegas,
            eta,
            rounds,
            seeds,
            out,
        } => {
            let rows = counterexample_cmd(&CounterexampleOptions {
                omegas,
                learning_rate: eta,
                rounds,
                seeds,
                ..CounterexampleOptions::default()
            })?;
            let (w, path) = sink(out, "counterexample.csv")?;
            write_counterexample_csv(&rows, w)?;
            if let Some(p) = path {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::ScheduleAudit {
            clients,
            participants,
            rounds,
            policy,
            strong_delay,
            weak_delay,
            strong_fraction,
            seed,
            sigma,
            export,
        } => {
            let policy = match policy.as_str() {
                "uniform" => PolicyKind::Uniform,
                "two_tier" => PolicyKind::TwoTier,
                other => {
                    return Err(HarnessError::Config {
                        line: None,
                        field: "policy".into(),
                        message: format!("`{other}`: expected uniform or two_tier"),
                    }
                    .into())
                }
            };
            let r = schedule_audit_cmd(&AuditParams {
                clients,
                participants,
                rounds,
                policy,
                strong_delay,
                weak_delay,
                strong_fraction,
                seed,
                export,
            })?;
            println!("rounds_audited {}", r.rounds);
            println!("expected {}", r.expected);
            println!("std_error {}", r.std_error);
            println!("max_deviation {}", r.max_deviation);
            println!("max_z {}", r.max_z);
            println!("chi_square {}", r.chi_square);
            println!("p_value {}", r.p_value);
            println!("within_{sigma}_sigma {}", r.within_sigma(sigma));
        }
        Command::KvSweep {
            template,
            ks,
            vs,
            out,
        } => {
            let cfg = load_config(&template, &[])?;
            let rows = kv_sweep(&cfg, &ks, &vs)?;
            let (w, path) = sink(out, "kv_sweep.csv")?;
            write_kv_csv(&rows, w)?;
            if let Some(p) = path {
                eprintln!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<HarnessError>()
                .map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
