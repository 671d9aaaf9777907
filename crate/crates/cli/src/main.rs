//! `lts`: run learning-to-simulate experiments from config files or named
//! presets.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde::Serialize;

use lts_core::config::ExperimentConfig;
use lts_core::experiments::{self, PRESETS};
use lts_core::orchestrator::{self, TaskEnv};

/// Environment variable naming the directory outputs are written under.
const OUTPUT_ROOT_VAR: &str = "LTS_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "lts",
    version,
    about = "Learning to simulate: policy-gradient tuning of simulator parameters"
)]
struct Cli {
    /// Maximum number of worker threads used inside one run.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run {
        config: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the config's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Dotted-key override, e.g. `--set policy.learning_rate=2.0`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (default: `$LTS_OUTPUT_ROOT/<name>-seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named preset's protocol matrix and write its comparison table.
    Reproduce {
        preset: String,
        /// Shorten every run of the preset to this many iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Comma-separated seeds replacing the preset's own.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory (default: `$LTS_OUTPUT_ROOT/<preset>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the available presets.
    Presets,
}

/// Exit status for configuration errors; runtime failures use 1.
const EXIT_CONFIG: u8 = 2;

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.parallelism {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            iterations,
            overrides,
            out,
        } => run(&config, seed, iterations, overrides, out),
        Command::Reproduce {
            preset,
            iterations,
            seeds,
            out,
        } => reproduce(&preset, iterations, seeds, out),
        Command::ValidateConfig { config, overrides } => load_config(&config, &overrides).map(|cfg| {
            println!(
                "{}: ok ({} protocol, hash {})",
                config.display(),
                protocol_name(&cfg),
                cfg.hash()
            );
        }),
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn protocol_name(cfg: &ExperimentConfig) -> String {
    serde_json::to_value(cfg.protocol)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn load_config(path: &Path, overrides: &[String]) -> std::result::Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    ExperimentConfig::from_toml_with_overrides(&text, overrides)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::Config)
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// `git describe` of the working directory when available, otherwise the
/// package version.
fn code_version() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match git {
        Some(g) => format!("{pkg} ({g})"),
        None => pkg.to_string(),
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    seeds: Vec<u64>,
    code_version: String,
    started_at: String,
    finished_at: String,
    status: String,
    outputs: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(
    config: &Path,
    seed: Option<u64>,
    iterations: Option<usize>,
    mut overrides: Vec<String>,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = iterations {
        overrides.push(format!("iterations={t}"));
    }
    let cfg = load_config(config, &overrides)?;
    let started = now();
    let dir = out.unwrap_or_else(|| output_root().join(format!("{}-seed{}", cfg.name, cfg.seed)));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)?;

    let mut outputs = vec!["config.toml".to_string(), "history.csv".to_string()];
    fs::write(dir.join("config.toml"), cfg.to_toml_string())
        .context("writing config.toml")
        .map_err(Failure::Runtime)?;

    let result = (|| -> Result<()> {
        let env = TaskEnv::from_config(&cfg)?;
        let mut csv = BufWriter::new(File::create(dir.join("history.csv"))?);
        orchestrator::write_csv_header(&mut csv)?;
        csv.flush()?;
        let total = cfg.iterations;
        let history = orchestrator::run_in(&cfg, &env, &mut |record| {
            orchestrator::write_csv_row(&mut csv, record)?;
            csv.flush()?;
            eprintln!(
                "[{}/{}] mean reward {:.4}  best {:.4}",
                record.iteration + 1,
                total,
                record.mean_reward(),
                record.best_so_far
            );
            Ok(())
        })?;
        drop(csv);
        let summary = orchestrator::summarize(&cfg, &env, &history)?;
        write_json(&dir.join("summary.json"), &summary)?;
        outputs.push("summary.json".into());
        println!(
            "final reward {:.4}, best {:.4}, retrained test reward {:.4}",
            summary.final_reward, summary.best_reward, summary.retrain_test_reward
        );
        Ok(())
    })();

    outputs.push("manifest.json".into());
    let manifest = Manifest {
        command: "run".into(),
        config_hash: cfg.hash(),
        seed: Some(cfg.seed),
        seeds: vec![cfg.seed],
        code_version: code_version(),
        started_at: started,
        finished_at: now(),
        status: match &result {
            Ok(()) => "ok".into(),
            Err(e) => format!("failed: {e:#}"),
        },
        outputs,
    };
    write_json(&dir.join("manifest.json"), &manifest).map_err(Failure::Runtime)?;
    println!("outputs in {}", dir.display());
    result.map_err(Failure::Runtime)
}

fn reproduce(
    preset: &str,
    iterations: Option<usize>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let mut plan = experiments::plan(preset).map_err(|e| Failure::Config(e.into()))?;
    if let Some(t) = iterations {
        if t == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--iterations must be at least 1")));
        }
        experiments::shorten(&mut plan, t);
    }
    if let Some(s) = seeds {
        if s.is_empty() {
            return Err(Failure::Config(anyhow::anyhow!("--seeds must not be empty")));
        }
        plan.seeds = s;
    }
    let started = now();
    let dir = out.unwrap_or_else(|| output_root().join(preset));
    let result = (|| -> Result<Vec<String>> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut outputs = Vec::new();
        let mut write_failure = None;
        let report = experiments::run_plan(&plan, &mut |o| {
            let sub = format!("{}-seed{}", o.label.replace(' ', "_"), o.seed);
            eprintln!(
                "{sub}: final reward {:.4}, retrained test reward {:.4}",
                o.final_reward(),
                o.summary.retrain_test_reward
            );
            let res = (|| -> Result<()> {
                fs::create_dir_all(dir.join(&sub))?;
                let f = BufWriter::new(File::create(dir.join(&sub).join("history.csv"))?);
                orchestrator::write_history_csv(f, &o.history)?;
                write_json(&dir.join(&sub).join("summary.json"), &o.summary)?;
                fs::write(dir.join(&sub).join("config.toml"), o.config.to_toml_string())?;
                Ok(())
            })();
            match res {
                Ok(()) => {
                    for f in ["config.toml", "history.csv", "summary.json"] {
                        outputs.push(format!("{sub}/{f}"));
                    }
                }
                Err(e) => {
                    write_failure.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = write_failure {
            bail!(e);
        }
        fs::write(dir.join("table.csv"), report.to_csv())?;
        fs::write(dir.join("table.txt"), report.to_text())?;
        outputs.push("table.csv".into());
        outputs.push("table.txt".into());
        print!("{}", report.to_text());
        Ok(outputs)
    })();
    let (status, mut outputs) = match &result {
        Ok(o) => ("ok".to_string(), o.clone()),
        Err(e) => (format!("failed: {e:#}"), Vec::new()),
    };
    outputs.push("manifest.json".into());
    let hashes: Vec<String> = plan.variants.iter().map(|v| v.config.hash()).collect();
    let manifest = Manifest {
        command: format!("reproduce {preset}"),
        config_hash: hashes.join(","),
        seed: None,
        seeds: plan.seeds.clone(),
        code_version: code_version(),
        started_at: started,
        finished_at: now(),
        status,
        outputs,
    };
    if dir.exists() {
        write_json(&dir.join("manifest.json"), &manifest).map_err(Failure::Runtime)?;
    }
    result
        .map(|_| println!("outputs in {}", dir.display()))
        .map_err(Failure::Runtime)
}
