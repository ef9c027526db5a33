//! Command-line front end.
//!
//! Every command writes into its output directory the artifacts, the resolved
//! `config.toml`, and `manifest.sha256` listing a hash of every file.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::ConfigError;
use crate::evaluation::{emit_csv, metrics, simulate_paths, CsvMeta, PathEnsemble};
use crate::nets::Checkpoint;
use crate::oracle::{self, DiscreteGame};
use crate::presets;
use crate::store::write_atomic;
use crate::trainer::{write_loss_csv, Trainer};

#[derive(Debug, Parser)]
#[command(name = "ocnash", about = "Nash-DQN for offset-credit markets", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus the loss history.
    Train(Common),
    /// Roll out a checkpoint and store the path ensemble.
    Simulate(Common),
    /// Summary statistics and CSV bands from a checkpoint or a path ensemble.
    Metrics(Common),
    /// Brute-force Nash / dynamic programming checks of a checkpoint.
    OracleCheck(Common),
    /// List the built-in presets.
    PresetList,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset (see `preset-list`).
    #[arg(long)]
    preset: Option<String>,
    /// Seed for training and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Checkpoint to read.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Path ensemble to read (metrics only).
    #[arg(long)]
    paths: Option<PathBuf>,
    /// Print training progress every this many epochs.
    #[arg(long, default_value_t = 0)]
    progress: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => CliError::Validation(format!("cannot read config: {io}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Split `--section.field=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        match arg.strip_prefix("--") {
            Some(body) if body.split('=').next().is_some_and(|key| key.contains('.')) => {
                overrides.push(body.to_string())
            }
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Run with process arguments (program name first); returns the exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let mut stdout = std::io::stdout();
    match run_with(args, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_with<I: IntoIterator<Item = String>>(args: I, out: &mut dyn Write) -> Result<(), CliError> {
    let (args, overrides) = split_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(out, "{e}").map_err(runtime)?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Validation(e.to_string())),
    };
    match cli.command {
        Command::PresetList => {
            for name in presets::NAMES {
                writeln!(out, "{name}").map_err(runtime)?;
            }
            Ok(())
        }
        Command::Train(c) => train(&c, &overrides, out),
        Command::Simulate(c) => simulate(&c, &overrides, out),
        Command::Metrics(c) => metrics_cmd(&c, &overrides, out),
        Command::OracleCheck(c) => oracle_check(&c, &overrides, out),
    }
}

fn set_threads(common: &Common) {
    if let Some(n) = common.threads {
        // A pool may already exist when several commands run in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Config from `--config`, `--preset`, the checkpoint's directory, or the default preset.
fn resolve_config(common: &Common, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let sibling = common
        .checkpoint
        .as_ref()
        .or(common.paths.as_ref())
        .and_then(|p| p.parent().map(|d| d.join("config.toml")))
        .filter(|p| p.exists());
    let config = common.config.clone().or(if common.preset.is_none() { sibling } else { None });
    let mut cfg = ExperimentConfig::resolve(config.as_deref(), common.preset.as_deref(), overrides)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.net.seed = seed;
        cfg.eval.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, sub: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.eval.out_dir).join(sub))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Write the resolved config and a manifest of every regular file in `dir`.
fn finish_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_atomic(&dir.join("config.toml"), cfg.to_toml_string().as_bytes()).map_err(runtime)?;
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(runtime)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.sha256" && !n.starts_with('.'))
        .collect();
    names.sort();
    let mut manifest = String::new();
    for name in names {
        let bytes = std::fs::read(dir.join(&name)).map_err(runtime)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        manifest.push_str(&format!("{hex}  {name}\n"));
    }
    write_atomic(&dir.join("manifest.sha256"), manifest.as_bytes()).map_err(runtime)
}

fn load_checkpoint(common: &Common, cfg: &ExperimentConfig) -> Result<Checkpoint, CliError> {
    let path = common
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Validation("--checkpoint is required".into()))?;
    if !path.exists() {
        return Err(CliError::Validation(format!("missing checkpoint {}", path.display())));
    }
    let ckpt = Checkpoint::load(path).map_err(runtime)?;
    let market = ckpt.online.market();
    if market.config() != &cfg.market || market.classes() != cfg.classes.as_slice() {
        return Err(CliError::Validation(
            "checkpoint market does not match the resolved config".into(),
        ));
    }
    Ok(ckpt)
}

fn train(common: &Common, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    set_threads(common);
    let cfg = resolve_config(common, overrides)?;
    let dir = out_dir(common, &cfg, "train");
    prepare_dir(&dir)?;
    let market = cfg.market().map_err(|e| CliError::Validation(e.to_string()))?;
    let mut trainer = Trainer::new(market, cfg.net.clone(), cfg.train.clone()).map_err(runtime)?;
    let every = common.progress;
    trainer
        .run(|r| {
            if every > 0 && (r.epoch + 1) % every == 0 {
                eprintln!(
                    "epoch {:>6}  q_loss {:.4e}  clearing {:.4e}  varphi {:.4e}",
                    r.epoch + 1,
                    r.q_loss,
                    r.clearing_loss,
                    r.varphi
                );
            }
        })
        .map_err(runtime)?;
    trainer.checkpoint().save(&dir.join("checkpoint.bin")).map_err(runtime)?;
    let meta = format!("config_hash={} seed={}", cfg.hash(), cfg.train.seed);
    write_loss_csv(trainer.history(), &meta, &dir.join("loss.csv")).map_err(runtime)?;
    finish_dir(&dir, &cfg)?;
    writeln!(out, "wrote {}", dir.display()).map_err(runtime)?;
    Ok(())
}

fn simulate(common: &Common, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    set_threads(common);
    let cfg = resolve_config(common, overrides)?;
    let ckpt = load_checkpoint(common, &cfg)?;
    let dir = out_dir(common, &cfg, "simulate");
    prepare_dir(&dir)?;
    let market = ckpt.online.market().clone();
    let ens = simulate_paths(&market, &ckpt.online, cfg.eval.num_paths, cfg.eval.seed, cfg.eval.generation)
        .map_err(runtime)?;
    ens.save(&dir.join("paths.bin")).map_err(runtime)?;
    finish_dir(&dir, &cfg)?;
    writeln!(out, "wrote {}", dir.display()).map_err(runtime)?;
    Ok(())
}

fn metrics_cmd(common: &Common, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    set_threads(common);
    let cfg = resolve_config(common, overrides)?;
    let market = cfg.market().map_err(|e| CliError::Validation(e.to_string()))?;
    let ens = match (&common.paths, &common.checkpoint) {
        (Some(p), _) => {
            if !p.exists() {
                return Err(CliError::Validation(format!("missing path ensemble {}", p.display())));
            }
            PathEnsemble::load(p).map_err(runtime)?
        }
        (None, Some(_)) => {
            let ckpt = load_checkpoint(common, &cfg)?;
            simulate_paths(&market, &ckpt.online, cfg.eval.num_paths, cfg.eval.seed, cfg.eval.generation)
                .map_err(runtime)?
        }
        (None, None) => return Err(CliError::Validation("need --checkpoint or --paths".into())),
    };
    let dir = out_dir(common, &cfg, "metrics");
    prepare_dir(&dir)?;
    let m = metrics(&ens, &market).map_err(|e| CliError::Validation(e.to_string()))?;
    let meta = CsvMeta {
        config_hash: cfg.hash(),
        seed: ens.seed,
    };
    emit_csv(&ens, &m, &market, &meta, cfg.eval.display_submissions, &dir).map_err(runtime)?;
    finish_dir(&dir, &cfg)?;
    for a in &m {
        writeln!(
            out,
            "agent {} ({}): mean P&L {:.2}  TE {:.2}  traded {:.2}  generated {:.2}  benchmark {:.2}",
            a.agent + 1,
            a.label,
            a.mean_pnl,
            a.tail_expectation,
            a.mean_traded,
            a.mean_generated,
            a.benchmark
        )
        .map_err(runtime)?;
    }
    Ok(())
}

fn oracle_check(common: &Common, overrides: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    set_threads(common);
    let cfg = resolve_config(common, overrides)?;
    let market = cfg.market().map_err(|e| CliError::Validation(e.to_string()))?;
    let setup = DiscreteGame::from_config(market.clone(), &cfg.oracle).map_err(|e| CliError::Validation(e.to_string()))?;
    let state = market.initial_state();
    let dir = out_dir(common, &cfg, "oracle");
    prepare_dir(&dir)?;
    let meta = format!("config_hash={} seed={}", cfg.hash(), cfg.eval.seed);

    let nash = if market.num_agents() == 1 {
        let dp = oracle::single_agent_dp(&setup, &state, cfg.oracle.refinement_tolerance).map_err(runtime)?;
        writeln!(
            out,
            "dp value {:.4} (refined {:.4}), objective {:.4}",
            dp.value,
            dp.refined_value,
            dp.value + market.benchmark(0, 0.0)
        )
        .map_err(runtime)?;
        dp.solution
    } else {
        oracle::brute_force_nash(&setup, &state).map_err(runtime)?
    };
    let mut nash_csv = format!("# {meta}\nagent,value,objective\n");
    for (i, v) in nash.root_values.iter().enumerate() {
        nash_csv.push_str(&format!("{},{},{}\n", i + 1, v, v + market.benchmark(i, 0.0)));
    }
    write_atomic(&dir.join("oracle_values.csv"), nash_csv.as_bytes()).map_err(runtime)?;
    writeln!(out, "grid equilibria at the initial state: {}", nash.root_equilibria.len()).map_err(runtime)?;

    let report = match &common.checkpoint {
        Some(_) => {
            let ckpt = load_checkpoint(common, &cfg)?;
            let values = ckpt.online.values(std::slice::from_ref(&state)).remove(0);
            for (i, v) in values.iter().enumerate() {
                writeln!(
                    out,
                    "agent {}: learned value {:.4}, objective {:.4}",
                    i + 1,
                    v,
                    v + market.benchmark(i, 0.0)
                )
                .map_err(runtime)?;
            }
            oracle::exploitability(&ckpt.online, &setup, &state).map_err(runtime)?
        }
        None => oracle::exploitability(&nash, &setup, &state).map_err(runtime)?,
    };
    write_atomic(&dir.join("oracle_report.csv"), oracle::report_csv(&report, &meta).as_bytes()).map_err(runtime)?;
    for (i, e) in report.exploitability.iter().enumerate() {
        writeln!(out, "agent {}: exploitability {:.6}", i + 1, e).map_err(runtime)?;
    }
    finish_dir(&dir, &cfg)?;
    Ok(())
}
