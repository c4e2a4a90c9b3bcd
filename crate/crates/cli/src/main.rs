mod config;
mod fixture;
mod manifest;
mod report;
mod stages;
mod validate;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use manifest::{file_digest, sha256_hex, FileDigest, RunManifest, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "palmsight", version, about = "Palm clustering and site-association pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Minimum detection confidence.
    #[arg(long, global = true)]
    confidence: Option<f64>,
    #[arg(long, global = true)]
    min_cluster_size: Option<usize>,
    /// IDW radius in metres.
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// IDW distance-decay exponent.
    #[arg(long, global = true)]
    decay_w: Option<f64>,
    /// Bootstrap confidence level, e.g. 0.8.
    #[arg(long, global = true)]
    ci_level: Option<f64>,
    /// Score IDW against the enclosing cluster's members only.
    #[arg(long, global = true)]
    cluster_only: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load every configured input and report counts and errors as JSON.
    Validate,
    /// Cluster detections and associate sites with clusters.
    Cluster,
    /// Score sites and sampled control points.
    Idw,
    /// Bootstrap confidence intervals of mean IDW scores.
    Bootstrap,
    /// Per-cell palm and building counts and their rank correlation.
    GridCorr,
    /// Elevation subsets, GBIF baseline and rank tests.
    Elevation,
    /// Precision and recall of detections against labels.
    Deteval,
    /// Write a synthetic input bundle and config to --out.
    Synth,
    /// Run every stage in order.
    RunAll,
    /// Summarise existing stage outputs as JSON and SVG.
    Report,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::Cluster => "cluster",
            Command::Idw => "idw",
            Command::Bootstrap => "bootstrap",
            Command::GridCorr => "grid-corr",
            Command::Elevation => "elevation",
            Command::Deteval => "deteval",
            Command::Report => "report",
            _ => return None,
        })
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: flags.seed,
        out: flags.out.clone(),
        confidence: flags.confidence,
        min_cluster_size: flags.min_cluster_size,
        radius: flags.radius,
        decay_w: flags.decay_w,
        ci_level: flags.ci_level,
        cluster_only: flags.cluster_only,
    });
    Ok(cfg)
}

fn run_stages(cfg: RunConfig, names: &[&str], skip_missing: bool) -> Result<()> {
    cfg.validate()?;
    let mut inputs = Vec::new();
    for (name, path) in cfg.inputs.named() {
        if !path.exists() {
            bail!("input {name} not found: {}", path.display());
        }
        inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
    }
    let out = cfg.output_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let resolved = cfg.to_json();
    fs::write(out.join(CONFIG_FILE), &resolved)?;
    let mut manifest = RunManifest::open(&out, &sha256_hex(resolved.as_bytes()), palmsight_core::par::current_num_threads(), inputs);
    let mut ctx = stages::Context::new(cfg, out.clone());
    for name in names {
        let result = stages::run_stage(&mut ctx, name, skip_missing);
        match result {
            Ok(record) => manifest.record(record),
            Err(e) => {
                manifest.warnings.push(format!("{name}: failed: {e:#}"));
                manifest.write(&out)?;
                return Err(e);
            }
        }
    }
    manifest.write(&out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.flags.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth => {
            let dir = cli.flags.out.clone().unwrap_or_else(|| PathBuf::from("palmsight-synth"));
            fixture::write_bundle(&dir, cli.flags.seed.unwrap_or(0))?;
            println!("{}", dir.join("config.json").display());
        }
        Command::Validate => {
            let cfg = load_config(&cli.flags)?;
            let report = validate::validate(&cfg);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.ok {
                return Ok(ExitCode::from(2));
            }
        }
        Command::RunAll => run_stages(load_config(&cli.flags)?, &stages::STAGES, true)?,
        other => {
            let stage = other.stage().expect("stage command");
            run_stages(load_config(&cli.flags)?, &[stage], false)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
