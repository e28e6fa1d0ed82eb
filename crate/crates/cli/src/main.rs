//! `metaems` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use metaems::harness::{
    documented_keys, read_breakdown_csv, read_summary_csv, render_summary_text, run_experiment, write_reports,
    ExperimentConfig, HarnessError, JobOptions, Method, MethodToggles,
};
use metaems::seed::SeedTree;
use metaems::simulator::{generate_trace, write_trace_csv, ZoneTable};

/// Keys whose defaults are the published experimental settings.
const PUBLISHED: &[&str] = &[
    "n_source_buildings",
    "n_target_buildings",
    "zones",
    "agent.gamma",
    "agent.batch_size",
    "agent.lr_actor",
    "agent.lr_critic",
    "agent.tau",
    "agent.hidden_layers",
    "meta.t_theta",
    "meta.alpha_theta",
    "meta.alpha_phi",
    "meta.beta_theta",
    "meta.beta_phi",
    "meta.building_batch_size",
    "reward.mu",
    "reward.eta",
    "reward.window_w",
    "maml.epochs",
    "n_repeat_seeds",
];

fn key_help() -> String {
    let keys = documented_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Configuration keys (set in the --config file or with --set key=value; defaults of the quick profile):\n",
    );
    for (k, v) in keys {
        let tag = if PUBLISHED.contains(&k.as_str()) {
            "  [published]"
        } else if k == "episode_length" {
            "  [published: 8760, the paper profile]"
        } else {
            ""
        };
        s.push_str(&format!("  {k:<width$} = {v}{tag}\n"));
    }
    s.push_str("\nThe output directory falls back to $METAEMS_OUTPUT_DIR, then ./metaems-output.\n");
    s.push_str("Exit codes: 0 success, 1 configuration error, 2 runtime failure.");
    s
}

#[derive(Parser, Debug)]
#[command(name = "metaems", version, about = "Meta-reinforcement learning for building energy management")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML); `quick` or `paper` selects a built-in profile.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Override a config key, e.g. `--set meta.t_theta=20`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (overrides `master_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "METAEMS_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Parallel (zone, seed) jobs; defaults to the number of zones.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train one initialisation per (zone, seed) and save the checkpoints.
    MetaTrain,
    /// Adapt saved initialisations on the target buildings and score them.
    MetaTest {
        /// Directory holding the meta-train checkpoints.
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Run a single comparison method (the rule-based reference always runs).
    Baseline {
        /// rbc, no_control, random_init, pretrained, maml or rl_mpc.
        #[arg(long)]
        method: String,
    },
    /// Every enabled method, scored and reported.
    FullExperiment,
    /// Write a synthetic trace CSV for one zone.
    GenTraces {
        #[arg(long)]
        zone: u8,
        /// Hours to generate.
        #[arg(long, default_value_t = 8760)]
        length: usize,
        /// Trace file; defaults to `<output>/trace_zone<Z>_seed<S>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the text report of a finished run directory.
    Report {
        /// Run directory containing summary.csv.
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::command_with_keys().try_get_matches() {
        Ok(m) => match <Cli as clap::FromArgMatches>::from_arg_matches(&m) {
            Ok(c) => c,
            Err(e) => return usage_error(e),
        },
        Err(e) => return usage_error(e),
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn usage_error(e: clap::Error) -> ExitCode {
    let code = if e.use_stderr() { 1 } else { 0 };
    let _ = e.print();
    ExitCode::from(code)
}

impl Cli {
    fn command_with_keys() -> clap::Command {
        <Cli as clap::CommandFactory>::command().after_long_help(key_help())
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    let cfg = match c.config.as_deref() {
        None => ExperimentConfig::from_toml_with_overrides(&ExperimentConfig::quick().to_toml(), &overrides)?,
        Some(name) => match ExperimentConfig::preset(name) {
            Some(p) if !Path::new(name).exists() => ExperimentConfig::from_toml_with_overrides(&p.to_toml(), &overrides)?,
            _ => ExperimentConfig::load(Path::new(name), &overrides)?,
        },
    };
    Ok(cfg)
}

fn output_dir(c: &Common) -> PathBuf {
    c.output.clone().unwrap_or_else(|| PathBuf::from("metaems-output"))
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn only(method: Method) -> MethodToggles {
    MethodToggles {
        no_control: method == Method::NoControl,
        random_init: method == Method::RandomInit,
        pretrained: method == Method::Pretrained,
        maml: method == Method::Maml,
        rl_mpc: method == Method::RlMpc,
        metaems: method == Method::MetaEms,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let out = output_dir(c);
    if let Command::Report { input } = &cli.command {
        let summary = read_summary_csv(&input.join("summary.csv"))?;
        let bpath = input.join("breakdown.csv");
        let breakdown = if bpath.exists() { read_breakdown_csv(&bpath)? } else { Vec::new() };
        let text = render_summary_text(&summary, &breakdown);
        print!("{text}");
        if c.output.is_some() {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("summary.txt"), &text).context("writing summary.txt")?;
        }
        return Ok(());
    }

    let mut cfg = load_config(c)?;
    let mut opts = JobOptions::default();
    match &cli.command {
        Command::MetaTrain => {
            cfg.methods = only(Method::MetaEms);
            opts.train_only = true;
        }
        Command::MetaTest { checkpoints } => {
            if !checkpoints.is_dir() {
                return Err(Failure::Config(anyhow::anyhow!(
                    "checkpoint directory {} does not exist",
                    checkpoints.display()
                )));
            }
            cfg.methods = only(Method::MetaEms);
            opts.checkpoint_dir = Some(checkpoints.clone());
        }
        Command::Baseline { method } => {
            let m = Method::parse(method)
                .filter(|m| *m != Method::MetaEms)
                .ok_or_else(|| Failure::Config(anyhow::anyhow!("unknown baseline method `{method}`")))?;
            cfg.methods = only(m);
        }
        Command::FullExperiment => {}
        Command::GenTraces { zone, length, out: file } => {
            let table = ZoneTable::builtin();
            let profile = table.zone(*zone).map_err(|e| Failure::Config(e.into()))?;
            if *length == 0 {
                return Err(Failure::Config(anyhow::anyhow!("--length must be >= 1")));
            }
            let rows = generate_trace(
                profile,
                *length,
                1.0,
                1.0,
                &mut SeedTree::new(cfg.master_seed).named("trace").child(*zone as u64).rng(),
            )
            .context("generating trace")?;
            write_resolved(&cfg, &out)?;
            let path = file.clone().unwrap_or_else(|| out.join(format!("trace_zone{zone}_seed{}.csv", cfg.master_seed)));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_trace_csv(std::io::BufWriter::new(f), &rows).context("writing trace")?;
            log::info!("wrote {} rows to {}", rows.len(), path.display());
            return Ok(());
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    cfg.validate()?;
    write_resolved(&cfg, &out)?;
    let jobs = c.jobs.unwrap_or(cfg.zones.len());
    let record = run_experiment(&cfg, jobs, &opts)?;
    write_reports(&record, &out)?;
    if !record.scores.is_empty() {
        print!("{}", std::fs::read_to_string(out.join("summary.txt")).context("reading summary.txt")?);
    }
    log::info!("run {} finished in {:.1}s, outputs in {}", record.config_hash, record.wall_clock_s, out.display());
    Ok(())
}
