//! `fetopo` command-line entry point.
//!
//! Every command writes into `<out>/<command>-seed<seed>/` and leaves the
//! resolved configuration there as `run_config.json`.

mod commands;
mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fetopo::synth::CohortFormats;
use fetopo::topology::TopologyDoc;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "fetopo",
    version,
    about = "EEG band-power graph classifier toolkit"
)]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for parallel regions.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Do not fail on recoverable data errors.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Tgam,
    Both,
}

#[derive(Debug, clap::Args)]
struct ModelArgs {
    /// Feature windows from `preprocess`.
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Topology JSON replacing the built-in graph.
    #[arg(long)]
    topology: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode a TGAM byte stream into samples and a frame summary.
    Decode { input: PathBuf },
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Turn recordings into feature windows.
    Preprocess {
        /// Cohort directory; the configured cohort is generated in memory when absent.
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Train one model per subject on a stratified split.
    Train {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate trained models on their held-out windows.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Output directory of `train`.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Score whole recordings by their mean window probability.
        #[arg(long)]
        record_level: bool,
        /// Accept checkpoints trained on a different topology.
        #[arg(long)]
        force: bool,
    },
    /// Leave-one-subject-out cross-validation.
    Loso {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Edge-mask explanations for trained models.
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Decode { .. } => "decode",
            Command::Synth { .. } => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Loso { .. } => "loso",
            Command::Explain { .. } => "explain",
        }
    }
}

fn load_topology_doc(path: &Path) -> Result<TopologyDoc, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) -> Result<(), CliError> {
    if let Some(w) = &m.windows {
        cfg.inputs.windows = Some(w.clone());
    }
    if let Some(t) = &m.topology {
        cfg.topology = Some(load_topology_doc(t)?);
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.command = cli.command.name().to_string();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.lenient |= cli.lenient;
    cfg.propagate_seed();
    match &cli.command {
        Command::Decode { input } => cfg.inputs.input = Some(input.clone()),
        Command::Synth { format } => {
            if let Some(f) = format {
                cfg.formats = match f {
                    Format::Csv => CohortFormats {
                        csv: true,
                        tgam: false,
                    },
                    Format::Tgam => CohortFormats {
                        csv: false,
                        tgam: true,
                    },
                    Format::Both => CohortFormats {
                        csv: true,
                        tgam: true,
                    },
                };
            }
        }
        Command::Preprocess { cohort } => {
            if let Some(c) = cohort {
                cfg.inputs.cohort = Some(c.clone());
            }
        }
        Command::Train { model } | Command::Loso { model } => apply_model_args(&mut cfg, model)?,
        Command::Eval {
            model,
            models,
            record_level,
            force,
        } => {
            apply_model_args(&mut cfg, model)?;
            if let Some(m) = models {
                cfg.inputs.models = Some(m.clone());
            }
            cfg.record_level |= record_level;
            cfg.force |= force;
        }
        Command::Explain {
            model,
            models,
            force,
        } => {
            apply_model_args(&mut cfg, model)?;
            if let Some(m) = models {
                cfg.inputs.models = Some(m.clone());
            }
            cfg.force |= force;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = resolve(cli)?;
    let out = cli.out.join(format!("{}-seed{}", cfg.command, cfg.seed));
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let rc = out.join("run_config.json");
    fs::write(&rc, cfg.to_json()).map_err(|e| CliError::io(&rc, e))?;
    match cli.command {
        Command::Decode { .. } => commands::decode(&cfg, &out),
        Command::Synth { .. } => commands::synth(&cfg, &out),
        Command::Preprocess { .. } => commands::preprocess(&cfg, &out),
        Command::Train { .. } => commands::train(&cfg, &out),
        Command::Eval { .. } => commands::eval(&cfg, &out),
        Command::Loso { .. } => commands::loso(&cfg, &out),
        Command::Explain { .. } => commands::explain(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
