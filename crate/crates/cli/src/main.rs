use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use fedlora::aggregation::Method;
use fedlora::config::{ConfigError, FedConfig};
use fedlora::fedsim::run_experiment;
use fedlora::metrics::{write_csv, write_json};
use fedlora::presets::{run_preset, Preset, DEFAULT_SEEDS};

const CONFIG_EXIT: u8 = 1;
const RUNTIME_EXIT: u8 = 2;

/// Federated LoRA aggregation simulator.
#[derive(Debug, Parser)]
#[command(name = "fedlora", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write <method>-seed<seed>.csv and .json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Aggregation method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named preset over several seeds.
    Preset {
        /// challenge1 | challenge2 | compare | lambda-sweep | rank-sweep | hetero | comm-cost
        name: Preset,
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
    },
    /// Parse and validate a config file, then print it with defaults filled in.
    ValidateConfig { path: PathBuf },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "FEDLORA_OUT_DIR", default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Record wall-clock columns.
    #[arg(long)]
    timing: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl Common {
    fn config(&self) -> Result<FedConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => FedConfig::load(path)?,
            None => FedConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.rank {
            cfg.rank = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        cfg.timing |= self.timing;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, method, seed } => {
            let mut cfg = common.config()?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let out = run_experiment(&cfg).map_err(runtime)?;
            create_dir(&common.out)?;
            let stem = format!("{}-seed{}", cfg.method, cfg.seed);
            let csv = common.out.join(format!("{stem}.csv"));
            write_csv(&out.records, cfg.num_domains, &csv).map_err(runtime)?;
            write_json(&out.summary, &out.records, &common.out.join(format!("{stem}.json"))).map_err(runtime)?;
            let s = &out.summary;
            println!(
                "{stem}: accuracy {:.4} -> {:.4}, test loss {:.4}, {}",
                s.initial_average_accuracy,
                s.final_average_accuracy,
                s.final_test_loss,
                csv.display()
            );
        }
        Command::Preset { name, common, seeds } => {
            let cfg = common.config()?;
            cfg.validate()?;
            create_dir(&common.out)?;
            let report = run_preset(name, &cfg, &seeds, &common.out).map_err(runtime)?;
            println!("{:<24} {:>10} {:>10}", "variant", "accuracy", "test_loss");
            for m in &report.medians {
                println!(
                    "{:<24} {:>10.4} {:>10.4}",
                    m.variant, m.median_final_average_accuracy, m.median_final_test_loss
                );
            }
            println!("medians over {} seed(s); output in {}", seeds.len(), report.dir.display());
        }
        Command::ValidateConfig { path } => {
            let cfg = FedConfig::load(&path)?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn command() -> clap::Command {
    let keys = format!("Config keys (TOML, all optional):\n{}", FedConfig::help_table());
    Cli::command()
        .after_help(keys.clone())
        .mut_subcommand("run", |c| c.after_help(keys.clone()))
        .mut_subcommand("preset", |c| c.after_help(keys.clone()))
}

fn main() -> ExitCode {
    let parsed = command().try_get_matches().and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(CONFIG_EXIT),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(CONFIG_EXIT)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(RUNTIME_EXIT)
        }
    }
}
