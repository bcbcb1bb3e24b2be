//! `latepool`: generate synthetic feature datasets, train and ablate pooling
//! heads, run gradient checks and print parameter/FLOP profiles.
//!
//! Exit status is 0 on success, 1 when the input (arguments, config, dataset
//! file contents) is invalid and 2 when a run fails. Failures print a single
//! `error[validation]: ...` or `error[runtime]: ...` line on stderr.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use latepool::data::TaskKind;
use latepool::suites::Scope;

use config::{apply_override, decode, load_document, ProfileConfig, RunConfig};

/// Marks an error as caused by invalid input.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "latepool", version, about = "Late temporal pooling heads over 3D-CNN features")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Order,
    Bag,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Heads,
    End2end,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic TPF1 dataset.
    Gen {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one head; writes `metrics.csv` in the output directory.
    Train(Overrides),
    /// Train several heads under one seed; writes `ablation.csv` and `ablation.txt`.
    Ablate(Overrides),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter and FLOP reports; writes `profile.csv` and `profile.txt`.
    Profile {
        #[command(flatten)]
        overrides: Overrides,
        /// Built-in preset to include; repeatable. Defaults to all of them.
        #[arg(long = "preset")]
        presets: Vec<String>,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(e: anyhow::Error) -> Failure {
    let invalid = e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some()
            || c.downcast_ref::<latepool::Error>().is_some_and(latepool::Error::is_validation)
            || c.downcast_ref::<serde_json::Error>().is_some()
    });
    if invalid {
        Failure::Validation(e)
    } else {
        Failure::Runtime(e)
    }
}

fn document(o: &Overrides) -> Result<serde_json::Value> {
    let mut doc = load_document(o.config.as_deref())?;
    if !doc.is_object() {
        anyhow::bail!(Invalid("config must be a JSON object".into()));
    }
    for s in &o.set {
        apply_override(&mut doc, s)?;
    }
    if let Some(seed) = o.seed {
        apply_override(&mut doc, &format!("seed={seed}"))?;
    }
    if let Some(out) = &o.out {
        doc["out"] = serde_json::Value::String(out.display().to_string());
    }
    Ok(doc)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { task, n, t, d, seed, out } => {
            let task = match task {
                TaskArg::Order => TaskKind::Order,
                TaskArg::Bag => TaskKind::Bag,
            };
            commands::gen(task, n, t, d, seed, &out)?;
        }
        Cmd::Train(o) => {
            let cfg: RunConfig = decode(document(&o)?, "config")?;
            commands::train_cmd(&cfg)?;
        }
        Cmd::Ablate(o) => {
            let cfg: RunConfig = decode(document(&o)?, "config")?;
            commands::ablate_cmd(&cfg)?;
        }
        Cmd::Gradcheck { scope, seeds, seed } => {
            let scopes = match scope {
                ScopeArg::Ops => vec![Scope::Ops],
                ScopeArg::Heads => vec![Scope::Heads],
                ScopeArg::End2end => vec![Scope::End2end],
                ScopeArg::All => vec![Scope::Ops, Scope::Heads, Scope::End2end],
            };
            if !commands::gradcheck_cmd(&scopes, seeds, seed)? {
                anyhow::bail!("gradient check failed for at least one component");
            }
        }
        Cmd::Profile { overrides, presets } => {
            let mut cfg: ProfileConfig = decode(document(&overrides)?, "config")?;
            cfg.presets.extend(presets);
            commands::profile_cmd(&cfg)?;
        }
    }
    Ok(())
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[validation]: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command).map_err(classify) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error[validation]: {}", one_line(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error[runtime]: {}", one_line(&e));
            ExitCode::from(2)
        }
    }
}
