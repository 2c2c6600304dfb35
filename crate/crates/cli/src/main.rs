//! `sonopose`: command-line entry point for the benchmark toolkit.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

mod commands;
mod config;
mod objective;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{BenchCmd, Context, EvalCmd, HpoCmd, PreprocessCmd, ReportCmd, SynthCmd, TrainCmd};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", bullet(.0))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

fn bullet(items: &[String]) -> String {
    items.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML config file; its keys override the defaults listed below.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=10`. Repeatable;
    /// applied in order after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(short, long, env = "SONOPOSE_OUT", default_value = "sonopose-out")]
    out: PathBuf,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(short, long, default_value_t = 1)]
    jobs: usize,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset in the on-disk recording layout.
    Synth(Common),
    /// Convert recordings into network inputs for each modality.
    Preprocess(Common),
    /// Train one model on one session and save its checkpoint.
    Train(Common),
    /// Evaluate a saved checkpoint on one split of one session.
    Eval(Common),
    /// Run a TPE or random-search study over a search space.
    Hpo(Common),
    /// Run the intra-session benchmark grid.
    Bench(Common),
    /// Re-render a saved benchmark report.
    Report(Common),
}

/// Ultrasound hand-pose benchmark toolkit.
#[derive(Debug, Parser)]
#[command(name = "sonopose", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

const DATA_KEYS: [&str; 1] = ["data.path"];
const TRAIN_KEYS: [&str; 2] = ["train.scheduler.gamma", "train.scheduler.step_size"];
const BANDPASS_KEYS: [&str; 3] = [
    "preprocess.bandpass.low_hz",
    "preprocess.bandpass.high_hz",
    "preprocess.bandpass.order",
];
const MODEL_KEYS: [&str; 3] = ["model.preset", "model.spec", "model.file"];

/// Keys without a default value, per subcommand.
fn optional_keys(name: &str) -> Vec<String> {
    let mut keys: Vec<&str> = Vec::new();
    match name {
        "synth" => keys.push("reflectors.patterns"),
        "preprocess" => {
            keys.extend(DATA_KEYS);
            keys.extend(BANDPASS_KEYS);
        }
        "train" | "eval" => {
            keys.extend(DATA_KEYS);
            keys.extend(BANDPASS_KEYS);
            if name == "train" {
                keys.extend(TRAIN_KEYS);
                keys.extend(MODEL_KEYS);
            }
        }
        "hpo" => {
            return DATA_KEYS
                .iter()
                .chain(&TRAIN_KEYS)
                .chain(&BANDPASS_KEYS)
                .chain(&MODEL_KEYS)
                .map(|k| format!("objective.{k}"))
                .collect()
        }
        "bench" => {
            keys.extend(DATA_KEYS);
            keys.extend(TRAIN_KEYS);
            keys.extend(BANDPASS_KEYS);
        }
        _ => {}
    }
    keys.into_iter().map(String::from).collect()
}

fn listing(name: &str) -> String {
    let opt = optional_keys(name);
    let opt: Vec<&str> = opt.iter().map(String::as_str).collect();
    let keys = match name {
        "synth" => config::key_listing::<SynthCmd>(&opt),
        "preprocess" => config::key_listing::<PreprocessCmd>(&opt),
        "train" => config::key_listing::<TrainCmd>(&opt),
        "eval" => config::key_listing::<EvalCmd>(&opt),
        "hpo" => config::key_listing::<HpoCmd>(&opt),
        "bench" => config::key_listing::<BenchCmd>(&opt),
        "report" => config::key_listing::<ReportCmd>(&opt),
        other => unreachable!("unknown subcommand {other}"),
    };
    format!(
        "{keys}\nSetting a `kind` key replaces its table, so set `kind` before the\nvariant's other keys. Relative paths resolve against the config file's\ndirectory."
    )
}

pub const SUBCOMMANDS: [&str; 7] = ["synth", "preprocess", "train", "eval", "hpo", "bench", "report"];

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for name in SUBCOMMANDS {
        cmd = cmd.mut_subcommand(name, |c| c.after_help(listing(name)));
    }
    cmd
}

fn load<T: Serialize + DeserializeOwned + Default>(name: &str, common: &Common) -> Result<T, CliError> {
    let opt = optional_keys(name);
    let opt: Vec<&str> = opt.iter().map(String::as_str).collect();
    config::load(common.config.as_deref(), &common.sets, &opt)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.cmd {
        Cmd::Synth(c) => ("synth", c),
        Cmd::Preprocess(c) => ("preprocess", c),
        Cmd::Train(c) => ("train", c),
        Cmd::Eval(c) => ("eval", c),
        Cmd::Hpo(c) => ("hpo", c),
        Cmd::Bench(c) => ("bench", c),
        Cmd::Report(c) => ("report", c),
    };
    let ctx = Context {
        out: common.out.clone(),
        base_dir: common
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default(),
        exec: sonopose::Execution::from_jobs(common.jobs),
        verbose: common.verbose,
    };
    let jobs = common.jobs;
    sonopose::par::with_jobs(jobs, || match name {
        "synth" => commands::synth(load(name, common)?, &ctx),
        "preprocess" => commands::preprocess_cmd(load(name, common)?, &ctx),
        "train" => commands::train_cmd(load(name, common)?, &ctx),
        "eval" => commands::eval_cmd(load(name, common)?, &ctx),
        "hpo" => commands::hpo_cmd(load(name, common)?, &ctx),
        "bench" => commands::bench_cmd(load(name, common)?, &ctx),
        _ => commands::report_cmd(load(name, common)?, &ctx),
    })
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
