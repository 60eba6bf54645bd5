//! Command line for the structured Hammerstein-Wiener MPC toolkit.
//!
//! ```text
//! shwmpc <command> [--config <path>] [--out <dir>] [--seed <u64>]
//!                  [--set key=value]... [--check]
//! ```
//!
//! Commands: generate, train, solve, sweep, mpc, cbf, baseline.
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 a `--check` threshold failed.

mod commands;
mod config;
mod csvio;
mod modelfile;
mod report;

use commands::Ctx;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(String),
}

impl From<shwmpc_core::Error> for CliError {
    fn from(e: shwmpc_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::CheckFailed(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::CheckFailed(m) => m,
        }
    }
}

const USAGE: &str = "usage: shwmpc <command> [options]

commands:
  generate   integrate the synthetic plant and write dataset.csv
  train      identify the structured model from dataset.csv
  solve      solve one tracking problem with the trained model
  sweep      sweep the control law over a grid of initial outputs
  mpc        closed-loop receding-horizon simulation on the plant
  cbf        closed loop under the Riccati + barrier-filter controller
  baseline   fit the plain one-step network and sweep its control law

options:
  --config <path>    JSON configuration (defaults apply when omitted)
  --out <dir>        output directory (default: .)
  --seed <u64>       override the top-level seed
  --set key=value    override one config entry (dotted path, JSON value)
  --check            evaluate acceptance thresholds; exit 4 on failure
";

struct Args {
    command: String,
    config_path: Option<String>,
    out_dir: String,
    seed: Option<u64>,
    sets: Vec<(String, String)>,
    check: bool,
}

fn parse_args(argv: &[String]) -> Result<Args, CliError> {
    if argv.is_empty() {
        return Err(CliError::Config(format!("missing command\n{USAGE}")));
    }
    if argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        println!("{USAGE}");
        std::process::exit(0);
    }
    let command = argv[0].clone();
    let mut args = Args {
        command,
        config_path: None,
        out_dir: ".".into(),
        seed: None,
        sets: Vec::new(),
        check: false,
    };
    let mut i = 1;
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => {
                i += 1;
                args.config_path = Some(
                    argv.get(i)
                        .ok_or_else(|| CliError::Config("--config needs a path".into()))?
                        .clone(),
                );
            }
            "--out" => {
                i += 1;
                args.out_dir = argv
                    .get(i)
                    .ok_or_else(|| CliError::Config("--out needs a directory".into()))?
                    .clone();
            }
            "--seed" => {
                i += 1;
                let raw = argv
                    .get(i)
                    .ok_or_else(|| CliError::Config("--seed needs a value".into()))?;
                args.seed = Some(
                    raw.parse::<u64>()
                        .map_err(|_| CliError::Config(format!("--seed: \"{raw}\" is not a u64")))?,
                );
            }
            "--set" => {
                i += 1;
                let raw = argv
                    .get(i)
                    .ok_or_else(|| CliError::Config("--set needs key=value".into()))?;
                let (key, value) = raw
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("--set: \"{raw}\" lacks '='")))?;
                args.sets.push((key.to_string(), value.to_string()));
            }
            "--check" => args.check = true,
            other => {
                return Err(CliError::Config(format!("unknown option \"{other}\"\n{USAGE}")));
            }
        }
        i += 1;
    }
    Ok(args)
}

fn run() -> Result<(), CliError> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = parse_args(&argv)?;
    let (config, config_hash) =
        config::load_config(args.config_path.as_deref(), &args.sets, args.seed)?;

    let out_dir = std::path::PathBuf::from(&args.out_dir);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;

    let ctx = Ctx { config, config_hash, out_dir, check: args.check };
    match args.command.as_str() {
        "generate" => commands::cmd_generate(&ctx),
        "train" => commands::cmd_train(&ctx),
        "solve" => commands::cmd_solve(&ctx),
        "sweep" => commands::cmd_sweep(&ctx),
        "mpc" => commands::cmd_mpc(&ctx),
        "cbf" => commands::cmd_cbf(&ctx),
        "baseline" => commands::cmd_baseline(&ctx),
        other => Err(CliError::Config(format!("unknown command \"{other}\"\n{USAGE}"))),
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
