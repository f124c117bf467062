use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use sbnn_cli::config::KEYS;
use sbnn_cli::{parse_config, run, Command, ExperimentConfig};

const USAGE_ERROR: u8 = 2;

fn cli() -> clap::Command {
    let mut cmd = clap::Command::new("sbnn")
        .about("Train, evaluate and analyse spiking Bayesian neural networks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file; flags override it"),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set)
                .allow_hyphen_values(true)
                .help(*help),
        );
    }
    for c in Command::ALL {
        cmd = cmd.subcommand(clap::Command::new(c.name()).about(c.about()));
    }
    cmd
}

fn load_config(m: &ArgMatches) -> anyhow::Result<ExperimentConfig> {
    let text = match m.get_one::<PathBuf>("config") {
        Some(p) => fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading {}: {e}", p.display()))?,
        None => String::new(),
    };
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|(k, _)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let mut cfg = parse_config(&text, &overrides)?;
    if cfg.threads == 1 {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse().expect("subcommands come from Command::ALL");
    let cfg = match load_config(sub) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(command, &cfg) {
        Ok(outcome) => {
            println!("{}", outcome.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
