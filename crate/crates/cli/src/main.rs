use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hierctl_cli::{run, Command, RunOptions, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "hierctl", version, about = "Leader-follower control of degenerate Kolmogorov equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Scenario file (TOML). Defaults to the built-in scenario.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,

    /// Output directory for summary.json and fields/.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    /// Skip the binary and CSV field dumps.
    #[arg(long, global = true)]
    no_fields: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Follower best response to the scenario's fixed leader control.
    Follower,
    /// Full leader-follower solve through the dual problem.
    Stackelberg,
    /// Sweep alpha over the scenario's factors of the target norm.
    SweepAlpha,
    /// Monte Carlo against the backward equation.
    FkCheck,
    /// Built-in consistency checks on the trivial scenario.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let command = match cli.command {
        Cmd::Follower => Command::Follower,
        Cmd::Stackelberg => Command::Stackelberg,
        Cmd::SweepAlpha => Command::SweepAlpha,
        Cmd::FkCheck => Command::FkCheck,
        Cmd::Selftest => Command::Selftest,
    };
    let opts = RunOptions {
        scenario: cli.scenario,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        write_fields: !cli.no_fields,
    };
    let outcome = run(command, &opts);
    if outcome.exit_code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("error: {}", outcome.message);
    }
    if let Some(p) = &outcome.summary_path {
        println!("summary: {}", p.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
