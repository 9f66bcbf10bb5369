//! `crtc`: run the relay server, scripted clients, simulations and the
//! analysis tools. Exit codes: 0 success, 1 assertion or check failure,
//! 2 usage or I/O error.

mod analysis;
mod net;
mod script;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crtc_core::sim::{check_convergence, check_invariants, generate_random_scenario, parse_scenario, run};

#[derive(Parser, Debug)]
#[command(name = "crtc", version, about = "Collaborative real-time coding engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve a corpus to clients over TCP (one JSON message per line) and
    /// WebSocket (one message per text frame).
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long = "ui-port")]
        ui_port: Option<u16>,
        #[arg(long)]
        verbose: bool,
    },
    /// Run one client's part of a scenario against a live server.
    Client {
        #[arg(long)]
        server: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        script: PathBuf,
    },
    /// Replay a scenario or fuzz random ones in the in-memory simulator.
    Sim(SimArgs),
    /// Report buildability of files and directories, resolved as one project.
    Check {
        #[arg(required = false)]
        paths: Vec<PathBuf>,
    },
    /// Print each member's breakable set.
    Deps {
        #[arg(long)]
        corpus: PathBuf,
        element: Option<String>,
    },
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, conflicts_with_all = ["fuzz"], required_unless_present = "fuzz")]
    scenario: Option<PathBuf>,
    /// Print the full trace to stdout.
    #[arg(long)]
    trace: bool,
    /// Number of random scenarios to run.
    #[arg(long)]
    fuzz: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    clients: usize,
    #[arg(long, default_value_t = 50)]
    steps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Serve { corpus, port, ui_port, verbose } => net::serve(&corpus, port, ui_port, verbose),
        Command::Client { server, name, script } => script::run_client(&server, &name, &script),
        Command::Sim(args) => run_sim(&args),
        Command::Check { paths } => analysis::check(&paths),
        Command::Deps { corpus, element } => analysis::deps(&corpus, element.as_deref()),
    };
    ExitCode::from(code)
}

fn run_sim(args: &SimArgs) -> u8 {
    if let Some(path) = &args.scenario {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("crtc: {}: {e}", path.display());
                return 2;
            }
        };
        let scenario = match parse_scenario(&text) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("crtc: {}: {e}", path.display());
                return 2;
            }
        };
        let trace = match run(&scenario, args.seed) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("crtc: {e}");
                return 2;
            }
        };
        if args.trace {
            print!("{}", trace.to_text());
        }
        let failures = trace.failures();
        for f in &failures {
            eprintln!("{f}");
        }
        let violations = check_invariants(&trace);
        for v in &violations {
            eprintln!("violation {v}");
        }
        eprintln!("{} assertion(s) failed, {} invariant violation(s)", failures.len(), violations.len());
        return if failures.is_empty() && violations.is_empty() { 0 } else { 1 };
    }
    let n = args.fuzz.unwrap_or(0);
    let mut bad = 0;
    for seed in args.seed..args.seed + n {
        let scenario = generate_random_scenario(seed, args.clients, args.steps);
        let trace = match run(&scenario, seed) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("crtc: seed {seed}: {e}");
                return 2;
            }
        };
        let mut problems: Vec<String> = trace.failures().iter().map(|f| f.to_string()).collect();
        problems.extend(check_invariants(&trace).iter().map(|v| v.to_string()));
        problems.extend(check_convergence(&trace).iter().map(|v| v.to_string()));
        if args.trace {
            print!("{}", trace.to_text());
        }
        let commits = trace.count(|e| matches!(e, crtc_core::sim::TraceEvent::Commit { .. }));
        let denies = trace.count(|e| matches!(e, crtc_core::sim::TraceEvent::Denied { .. }));
        let verdict = if problems.is_empty() { "ok" } else { "FAIL" };
        println!("seed {seed}: {verdict} commits={commits} denies={denies}");
        for p in &problems {
            println!("  {p}");
        }
        bad += usize::from(!problems.is_empty());
    }
    if bad == 0 {
        0
    } else {
        1
    }
}
