use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use teleodd_core::mode::{decision_table_csv, Policy, SystemMode};
use teleodd_core::reachability::{enumerate_reachable, full_alphabet, perceived_alphabet};
use teleodd_core::runlog::{parse_log, recompute_metrics, render_report, Divergence, ReportFormat};
use teleodd_core::scenario::load_scenario;
use teleodd_core::sim::{replay, run, RunOptions};

mod gateway;

#[derive(Parser)]
#[command(name = "teleodd", version, about = "Teleoperation safety simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    #[value(name = "odd_t1")]
    OddT1,
    #[value(name = "odd_t2")]
    OddT2,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Policy {
        match p {
            PolicyArg::OddT1 => Policy::OddT1,
            PolicyArg::OddT2 => Policy::OddT2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless or behind the live gateway.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, conflicts_with = "serve")]
        headless: bool,
        /// Serve the wire protocol on this address and pace the loop in real time.
        #[arg(long, value_name = "ADDR:PORT")]
        serve: Option<String>,
        /// Replace the corridor MRM by a zero-steer stop at this deceleration (m/s²).
        #[arg(long, value_name = "DECEL")]
        baseline_brake: Option<f64>,
    },
    /// Reachability analysis of the mode manager with witness dump.
    Check {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long, default_value_t = 12)]
        depth: usize,
        /// Add unperceived border events to the alphabet.
        #[arg(long)]
        unperceived: bool,
        /// Write the witness trace here instead of stdout.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Re-run a logged scenario and compare byte for byte.
    Replay {
        log: PathBuf,
        scenario: PathBuf,
        /// Replay with another seed than the one recorded.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarise run logs.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Print the decision table as CSV.
    DecisionTable {
        #[arg(long, value_enum, default_value_t = PolicyArg::OddT2)]
        policy: PolicyArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run {
            scenario,
            policy,
            seed,
            log,
            headless: _,
            serve,
            baseline_brake,
        } => {
            let sc = load_scenario(&scenario)?;
            let opts = RunOptions {
                policy: policy.map(Into::into),
                seed,
                baseline_brake,
            };
            if let Some(addr) = serve {
                let rt = tokio::runtime::Runtime::new()?;
                rt.block_on(gateway::serve(sc, opts, &addr, log))?;
                return Ok(ExitCode::SUCCESS);
            }
            let out = run(&sc, &opts)?;
            if let Some(path) = log {
                fs::write(&path, &out.log).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", render_report(&[out.metrics], ReportFormat::Text));
            Ok(ExitCode::SUCCESS)
        }
        Command::Check {
            scenario,
            policy,
            depth,
            unperceived,
            witness,
        } => {
            let sc = load_scenario(&scenario)?;
            let policy = policy.map_or(sc.policy.policy, Into::into);
            let alphabet = if unperceived { full_alphabet() } else { perceived_alphabet() };
            let started = std::time::Instant::now();
            let r = enumerate_reachable(SystemMode::AdsInOdd, &alphabet, policy, depth);
            let modes: Vec<&str> = r.reachable_modes.iter().map(|m| m.name()).collect();
            println!("policy {} depth {}", policy.name(), depth);
            println!("states {} edges {}", r.reachable.len(), r.edges_explored);
            println!("reachable modes {}", modes.join(" "));
            println!(
                "undefined {}",
                if r.undefined_reachable() { "reachable" } else { "unreachable" }
            );
            println!("disconnect violations {}", r.disconnect_violations.len());
            println!("elapsed_ms {}", started.elapsed().as_millis());
            if r.undefined_witness.is_some() {
                let jsonl = r.witness_jsonl();
                match witness {
                    Some(path) => fs::write(&path, jsonl).with_context(|| format!("writing {}", path.display()))?,
                    None => {
                        println!("witness");
                        print!("{jsonl}");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { log, scenario, seed } => {
            let text = fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let sc = load_scenario(&scenario)?;
            let outcome = replay(&text, &sc, seed)?;
            match outcome.divergence {
                None => {
                    println!("identical");
                    Ok(ExitCode::SUCCESS)
                }
                Some(d) => {
                    match d {
                        Divergence::Header => println!("diverged at header"),
                        Divergence::Tick(t) => println!("diverged at tick {t}"),
                        Divergence::Summary => println!("diverged at summary"),
                        Divergence::Length {
                            expected_lines,
                            actual_lines,
                        } => println!("diverged in length: {expected_lines} lines logged, {actual_lines} replayed"),
                    }
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Report { logs, format } => {
            let mut metrics = Vec::new();
            for path in &logs {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let parsed = parse_log(&text).with_context(|| format!("parsing {}", path.display()))?;
                metrics.push(recompute_metrics(&parsed));
            }
            let format = match format {
                FormatArg::Text => ReportFormat::Text,
                FormatArg::Csv => ReportFormat::Csv,
            };
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(render_report(&metrics, format).as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::DecisionTable { policy } => {
            print!("{}", decision_table_csv(policy.into()));
            Ok(ExitCode::SUCCESS)
        }
    }
}
