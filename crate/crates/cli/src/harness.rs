//! `harness`: run scenario files against in-process daemons.
//!
//! Exit status: 0 when every scenario passes, 1 when one fails, 2 when a
//! scenario file cannot be loaded.

use std::path::PathBuf;
use std::process::ExitCode;

use bmux_core::harness::{junit_xml, run_scenario, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "harness", version, about = "Scenario runner for bmux nodes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenarios in order and print each event log.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write a JUnit XML report here.
        #[arg(long)]
        junit: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Cmd::Run { files, junit } = Cli::parse().cmd;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();

    let mut scenarios = Vec::new();
    for f in &files {
        match Scenario::load(f) {
            Ok(s) => scenarios.push(s),
            Err(e) => {
                eprintln!("harness: {}: {e}", f.display());
                return ExitCode::from(2);
            }
        }
    }

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let mut reports = Vec::new();
    for s in &scenarios {
        let r = rt.block_on(run_scenario(s));
        println!("== {}", r.name);
        for line in r.event_log() {
            println!("{line}");
        }
        println!("{} {} ({} ms)\n", if r.passed() { "PASS" } else { "FAIL" }, r.name, r.duration.as_millis());
        reports.push(r);
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} scenarios, {failed} failed", reports.len());

    if let Some(path) = junit {
        if let Err(e) = std::fs::write(&path, junit_xml(&reports)) {
            eprintln!("harness: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
