use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smaplab::acceptance;
use smaplab::experiments::{output_dir, run_command};
use smaplab::scenario::{ScenarioConfig, ScenarioKind};
use smaplab::{LabError, Result};

#[derive(Parser)]
#[command(name = "smaplab", version, about = "Schrodinger map flow, caloric gauge and function-space experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the flow and record conservation diagnostics.
    Evolve(RunArgs),
    /// Build the caloric gauge and check the gauge identities.
    Gauge(RunArgs),
    /// Composite norms of the free evolution of the tangent coordinate.
    Norms(RunArgs),
    /// Randomized linear-estimate probes.
    Probe(RunArgs),
    /// Run the acceptance suite.
    Verify {
        /// Criteria to run (default: all).
        #[arg(long = "criterion", value_name = "ID")]
        criteria: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV: heat decay, envelopes and spectrum.
    Report(RunArgs),
    /// Print the default configuration of a scenario as TOML.
    PrintConfig {
        #[arg(long, default_value = "gaussian_bump")]
        scenario: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario used when no config file is given.
    #[arg(long, default_value = "gaussian_bump")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn scenario_kind(name: &str) -> Result<ScenarioKind> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| LabError::Config(format!("unknown scenario `{name}`")))
}

impl RunArgs {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::new(scenario_kind(&self.scenario)?),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn verify(criteria: &[u32], out: Option<PathBuf>) -> Result<()> {
    let ids: Vec<u32> = if criteria.is_empty() { (1..=acceptance::COUNT).collect() } else { criteria.to_vec() };
    let mut results = Vec::new();
    for &id in &ids {
        let r = acceptance::run(id);
        println!("{r}");
        results.push(r);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        let rows: Vec<_> = results
            .iter()
            .map(|r| serde_json::json!({ "id": r.id, "name": r.name, "passed": r.passed, "detail": r.detail }))
            .collect();
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&rows)?)?;
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(LabError::GateFailed(format!("criteria {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = match cli.command {
        Command::Verify { criteria, out } => return verify(&criteria, out),
        Command::PrintConfig { scenario } => {
            print!("{}", ScenarioConfig::new(scenario_kind(&scenario)?).to_toml());
            return Ok(());
        }
        Command::Evolve(a) => ("evolve", a),
        Command::Gauge(a) => ("gauge", a),
        Command::Norms(a) => ("norms", a),
        Command::Probe(a) => ("probe", a),
        Command::Report(a) => ("report", a),
    };
    let cfg = args.config()?;
    let out = output_dir(&cfg, args.out.clone());
    run_command(name, &cfg, &out)?;
    println!("{name}: wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
