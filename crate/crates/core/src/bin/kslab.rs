use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kslab::experiment::{list_scenarios, run_scenario, scenario_info, ScenarioConfig};

#[derive(Parser)]
#[command(name = "kslab", version, about = "Run directional-energy and flow scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the scenario catalog.
    List,
    /// Print the default config of a scenario.
    Defaults { scenario: String },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> kslab::Result<bool> {
    match cli.command {
        Command::List => {
            for s in list_scenarios() {
                println!("{:<22} {}", s.name, s.summary);
                println!("{:<22} checks: {}", "", s.properties);
            }
            Ok(true)
        }
        Command::Defaults { scenario } => {
            let info = scenario_info(&scenario).ok_or(kslab::Error::UnknownTag(scenario))?;
            print!("{}", info.default_config().to_text());
            Ok(true)
        }
        Command::Run { config, out, seed, threads } => {
            let mut cfg = ScenarioConfig::from_path(&config)?;
            if let Some(out) = out {
                cfg.out = Some(out);
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                pool = pool.num_threads(n);
            }
            let pool = pool.build().map_err(|e| kslab::Error::InvalidInput(e.to_string()))?;
            let report = pool.install(|| run_scenario(&cfg))?;
            for c in &report.checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                let rel = match c.relation {
                    kslab::experiment::Relation::AtMost => "<=",
                    kslab::experiment::Relation::AtLeast => ">=",
                };
                println!("{mark} {:<40} {:>14.6e} {rel} {:.3e}", c.name, c.value, c.threshold);
            }
            if let Some(f) = &report.failure {
                println!("FAIL {f}");
            }
            println!(
                "{} {} in {:.2}s",
                report.scenario,
                if report.passed { "passed" } else { "failed" },
                report.wall_clock_s
            );
            Ok(report.passed)
        }
    }
}
