//! Command line tools and the HTTP session service.

pub mod cli;
pub mod commands;
pub mod config;
pub mod server;
pub mod session;

use std::sync::Arc;

use adoirt::bench::BenchmarkConfig;
use adoirt::calibration::BankSource;
use adoirt::{Error, Result};

use crate::cli::{Cli, Command, Preset};
use crate::config::RunConfig;
use crate::session::{Deployment, EventStore, SessionManager};

/// Parses `"0110"` into outcomes.
pub fn parse_outcomes(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Validation(format!("outcome must be 0 or 1, got {other:?}"))),
        })
        .collect()
}

/// Applies command line overrides on top of the loaded configuration.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    match &cli.command {
        Command::Train(a) => {
            if a.non_adaptive {
                c.env.conceal_outcomes = true;
            }
            if let Some(u) = a.updates {
                c.ppo.total_updates = u;
            }
        }
        Command::Benchmark(a) => {
            if let Some(p) = a.preset {
                let base = match p {
                    Preset::Desk => BenchmarkConfig::desk(),
                    Preset::Full => BenchmarkConfig::full(),
                };
                c.benchmark.num_datasets = base.num_datasets;
                c.benchmark.episodes_per_dataset = base.episodes_per_dataset;
            }
            if a.true_banks {
                c.benchmark.bank_source = BankSource::True;
            }
        }
        Command::Serve(a) => {
            let s = &mut c.service;
            if a.checkpoint.is_some() {
                s.checkpoint.clone_from(&a.checkpoint);
            }
            if a.bank.is_some() {
                s.bank.clone_from(&a.bank);
            }
            if let Some(b) = &a.bind {
                s.bind.clone_from(b);
            }
            if a.horizon.is_some() {
                s.horizon = a.horizon;
            }
            if a.state_dir.is_some() {
                s.state_dir.clone_from(&a.state_dir);
            }
        }
        _ => {}
    }
    Ok(c)
}

/// Builds the session manager described by `config.service`.
pub fn build_manager(config: &RunConfig) -> Result<SessionManager> {
    let s = &config.service;
    let (Some(ck), Some(bank)) = (&s.checkpoint, &s.bank) else {
        return Err(Error::Config("serve needs both a checkpoint and a bank".into()));
    };
    let deployment = Deployment::load(ck, bank, s.horizon)?;
    let store = s.state_dir.as_ref().map(EventStore::open).transpose()?;
    SessionManager::new(deployment, store)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenerateData => {
            let p = commands::generate_data(&config, out)?;
            println!("{}", p.display());
        }
        Command::Train(a) => {
            let p = commands::train(&config, out, a.checkpoint_every)?;
            println!("{}", p.display());
        }
        Command::Calibrate(a) => {
            let p = commands::calibrate(&config, out, &a.data, a.true_bank)?;
            println!("{}", p.display());
        }
        Command::Benchmark(a) => {
            let results = commands::benchmark(&config, out, &a.adoirt, &a.non_adaptive)?;
            let refs: Vec<_> = results.iter().collect();
            print!("{}", adoirt::bench::summary_table(&refs));
        }
        Command::ExportFigures(a) => {
            for p in commands::export_figures(&config, out, &a.results, &a.stats)? {
                println!("{}", p.display());
            }
        }
        Command::Serve(_) => {
            let manager = Arc::new(build_manager(&config)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::State(format!("tokio runtime: {e}")))?;
            rt.block_on(server::serve(manager, &config.service.bind))?;
        }
        Command::Simulate(a) => {
            let outcomes = a.outcomes.as_deref().map(parse_outcomes).transpose()?;
            let rows = commands::simulate(
                &config,
                out,
                &a.checkpoint,
                a.bank.as_deref(),
                a.theta,
                outcomes.as_deref(),
            )?;
            print!("{}", adoirt::env::write_trace(&rows));
        }
    }
    Ok(())
}
