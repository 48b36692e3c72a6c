//! Subcommand implementations. Each writes its outputs under `out` together
//! with `manifest.json`, which echoes the resolved configuration and hashes
//! every input file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adoirt::bench::{self, BenchmarkConfig, BenchmarkResult, FigureData, PolicyKind};
use adoirt::calibration::{fit_mle, BankSource, ItemBank, Provenance};
use adoirt::env::{run_episode, write_trace, EnvConfig, TraceRow};
use adoirt::irt::{Dataset, StudentAbility};
use adoirt::nnet::Checkpoint;
use adoirt::ppo::{self, TrainStats};
use adoirt::{io, rng, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config: RunConfig,
    /// Input path to sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), io::file_sha256(path)?);
        Ok(())
    }

    fn write_output(&mut self, path: PathBuf, text: &str) -> Result<()> {
        io::write_text(&path, text)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("manifest.json");
        io::write_text(&path, &serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }
}

pub fn generate_data(config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let mut m = Manifest::new("generate-data", config);
    let d = Dataset::generate(config.data.prior, config.data.students, config.data.items, config.seed)?;
    let path = out.join("dataset.json");
    m.write_output(path.clone(), &d.to_json())?;
    m.save(out)?;
    Ok(path)
}

/// Trains one policy. With `checkpoint_every = Some(k)`, intermediate
/// checkpoints are written every `k` updates.
pub fn train(config: &RunConfig, out: &Path, checkpoint_every: Option<usize>) -> Result<PathBuf> {
    let mut m = Manifest::new("train", config);
    let training = serde_json::to_value(&config.ppo).expect("ppo config serializes");
    let mut periodic = Vec::new();
    let outcome = ppo::train(&config.env, &config.ppo, &config.network, config.seed, |s, params| {
        log::info!(
            "update {} return {:.3} final mse {:.3} kl {:.4}",
            s.update,
            s.mean_episode_return,
            s.mean_final_mse,
            s.approx_kl
        );
        if let Some(k) = checkpoint_every.filter(|&k| k > 0) {
            if (s.update + 1) % k == 0 {
                let path = out.join("checkpoints").join(format!("update_{:06}.json", s.update + 1));
                Checkpoint::new(params, config.env.clone(), training.clone(), config.seed, s.update + 1).save(&path)?;
                periodic.push(path.display().to_string());
            }
        }
        Ok(())
    })?;
    let ck = Checkpoint::new(
        &outcome.params,
        config.env.clone(),
        training,
        config.seed,
        outcome.stats.len(),
    );
    let path = out.join("checkpoint.json");
    m.write_output(path.clone(), &ck.to_json())?;
    m.write_output(out.join("train_stats.csv"), &ppo::write_stats(&outcome.stats))?;
    m.outputs.extend(periodic);
    m.save(out)?;
    Ok(path)
}

/// Calibrates a bank from a dataset file. `true_bank` writes the dataset's
/// true difficulties instead.
pub fn calibrate(config: &RunConfig, out: &Path, data: &Path, true_bank: bool) -> Result<PathBuf> {
    let mut m = Manifest::new("calibrate", config);
    m.input(data)?;
    let dataset = Dataset::load(data)?;
    let data_id = io::file_sha256(data)?;
    let bank = if true_bank {
        ItemBank::from_values(
            &dataset.difficulty_values(),
            BankSource::True,
            Provenance {
                dataset: data_id,
                config_hash: None,
            },
        )?
    } else {
        let fit = fit_mle(&dataset.responses, &config.calibration)?;
        m.details = json!({ "nll": fit.nll, "abilities": fit.abilities });
        ItemBank::from_values(
            &fit.difficulties,
            BankSource::Estimated,
            Provenance {
                dataset: data_id,
                config_hash: Some(config.calibration.hash()),
            },
        )?
    };
    let path = out.join("bank.json");
    m.write_output(path.clone(), &bank.to_json())?;
    m.save(out)?;
    Ok(path)
}

/// Checkpoint seeds, in order; they become the benchmark seeds.
fn seeds_of(cks: &[Checkpoint]) -> Vec<u64> {
    cks.iter().map(|c| c.seed).collect()
}

pub fn benchmark(
    config: &RunConfig,
    out: &Path,
    adoirt: &[PathBuf],
    non_adaptive: &[PathBuf],
) -> Result<Vec<BenchmarkResult>> {
    let mut m = Manifest::new("benchmark", config);
    if adoirt.is_empty() {
        return Err(Error::Config("benchmark needs at least one ADOIRT checkpoint".into()));
    }
    let ad = bench::load_checkpoints(adoirt)?;
    let na = bench::load_checkpoints(non_adaptive)?;
    for p in adoirt.iter().chain(non_adaptive) {
        m.input(p)?;
    }
    let seeds = seeds_of(&ad);
    if !na.is_empty() && seeds_of(&na) != seeds {
        return Err(Error::Config(format!(
            "non-adaptive checkpoint seeds {:?} do not match ADOIRT seeds {seeds:?}",
            seeds_of(&na)
        )));
    }
    let bc = BenchmarkConfig {
        seeds,
        ..config.benchmark.clone()
    };
    let datasets = bench::prepare_datasets(&bc)?;
    let mut runs = vec![(PolicyKind::Adoirt, &ad), (PolicyKind::Random, &ad)];
    if !na.is_empty() {
        runs.insert(1, (PolicyKind::NonAdaptive, &na));
    }
    let mut results = Vec::new();
    for (kind, cks) in runs {
        let r = bench::run_benchmark_on(&bc, kind, cks, &datasets)?;
        log::info!("{}: mse {:.4} +/- {:.4}", kind.name(), r.mean, r.standard_error);
        m.write_output(out.join(format!("results_{}.csv", kind.name())), &r.records_csv())?;
        m.write_output(
            out.join(format!("results_{}.json", kind.name())),
            &serde_json::to_string(&r).expect("result serializes"),
        )?;
        results.push(r);
    }
    let refs: Vec<&BenchmarkResult> = results.iter().collect();
    m.write_output(out.join("table.csv"), &bench::summary_table(&refs))?;
    m.details = json!({ "resolved_benchmark": bc });
    m.save(out)?;
    Ok(results)
}

fn load_result(path: &Path) -> Result<Option<BenchmarkResult>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = io::read_text(path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::parse("benchmark result", e))
}

/// Reads `results_*.json` from `results` and training stats CSVs, and writes
/// one file per figure panel to `out/figures`.
pub fn export_figures(config: &RunConfig, out: &Path, results: &Path, stats: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut m = Manifest::new("export-figures", config);
    let load = |kind: PolicyKind| load_result(&results.join(format!("results_{}.json", kind.name())));
    let (ad, rnd, na) = (
        load(PolicyKind::Adoirt)?,
        load(PolicyKind::Random)?,
        load(PolicyKind::NonAdaptive)?,
    );
    let mut curves: Vec<Vec<TrainStats>> = Vec::new();
    for p in stats {
        m.input(p)?;
        curves.push(ppo::read_stats(&io::read_text(p)?)?);
    }
    let seeds: Vec<u64> = ad
        .as_ref()
        .map(|r| r.per_seed.iter().map(|s| s.0).collect())
        .unwrap_or_default();
    let panel_seed = if curves.len() == seeds.len() {
        bench::best_seed(&seeds, &curves)
    } else {
        None
    };
    let data = FigureData {
        adoirt: ad.as_ref(),
        random: rnd.as_ref(),
        non_adaptive: na.as_ref(),
        learning_curves: curves,
        panel_seed,
    };
    let paths = bench::export_figures(out.join("figures"), &data)?;
    m.outputs = paths.iter().map(|p| p.display().to_string()).collect();
    m.details = json!({ "panel_seed": panel_seed });
    m.save(out)?;
    Ok(paths)
}

/// Replays one scripted episode. `outcomes`, when given, fixes the response
/// to each item; otherwise responses are simulated for ability `theta`
/// (sampled from the prior when absent). With a bank, designs map onto it.
pub fn simulate(
    config: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    bank: Option<&Path>,
    theta: Option<f64>,
    outcomes: Option<&[u8]>,
) -> Result<Vec<TraceRow>> {
    let mut m = Manifest::new("simulate", config);
    m.input(checkpoint)?;
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.policy()?;
    let mut env: EnvConfig = ck.env.clone();
    if let Some(b) = bank {
        m.input(b)?;
        env.corruption = ItemBank::load(b)?.corruption(None)?;
    }
    if let Some(o) = outcomes {
        if o.len() != env.horizon {
            return Err(Error::Validation(format!(
                "{} scripted outcomes for horizon {}",
                o.len(),
                env.horizon
            )));
        }
        if let Some(bad) = o.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("outcome must be 0 or 1, got {bad}")));
        }
    }
    let mut r = rng::seeded(config.seed);
    let theta = match theta {
        Some(t) => StudentAbility::new(t)?,
        None => env.prior.sample_ability(&mut r),
    };
    let forced = outcomes.map(|o| {
        let o = o.to_vec();
        move |t: usize| o[t]
    });
    let forced_ref = forced.as_ref().map(|f| f as &dyn Fn(usize) -> u8);
    let trace = run_episode(
        &env,
        theta,
        &mut r,
        |obs| Ok(params.forward(obs)?.0.mean_action()),
        forced_ref,
    )?;
    m.write_output(out.join("trace.csv"), &write_trace(&trace.rows))?;
    m.save(out)?;
    Ok(trace.rows)
}
