//! Benchmark protocol: per training seed and synthetic dataset, calibrate an
//! item bank, run test episodes against it and score the final estimate.
//! Also the random-design baseline and figure-data exporters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{BankSource, CalibrationConfig, ItemBank};
use crate::env::{run_episode, Action, DesignClip, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::irt::{Dataset, PriorConfig};
use crate::nnet::{Checkpoint, PolicyParams, TrialCache};
use crate::ppo::TrainStats;
use crate::rng;

const DATASET_STREAM: u64 = 10;
const EPISODE_STREAM: u64 = 11;
const RANDOM_DESIGN_STREAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Adoirt,
    NonAdaptive,
    /// Uniform random designs; estimates come from an ADOIRT network reading
    /// the random-design history.
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adoirt => "adoirt",
            Self::NonAdaptive => "non_adaptive",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub num_datasets: usize,
    pub episodes_per_dataset: usize,
    /// One trained checkpoint per seed.
    pub seeds: Vec<u64>,
    pub students: usize,
    pub items: usize,
    pub prior: PriorConfig,
    pub calibration: CalibrationConfig,
    /// `Estimated` maps designs onto calibrated difficulties while students
    /// respond to the true ones; `True` uses the true difficulties for both.
    pub bank_source: BankSource,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl BenchmarkConfig {
    /// 50 datasets x 1000 episodes x 5 seeds.
    pub fn full() -> Self {
        Self {
            num_datasets: 50,
            episodes_per_dataset: 1000,
            seeds: (0..5).collect(),
            students: 200,
            items: 50,
            prior: PriorConfig::default(),
            calibration: CalibrationConfig::default(),
            bank_source: BankSource::Estimated,
        }
    }

    /// 10 datasets x 200 episodes x 3 seeds.
    pub fn desk() -> Self {
        Self {
            num_datasets: 10,
            episodes_per_dataset: 200,
            seeds: (0..3).collect(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_datasets == 0 || self.episodes_per_dataset == 0 || self.seeds.is_empty() {
            return Err(Error::Config("benchmark counts must be >= 1".into()));
        }
        if self.students == 0 || self.items == 0 {
            return Err(Error::Config("benchmark datasets need students and items".into()));
        }
        self.prior.validate()?;
        self.calibration.validate()
    }
}

/// One synthetic calibration dataset and the bank built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchDataset {
    pub seed: u64,
    pub index: usize,
    pub bank: ItemBank,
    /// True difficulties aligned with the bank.
    pub true_difficulties: Vec<f64>,
}

/// Generates and calibrates every (seed, dataset) pair.
pub fn prepare_datasets(config: &BenchmarkConfig) -> Result<Vec<BenchDataset>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.seeds.len() * config.num_datasets);
    for &seed in &config.seeds {
        for index in 0..config.num_datasets {
            let data_seed = rng::derive_seed(seed, &[DATASET_STREAM, index as u64]);
            let data = Dataset::generate(config.prior, config.students, config.items, data_seed)?;
            let bank = match config.bank_source {
                BankSource::True => ItemBank::from_dataset(&data)?,
                BankSource::Estimated => ItemBank::calibrate(
                    &data.responses,
                    &config.calibration,
                    &format!("synthetic-seed-{data_seed}"),
                )?,
            };
            out.push(BenchDataset {
                seed,
                index,
                bank,
                true_difficulties: data.difficulty_values(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub dataset: usize,
    pub episode: usize,
    pub theta: f64,
    pub estimate: f64,
    /// Requested designs, one per administered item.
    pub designs: Vec<f64>,
    /// Difficulties of the administered bank items (what the agent saw).
    pub items: Vec<f64>,
    pub outcomes: Vec<u8>,
}

impl EpisodeRecord {
    pub fn squared_error(&self) -> f64 {
        (self.estimate - self.theta).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub seed: u64,
    pub dataset: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub policy: PolicyKind,
    pub per_dataset: Vec<DatasetScore>,
    /// Per-seed MSE, averaged over that seed's datasets.
    pub per_seed: Vec<(u64, f64)>,
    /// Mean of the per-seed MSEs.
    pub mean: f64,
    /// Standard error of the mean across seeds.
    pub standard_error: f64,
    pub records: Vec<EpisodeRecord>,
}

/// Policy used to run benchmark episodes.
#[derive(Debug, Clone, Copy)]
pub enum BenchPolicy<'a> {
    /// Mean action of a trained network.
    Network(&'a PolicyParams),
    /// Uniform designs over the clip range; `estimator` supplies estimates.
    Random { estimator: &'a PolicyParams },
}

/// Design drawn uniformly from the clip range, independent of the history.
pub fn random_design<R: Rng + ?Sized>(clip: DesignClip, rng: &mut R) -> f64 {
    rng.random_range(clip.lo..=clip.hi)
}

/// Runs one benchmark episode. Episode randomness comes from
/// `(seed, dataset, episode)` streams only, so every policy faces the same
/// students.
pub fn run_bench_episode(
    policy: BenchPolicy<'_>,
    env: &EnvConfig,
    seed: u64,
    dataset: usize,
    episode: usize,
) -> Result<EpisodeRecord> {
    let path = [EPISODE_STREAM, dataset as u64, episode as u64];
    let mut env_rng = rng::stream(seed, &path);
    let theta = env.prior.sample_ability(&mut env_rng);
    let mut cache = TrialCache::default();
    let trace = match policy {
        BenchPolicy::Network(params) => run_episode(
            env,
            theta,
            &mut env_rng,
            |obs: &Observation| Ok(params.forward_cached(obs, &mut cache)?.0.mean_action()),
            None,
        )?,
        BenchPolicy::Random { estimator } => {
            let mut design_rng = rng::stream(seed, &[RANDOM_DESIGN_STREAM, dataset as u64, episode as u64]);
            run_episode(
                env,
                theta,
                &mut env_rng,
                |obs: &Observation| {
                    let estimate = estimator.forward_cached(obs, &mut cache)?.0.mean[1];
                    Action::new(random_design(env.design_clip, &mut design_rng), estimate)
                },
                None,
            )?
        }
    };
    Ok(EpisodeRecord {
        seed,
        dataset,
        episode,
        theta: theta.value(),
        estimate: trace.final_estimate(),
        designs: trace.requested_designs(),
        items: trace.designs(),
        outcomes: trace.rows.iter().filter_map(|r| r.outcome).collect(),
    })
}

/// Environment for one benchmark dataset: the checkpoint's training settings
/// with NearestItem corruption over the dataset's bank.
pub fn bench_env(
    checkpoint_env: &EnvConfig,
    kind: PolicyKind,
    prior: PriorConfig,
    data: &BenchDataset,
) -> Result<EnvConfig> {
    let response = match data.bank.source {
        BankSource::Estimated => Some(data.true_difficulties.clone()),
        BankSource::True => None,
    };
    let env = EnvConfig {
        prior,
        corruption: data.bank.corruption(response)?,
        // random designs ignore outcomes anyway; the estimator reads them
        conceal_outcomes: kind == PolicyKind::NonAdaptive && checkpoint_env.conceal_outcomes,
        ..checkpoint_env.clone()
    };
    env.validate()?;
    Ok(env)
}

/// Runs the benchmark on prepared datasets. `checkpoints[k]` belongs to
/// `config.seeds[k]`; for `Random` they are the ADOIRT estimators.
pub fn run_benchmark_on(
    config: &BenchmarkConfig,
    kind: PolicyKind,
    checkpoints: &[Checkpoint],
    datasets: &[BenchDataset],
) -> Result<BenchmarkResult> {
    config.validate()?;
    if checkpoints.len() != config.seeds.len() {
        return Err(Error::Config(format!(
            "{} checkpoints for {} seeds",
            checkpoints.len(),
            config.seeds.len()
        )));
    }
    let mut per_dataset = Vec::new();
    let mut per_seed = Vec::new();
    let mut records = Vec::new();
    for (&seed, ck) in config.seeds.iter().zip(checkpoints) {
        let params = ck.policy()?;
        let policy = match kind {
            PolicyKind::Random => BenchPolicy::Random { estimator: &params },
            _ => BenchPolicy::Network(&params),
        };
        let mut seed_total = 0.0;
        for index in 0..config.num_datasets {
            let data = datasets
                .iter()
                .find(|d| d.seed == seed && d.index == index)
                .ok_or_else(|| Error::Config(format!("no prepared dataset {index} for seed {seed}")))?;
            let env = bench_env(&ck.env, kind, config.prior, data)?;
            let mut total = 0.0;
            for e in 0..config.episodes_per_dataset {
                let rec = run_bench_episode(policy, &env, seed, index, e).map_err(|err| Error::Episode {
                    episode: e,
                    source: Box::new(err),
                })?;
                total += rec.squared_error();
                records.push(rec);
            }
            let mse = total / config.episodes_per_dataset as f64;
            seed_total += mse;
            per_dataset.push(DatasetScore {
                seed,
                dataset: index,
                mse,
            });
        }
        per_seed.push((seed, seed_total / config.num_datasets as f64));
    }
    let (mean, standard_error) = mean_and_se(&per_seed.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(BenchmarkResult {
        policy: kind,
        per_dataset,
        per_seed,
        mean,
        standard_error,
        records,
    })
}

pub fn run_benchmark(
    config: &BenchmarkConfig,
    kind: PolicyKind,
    checkpoints: &[Checkpoint],
) -> Result<BenchmarkResult> {
    let datasets = prepare_datasets(config)?;
    run_benchmark_on(config, kind, checkpoints, &datasets)
}

/// Loads one checkpoint per path; a missing file is a config error naming it.
pub fn load_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Checkpoint>> {
    paths.iter().map(Checkpoint::load).collect()
}

/// Sample mean and standard error (sample std / sqrt n; zero for n < 2).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

pub const RECORDS_HEADER: &str = "policy,seed,dataset,episode,theta,theta_hat,squared_error,designs,items,outcomes";

impl BenchmarkResult {
    /// Per-episode records, one row each; list columns are `;`-separated.
    pub fn records_csv(&self) -> String {
        let mut out = format!("{RECORDS_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.policy.name(),
                r.seed,
                r.dataset,
                r.episode,
                r.theta,
                r.estimate,
                r.squared_error(),
                join(&r.designs),
                join(&r.items),
                join(&r.outcomes)
            );
        }
        out
    }

    /// Mean squared error straight from the stored records.
    pub fn record_mse(&self) -> f64 {
        self.records.iter().map(EpisodeRecord::squared_error).sum::<f64>() / self.records.len() as f64
    }
}

/// Table of mean and standard error per policy.
pub fn summary_table(results: &[&BenchmarkResult]) -> String {
    let mut out = String::from("policy,mse_mean,mse_standard_error\n");
    for r in results {
        let _ = writeln!(out, "{},{},{}", r.policy.name(), r.mean, r.standard_error);
    }
    out
}

/// Inputs for the figure exporters. Scatter and design panels use records
/// from `panel_seed` only when it is set.
#[derive(Debug, Clone, Default)]
pub struct FigureData<'a> {
    pub adoirt: Option<&'a BenchmarkResult>,
    pub random: Option<&'a BenchmarkResult>,
    pub non_adaptive: Option<&'a BenchmarkResult>,
    /// Training statistics, one series per seed.
    pub learning_curves: Vec<Vec<TrainStats>>,
    pub panel_seed: Option<u64>,
}

impl FigureData<'_> {
    fn records<'r>(&self, result: Option<&'r BenchmarkResult>) -> Vec<&'r EpisodeRecord> {
        result
            .map(|r| {
                r.records
                    .iter()
                    .filter(|rec| self.panel_seed.is_none_or(|s| rec.seed == s))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Seed whose final training error (last update's mean final MSE) is lowest.
pub fn best_seed(seeds: &[u64], curves: &[Vec<TrainStats>]) -> Option<u64> {
    seeds
        .iter()
        .zip(curves)
        .filter_map(|(&s, c)| c.last().map(|l| (s, l.mean_final_mse)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
}

fn scatter_csv(records: &[&EpisodeRecord]) -> String {
    let mut out = String::from("theta,theta_hat\n");
    for r in records {
        let _ = writeln!(out, "{},{}", r.theta, r.estimate);
    }
    out
}

/// Per step `t`: mean and std of `|d_t - theta|` over episodes, where `d_t`
/// is the administered difficulty.
pub fn design_gap_by_step(records: &[&EpisodeRecord]) -> Vec<(usize, f64, f64, usize)> {
    let horizon = records.iter().map(|r| r.items.len()).max().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let gaps: Vec<f64> = records
                .iter()
                .filter_map(|r| r.items.get(t).map(|d| (d - r.theta).abs()))
                .collect();
            let n = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
            (t + 1, mean, std, gaps.len())
        })
        .collect()
}

/// Writes one CSV per figure panel into `dir` and returns the paths. Missing
/// inputs give header-only files.
pub fn export_figures(dir: impl AsRef<Path>, data: &FigureData<'_>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let adoirt = data.records(data.adoirt);
    let mut files = vec![
        ("panel_a_adoirt_scatter.csv", scatter_csv(&adoirt)),
        ("panel_b_random_scatter.csv", scatter_csv(&data.records(data.random))),
        (
            "panel_c_non_adaptive_scatter.csv",
            scatter_csv(&data.records(data.non_adaptive)),
        ),
    ];

    let mut d = String::from("t,design,item,outcome,theta\n");
    if let Some(r) = adoirt.first() {
        for t in 0..r.items.len() {
            let _ = writeln!(
                d,
                "{},{},{},{},{}",
                t + 1,
                r.designs[t],
                r.items[t],
                r.outcomes[t],
                r.theta
            );
        }
    }
    files.push(("panel_d_design_trace.csv", d));

    let mut e = String::from("t,mean_abs_gap,std_abs_gap,episodes\n");
    for (t, mean, std, n) in design_gap_by_step(&adoirt) {
        let _ = writeln!(e, "{t},{mean},{std},{n}");
    }
    files.push(("panel_e_design_convergence.csv", e));

    let mut f = String::from("update,mean_final_mse,std_final_mse,seeds\n");
    let updates = data.learning_curves.iter().map(Vec::len).min().unwrap_or(0);
    for u in 0..updates {
        let v: Vec<f64> = data.learning_curves.iter().map(|c| c[u].mean_final_mse).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let _ = writeln!(f, "{},{mean},{std},{}", data.learning_curves[0][u].update, v.len());
    }
    files.push(("panel_f_learning_curves.csv", f));

    let mut paths = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = dir.join(name);
        crate::io::write_text(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_examples() {
        assert_eq!(mean_and_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn random_designs_stay_in_range_and_center() {
        let clip = DesignClip { lo: -6.0, hi: 6.0 };
        let mut r = rng::seeded(4);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| random_design(clip, &mut r)).collect();
        assert!(draws.iter().all(|d| (-6.0..=6.0).contains(d)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // uniform on [-6, 6] has std 12 / sqrt(12)
        let se = 12.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn presets_validate() {
        BenchmarkConfig::desk().validate().unwrap();
        BenchmarkConfig::full().validate().unwrap();
        let bad = BenchmarkConfig {
            seeds: vec![],
            ..BenchmarkConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
