use std::time::Instant;

use super::rollout::collect_rollouts;
use super::update::PpoTrainer;
use super::{PpoConfig, TrainStats};
use crate::env::{run_episode, EnvConfig};
use crate::error::{Error, Result};
use crate::nnet::{NetworkConfig, PolicyParams, TrialCache};
use crate::rng;

const INIT_STREAM: u64 = 1;
const ROLLOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub stats: Vec<TrainStats>,
}

/// Trains a fresh policy for `ppo.total_updates` updates.
///
/// `on_update` sees the stats and parameters after every update (used for
/// stats streaming and periodic checkpoints). Everything except
/// `wall_clock_secs` is a pure function of the configs and `seed`.
pub fn train<F>(
    env: &EnvConfig,
    ppo: &PpoConfig,
    network: &NetworkConfig,
    seed: u64,
    mut on_update: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&TrainStats, &PolicyParams) -> Result<()>,
{
    env.validate()?;
    ppo.validate()?;
    let params = PolicyParams::init(network.clone(), &mut rng::stream(seed, &[INIT_STREAM]))?;
    let mut trainer = PpoTrainer::new(params, ppo.clone());
    let mut stats = Vec::with_capacity(ppo.total_updates);
    let start = Instant::now();
    for update in 0..ppo.total_updates {
        let step = |source| Error::Update {
            update,
            source: Box::new(source),
        };
        let u = update as u64;
        if ppo.anneal_lr {
            let remaining = 1.0 - update as f64 / ppo.total_updates as f64;
            trainer.optimizer.config.learning_rate = ppo.learning_rate * remaining;
        }
        let buffer = collect_rollouts(
            &trainer.params,
            env,
            ppo.rollout_episodes,
            rng::derive_seed(seed, &[ROLLOUT_STREAM, u]),
        )
        .map_err(step)?;
        let summary = trainer
            .update(&buffer, rng::derive_seed(seed, &[SHUFFLE_STREAM, u]))
            .map_err(step)?;
        let n = buffer.episodes.len() as f64;
        let s = TrainStats {
            update,
            mean_episode_return: buffer.episodes.iter().map(|e| e.episode_return()).sum::<f64>() / n,
            policy_loss: summary.policy_loss,
            value_loss: summary.value_loss,
            entropy: summary.entropy,
            mean_final_mse: buffer
                .episodes
                .iter()
                .map(|e| e.final_mean_squared_error())
                .sum::<f64>()
                / n,
            approx_kl: summary.approx_kl,
            clip_fraction: summary.clip_fraction,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            aborted: summary.aborted,
        };
        on_update(&s, &trainer.params).map_err(step)?;
        stats.push(s);
    }
    Ok(TrainOutcome {
        params: trainer.params,
        stats,
    })
}

/// Mean squared error of the final estimate over `episodes` episodes run
/// with the policy's mean action. Episode `e` uses stream `[e]` under `seed`.
pub fn evaluate_policy(params: &PolicyParams, env: &EnvConfig, episodes: usize, seed: u64) -> Result<f64> {
    env.validate()?;
    let mut cache = TrialCache::default();
    let mut total = 0.0;
    for e in 0..episodes {
        let mut rng = rng::stream(seed, &[e as u64]);
        let theta = env.prior.sample_ability(&mut rng);
        cache.clear();
        let trace = run_episode(
            env,
            theta,
            &mut rng,
            |obs| Ok(params.forward_cached(obs, &mut cache)?.0.mean_action()),
            None,
        )?;
        total += trace.final_squared_error();
    }
    Ok(total / episodes.max(1) as f64)
}
