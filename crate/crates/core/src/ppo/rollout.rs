use crate::env::{Action, EnvConfig, EpisodeState, Observation};
use crate::error::{Error, Result};
use crate::irt::StudentAbility;
use crate::nnet::{dist, PolicyParams, TrialCache};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub action: Action,
    /// Log-density of `action` under the collection-time parameters.
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    /// Policy mean at collection time.
    pub mean_action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub theta: StudentAbility,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRollout {
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Squared error of the mean estimate issued on the full history.
    pub fn final_mean_squared_error(&self) -> f64 {
        let last = self.steps.last().expect("non-empty episode");
        let e = self.theta.value() - last.mean_action.estimate;
        e * e
    }
}

/// Complete episodes in collection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub episodes: Vec<EpisodeRollout>,
}

impl RolloutBuffer {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.episodes.iter().flat_map(|e| e.steps.iter())
    }
}

/// Runs `n_episodes` episodes with actions sampled from the policy.
///
/// Episode `e` draws environment randomness from stream `[e, 0]` and action
/// noise from stream `[e, 1]` under `seed`, so results do not depend on the
/// order episodes are simulated in.
pub fn collect_rollouts(params: &PolicyParams, env: &EnvConfig, n_episodes: usize, seed: u64) -> Result<RolloutBuffer> {
    env.validate()?;
    let mut cache = TrialCache::default();
    let episodes = (0..n_episodes)
        .map(|e| {
            run_one(params, env, seed, e as u64, &mut cache).map_err(|source| Error::Episode {
                episode: e,
                source: Box::new(source),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBuffer { episodes })
}

fn run_one(
    params: &PolicyParams,
    env: &EnvConfig,
    seed: u64,
    episode: u64,
    cache: &mut TrialCache,
) -> Result<EpisodeRollout> {
    let mut env_rng = rng::stream(seed, &[episode, 0]);
    let mut act_rng = rng::stream(seed, &[episode, 1]);
    let (mut state, mut obs) = EpisodeState::reset(env, &mut env_rng)?;
    cache.clear();
    let mut steps = Vec::with_capacity(env.steps_per_episode());
    loop {
        let (dist, value) = params.forward_cached(&obs, cache)?;
        let action = dist::sample(&dist, &mut act_rng);
        let log_prob = dist::gaussian_log_prob(&dist, &action);
        if !log_prob.is_finite() {
            return Err(Error::Domain(format!("non-finite log-prob for action {action:?}")));
        }
        let res = state.step(action, env, &mut env_rng)?;
        steps.push(StepRecord {
            observation: std::mem::take(&mut obs),
            action,
            log_prob,
            reward: res.reward,
            value,
            done: res.done,
            mean_action: dist.mean_action(),
        });
        obs = res.observation;
        if res.done {
            break;
        }
    }
    Ok(EpisodeRollout {
        theta: state.true_ability,
        steps,
    })
}
