use rand::seq::SliceRandom;

use super::gae::compute_buffer_gae;
use super::rollout::{EpisodeRollout, RolloutBuffer};
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::nnet::{clip_grad_norm, dist, Adam, AdamConfig, ObservationBatch, OutputGrad, PolicyParams};
use crate::rng;

/// Loss terms and parameter gradient for one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchResult {
    /// `policy_loss + value_coef * value_loss - entropy_coef * entropy`.
    pub loss: f64,
    /// Negated clipped surrogate, averaged over samples.
    pub policy_loss: f64,
    /// Mean squared error of the value head against the returns.
    pub value_loss: f64,
    pub entropy: f64,
    pub ratios: Vec<f64>,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grads: Vec<f64>,
}

/// Evaluates the PPO loss on whole episodes. `advantages` and `returns` are
/// aligned with the concatenated steps of `episodes`.
pub fn evaluate_minibatch(
    params: &PolicyParams,
    episodes: &[&EpisodeRollout],
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
) -> Result<MinibatchResult> {
    let mut batch = ObservationBatch::default();
    for ep in episodes {
        let scope = batch.scope();
        for s in &ep.steps {
            batch.push_shared(&s.observation, scope);
        }
    }
    let n = batch.len();
    if n != advantages.len() || n != returns.len() {
        return Err(Error::State(format!(
            "minibatch has {n} steps but {} advantages and {} returns",
            advantages.len(),
            returns.len()
        )));
    }
    let cache = params.forward_batch(&batch)?;
    let eps = config.clip_epsilon;
    let inv_n = 1.0 / n as f64;
    let mut grad = OutputGrad::zeros(n);
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut approx_kl = 0.0;
    let mut clipped = 0usize;
    let mut ratios = Vec::with_capacity(n);
    let steps = episodes.iter().flat_map(|e| e.steps.iter());
    for (i, step) in steps.enumerate() {
        let d = cache.distribution(i);
        let log_prob = dist::gaussian_log_prob(&d, &step.action);
        let ratio = (log_prob - step.log_prob).exp();
        let a = advantages[i];
        let clip_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
        let unclipped_obj = ratio * a;
        let clipped_obj = clip_ratio * a;
        policy_loss -= unclipped_obj.min(clipped_obj) * inv_n;
        let in_band = (1.0 - eps..=1.0 + eps).contains(&ratio);
        if !in_band {
            clipped += 1;
        }
        // gradient flows through whichever branch is the minimum; the clipped
        // branch only carries gradient inside the band, where it equals ratio
        if unclipped_obj <= clipped_obj || in_band {
            let d_log_prob = -a * ratio * inv_n;
            let (dm, ds) = dist::log_prob_grads(&d, &step.action);
            for k in 0..dist::ACTION_DIM {
                grad.d_mean[i][k] += d_log_prob * dm[k];
                grad.d_log_std[k] += d_log_prob * ds[k];
            }
        }
        let v_err = cache.value(i) - returns[i];
        value_loss += v_err * v_err * inv_n;
        grad.d_value[i] = config.value_coef * 2.0 * v_err * inv_n;
        approx_kl += ((ratio - 1.0) - (log_prob - step.log_prob)) * inv_n;
        ratios.push(ratio);
    }
    let entropy = dist::gaussian_entropy(&cache.distribution(0));
    for k in 0..dist::ACTION_DIM {
        grad.d_log_std[k] -= config.entropy_coef;
    }
    let grads = params.backward(&cache, &grad)?;
    Ok(MinibatchResult {
        loss: policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy,
        policy_loss,
        value_loss,
        entropy,
        ratios,
        approx_kl,
        clip_fraction: clipped as f64 * inv_n,
        grads,
    })
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Policy parameters together with optimizer state.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub params: PolicyParams,
    pub optimizer: Adam,
    pub config: PpoConfig,
}

/// Averages of the minibatch loss terms over one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSummary {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub aborted: bool,
    pub early_stopped: bool,
}

impl PpoTrainer {
    pub fn new(params: PolicyParams, config: PpoConfig) -> Self {
        let optimizer = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
            params.len(),
        );
        Self {
            params,
            optimizer,
            config,
        }
    }

    /// Episodes per minibatch for a given episode length.
    pub fn episodes_per_minibatch(&self, steps_per_episode: usize) -> usize {
        let spe = steps_per_episode.max(1);
        ((self.config.minibatch_size + spe / 2) / spe).max(1)
    }

    /// One PPO update: `epochs_per_update` passes over shuffled episode
    /// minibatches. A non-finite loss or gradient restores the parameters and
    /// optimizer state from before the update and flags the summary.
    pub fn update(&mut self, buffer: &RolloutBuffer, seed: u64) -> Result<UpdateSummary> {
        if buffer.episodes.is_empty() {
            return Err(Error::State("empty rollout buffer".into()));
        }
        let (mut adv, returns) = compute_buffer_gae(
            buffer,
            self.config.gamma,
            self.config.gae_lambda,
            self.config.reward_scale,
        );
        if self.config.advantage_normalization {
            normalize_advantages(&mut adv);
        }
        let mut offsets = Vec::with_capacity(buffer.episodes.len() + 1);
        offsets.push(0);
        for ep in &buffer.episodes {
            offsets.push(offsets.last().unwrap() + ep.steps.len());
        }
        let per_mb = self.episodes_per_minibatch(buffer.episodes[0].steps.len());

        let snapshot = (self.params.clone(), self.optimizer.clone());
        let mut shuffle_rng = rng::seeded(seed);
        let mut order: Vec<usize> = (0..buffer.episodes.len()).collect();
        let mut summary = UpdateSummary::default();
        let mut count = 0usize;
        'epochs: for _ in 0..self.config.epochs_per_update {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(per_mb) {
                let episodes: Vec<&EpisodeRollout> = chunk.iter().map(|&e| &buffer.episodes[e]).collect();
                let mb_adv: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&e| adv[offsets[e]..offsets[e + 1]].iter().copied())
                    .collect();
                let mb_ret: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&e| returns[offsets[e]..offsets[e + 1]].iter().copied())
                    .collect();
                let result = evaluate_minibatch(&self.params, &episodes, &mb_adv, &mb_ret, &self.config);
                let mut res = match result {
                    Ok(r) if r.loss.is_finite() && r.grads.iter().all(|g| g.is_finite()) => r,
                    Ok(_) | Err(Error::Numerical { .. }) => {
                        log::warn!("non-finite loss; update aborted");
                        (self.params, self.optimizer) = snapshot;
                        summary.aborted = true;
                        return Ok(summary);
                    }
                    Err(e) => return Err(e),
                };
                if self.config.target_kl.is_some_and(|k| res.approx_kl > 1.5 * k) {
                    summary.early_stopped = true;
                    break 'epochs;
                }
                clip_grad_norm(&mut res.grads, self.config.max_grad_norm);
                self.optimizer.step(self.params.flat_mut(), &res.grads);
                summary.policy_loss += res.policy_loss;
                summary.value_loss += res.value_loss;
                summary.entropy += res.entropy;
                summary.approx_kl += res.approx_kl;
                summary.clip_fraction += res.clip_fraction;
                count += 1;
            }
        }
        let c = count.max(1) as f64;
        summary.policy_loss /= c;
        summary.value_loss /= c;
        summary.entropy /= c;
        summary.approx_kl /= c;
        summary.clip_fraction /= c;
        Ok(summary)
    }
}
