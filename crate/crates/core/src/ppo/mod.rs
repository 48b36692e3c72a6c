//! Proximal policy optimisation over batches of simulated test episodes.

mod gae;
mod rollout;
mod train;
mod update;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gae::{compute_buffer_gae, compute_gae};
pub use rollout::{collect_rollouts, EpisodeRollout, RolloutBuffer, StepRecord};
pub use train::{evaluate_policy, train, TrainOutcome};
pub use update::{evaluate_minibatch, normalize_advantages, MinibatchResult, PpoTrainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    /// Target minibatch size in transitions. Minibatches are formed from
    /// whole episodes, so the realized size is rounded to a multiple of the
    /// episode length.
    pub minibatch_size: usize,
    pub rollout_episodes: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub total_updates: usize,
    pub advantage_normalization: bool,
    pub max_grad_norm: f64,
    /// Rewards are multiplied by this before advantage and return
    /// computation; reported returns stay unscaled.
    pub reward_scale: f64,
    /// Stop the remaining epochs of an update once a minibatch's approximate
    /// KL exceeds `1.5 * target_kl`.
    pub target_kl: Option<f64>,
    /// Decay the learning rate linearly to zero over `total_updates`.
    pub anneal_lr: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs_per_update: 10,
            minibatch_size: 64,
            rollout_episodes: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            total_updates: 2000,
            advantage_normalization: true,
            max_grad_norm: 0.5,
            reward_scale: 0.25,
            target_kl: Some(0.02),
            anneal_lr: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let checks = [
            (unit(self.gamma), "gamma must be in [0, 1]"),
            (unit(self.gae_lambda), "gae_lambda must be in [0, 1]"),
            (self.clip_epsilon > 0.0, "clip_epsilon must be > 0"),
            (
                self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
                "learning_rate must be finite and >= 0",
            ),
            (self.epochs_per_update >= 1, "epochs_per_update must be >= 1"),
            (self.minibatch_size >= 1, "minibatch_size must be >= 1"),
            (self.rollout_episodes >= 1, "rollout_episodes must be >= 1"),
            (self.entropy_coef >= 0.0, "entropy_coef must be >= 0"),
            (self.value_coef >= 0.0, "value_coef must be >= 0"),
            (self.max_grad_norm > 0.0, "max_grad_norm must be > 0"),
            (
                self.reward_scale > 0.0 && self.reward_scale.is_finite(),
                "reward_scale must be finite and > 0",
            ),
            (self.target_kl.is_none_or(|k| k > 0.0), "target_kl must be > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Per-update training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub update: usize,
    pub mean_episode_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Squared error of the policy-mean final estimate, averaged over the
    /// update's rollout episodes.
    pub mean_final_mse: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub wall_clock_secs: f64,
    /// Set when a non-finite loss aborted the update; parameters were left
    /// unchanged.
    pub aborted: bool,
}

pub const STATS_HEADER: &str =
    "update,mean_episode_return,policy_loss,value_loss,entropy,mean_final_mse,approx_kl,clip_fraction,wall_clock_secs,aborted";

impl TrainStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.mean_episode_return,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.mean_final_mse,
            self.approx_kl,
            self.clip_fraction,
            self.wall_clock_secs,
            u8::from(self.aborted)
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Validation(format!(
                "stats row has {} fields, expected 10",
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Validation(format!("bad stats field {:?}", f[i])))
        };
        Ok(Self {
            update: f[0]
                .parse()
                .map_err(|_| Error::Validation(format!("bad update index {:?}", f[0])))?,
            mean_episode_return: num(1)?,
            policy_loss: num(2)?,
            value_loss: num(3)?,
            entropy: num(4)?,
            mean_final_mse: num(5)?,
            approx_kl: num(6)?,
            clip_fraction: num(7)?,
            wall_clock_secs: num(8)?,
            aborted: f[9] == "1",
        })
    }
}

pub fn write_stats(stats: &[TrainStats]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for s in stats {
        let _ = writeln!(out, "{}", s.csv_row());
    }
    out
}

pub fn read_stats(text: &str) -> Result<Vec<TrainStats>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(TrainStats::parse_csv_row)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PpoConfig::default().validate().unwrap();
        let bad = PpoConfig {
            gamma: 1.5,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            clip_epsilon: 0.0,
            ..PpoConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stats_rows_round_trip() {
        let s = TrainStats {
            update: 3,
            mean_episode_return: -12.5,
            policy_loss: 0.01,
            value_loss: 3.25,
            entropy: 2.8,
            mean_final_mse: 1.1,
            approx_kl: 0.002,
            clip_fraction: 0.1,
            wall_clock_secs: 0.5,
            aborted: false,
        };
        let text = write_stats(std::slice::from_ref(&s));
        assert!(text.starts_with(STATS_HEADER));
        assert_eq!(read_stats(&text).unwrap(), vec![s]);
    }
}
