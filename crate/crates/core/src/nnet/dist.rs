//! Diagonal Gaussian over the two action components `(design, estimate)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Action;

pub const ACTION_DIM: usize = 2;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mean: [f64; ACTION_DIM],
    pub std: [f64; ACTION_DIM],
}

impl ActionDistribution {
    pub fn from_log_std(mean: [f64; ACTION_DIM], log_std: [f64; ACTION_DIM]) -> Self {
        Self {
            mean,
            std: [log_std[0].exp(), log_std[1].exp()],
        }
    }

    pub fn mean_action(&self) -> Action {
        Action {
            design: self.mean[0],
            estimate: self.mean[1],
        }
    }
}

pub fn action_vec(action: &Action) -> [f64; ACTION_DIM] {
    [action.design, action.estimate]
}

pub fn gaussian_log_prob(dist: &ActionDistribution, action: &Action) -> f64 {
    let a = action_vec(action);
    (0..ACTION_DIM)
        .map(|k| {
            let z = (a[k] - dist.mean[k]) / dist.std[k];
            -0.5 * z * z - dist.std[k].ln() - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(dist: &ActionDistribution) -> f64 {
    dist.std.iter().map(|s| 0.5 + HALF_LN_2PI + s.ln()).sum()
}

/// `mean + std * z` with `z` standard normal; draws design noise first.
pub fn sample<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> Action {
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    Action {
        design: dist.mean[0] + dist.std[0] * z0,
        estimate: dist.mean[1] + dist.std[1] * z1,
    }
}

/// Partial derivatives of `log_prob` with respect to the mean and log-std.
pub fn log_prob_grads(dist: &ActionDistribution, action: &Action) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let a = action_vec(action);
    let mut d_mean = [0.0; ACTION_DIM];
    let mut d_log_std = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let z = (a[k] - dist.mean[k]) / dist.std[k];
        d_mean[k] = z / dist.std[k];
        d_log_std[k] = z * z - 1.0;
    }
    (d_mean, d_log_std)
}
