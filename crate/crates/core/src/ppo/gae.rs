use super::rollout::RolloutBuffer;

/// Generalized advantage estimates and value targets for one episode.
///
/// `values[t]` is the critic's estimate at step `t`; the value after a
/// `done` step is taken as zero, and so is the value after the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// GAE over every episode, flattened in buffer order, with rewards
/// multiplied by `reward_scale`.
pub fn compute_buffer_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64, reward_scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(buffer.num_steps());
    let mut ret = Vec::with_capacity(buffer.num_steps());
    for ep in &buffer.episodes {
        let rewards: Vec<f64> = ep.steps.iter().map(|s| s.reward * reward_scale).collect();
        let values: Vec<f64> = ep.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = ep.steps.iter().map(|s| s.done).collect();
        let (a, r) = compute_gae(&rewards, &values, &dones, gamma, lambda);
        adv.extend(a);
        ret.extend(r);
    }
    (adv, ret)
}
