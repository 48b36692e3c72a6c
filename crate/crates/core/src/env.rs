//! Adaptive-testing episode simulator.
//!
//! The hidden state is one student's ability, fixed for the whole episode.
//! Each step the agent sends an [`Action`]: a requested item difficulty and
//! its current ability estimate. The requested difficulty is corrupted into
//! an administered item, the student answers it, and the agent receives
//! `-(theta - estimate)^2`.
//!
//! An episode administers exactly `horizon` items. One extra estimate-only
//! step follows the last item so the final estimate is conditioned on every
//! outcome; its design component is ignored. Episodes therefore emit
//! `horizon + 1` transitions.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{self, ItemDifficulty, PriorConfig, StudentAbility};

/// How a requested design becomes an administered item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Corruption {
    /// Training mode: `d + N(0, std^2)`, clipped to the design range.
    GaussianNoise { std: f64 },
    /// Deployment mode: the bank item whose difficulty is closest to the
    /// request. The agent observes `bank[i]`; responses are simulated against
    /// `response_difficulties[i]` when given (true difficulties behind an
    /// estimated bank), otherwise against `bank[i]`.
    NearestItem {
        bank: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_difficulties: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignClip {
    pub lo: f64,
    pub hi: f64,
}

impl DesignClip {
    pub fn clamp(&self, d: f64) -> f64 {
        d.clamp(self.lo, self.hi)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub prior: PriorConfig,
    pub corruption: Corruption,
    /// Hide outcomes from the agent until the last item has been answered.
    pub conceal_outcomes: bool,
    pub design_clip: DesignClip,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            prior: PriorConfig::default(),
            corruption: Corruption::GaussianNoise { std: 0.25 },
            conceal_outcomes: false,
            design_clip: DesignClip { lo: -6.0, hi: 6.0 },
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        self.prior.validate()?;
        let DesignClip { lo, hi } = self.design_clip;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("degenerate design_clip [{lo}, {hi}]")));
        }
        match &self.corruption {
            Corruption::GaussianNoise { std } => {
                if !(std.is_finite() && *std >= 0.0) {
                    return Err(Error::Config(format!("noise std must be >= 0, got {std}")));
                }
            }
            Corruption::NearestItem {
                bank,
                response_difficulties,
            } => {
                if bank.is_empty() {
                    return Err(Error::Config("NearestItem bank is empty".into()));
                }
                if bank.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Config("NearestItem bank has non-finite entries".into()));
                }
                if let Some(truth) = response_difficulties {
                    if truth.len() != bank.len() || truth.iter().any(|b| !b.is_finite()) {
                        return Err(Error::Config(
                            "response_difficulties must be finite and match the bank length".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Transitions per episode: one per item plus the final estimate.
    pub fn steps_per_episode(&self) -> usize {
        self.horizon + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub design: f64,
    pub estimate: f64,
}

impl Action {
    pub fn new(design: f64, estimate: f64) -> Result<Self> {
        let action = Self { design, estimate };
        action.check()?;
        Ok(action)
    }

    fn check(&self) -> Result<()> {
        if self.design.is_finite() && self.estimate.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-finite action {self:?}")))
        }
    }
}

/// One administered item as seen by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub corrupted_design: f64,
    /// Sentinel 0 while the outcome is concealed.
    pub outcome: u8,
    pub outcome_revealed: u8,
}

impl TrialRecord {
    pub fn revealed(corrupted_design: f64, outcome: u8) -> Self {
        Self {
            corrupted_design,
            outcome,
            outcome_revealed: 1,
        }
    }

    pub fn masked(&self) -> Self {
        Self {
            corrupted_design: self.corrupted_design,
            outcome: 0,
            outcome_revealed: 0,
        }
    }

    /// Network input features `(d_hat, y, revealed)`.
    pub fn features(&self) -> [f64; 3] {
        [
            self.corrupted_design,
            f64::from(self.outcome),
            f64::from(self.outcome_revealed),
        ]
    }
}

/// The agent's view of an episode: the ordered trial history.
pub type Observation = Vec<TrialRecord>;

/// Administered design after corruption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptedDesign {
    /// Difficulty reported to the agent.
    pub observed: f64,
    /// Difficulty the simulated student actually faces.
    pub response: f64,
    /// Bank index in NearestItem mode.
    pub item: Option<usize>,
}

/// Index of the value closest to `target`; ties go to the smaller value,
/// then to the lower index.
pub fn nearest_index(values: &[f64], target: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        let dist = (v - target).abs();
        best = match best {
            None => Some((i, dist)),
            Some((j, bd)) => {
                if dist < bd || (dist == bd && v < values[j]) {
                    Some((i, dist))
                } else {
                    Some((j, bd))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

/// Maps a requested design to the administered item.
///
/// GaussianNoise consumes one standard-normal draw from `rng` (even when
/// `std == 0`); NearestItem consumes nothing.
pub fn corrupt_design<R: Rng + ?Sized>(
    design: f64,
    corruption: &Corruption,
    clip: DesignClip,
    rng: &mut R,
) -> Result<CorruptedDesign> {
    if !design.is_finite() {
        return Err(Error::Domain(format!("requested design {design} is not finite")));
    }
    match corruption {
        Corruption::GaussianNoise { std } => {
            let eps: f64 = StandardNormal.sample(rng);
            let value = clip.clamp(design + std * eps);
            Ok(CorruptedDesign {
                observed: value,
                response: value,
                item: None,
            })
        }
        Corruption::NearestItem {
            bank,
            response_difficulties,
        } => {
            let i = nearest_index(bank, design).ok_or_else(|| Error::Config("NearestItem bank is empty".into()))?;
            let response = response_difficulties.as_ref().map_or(bank[i], |t| t[i]);
            Ok(CorruptedDesign {
                observed: bank[i],
                response,
                item: Some(i),
            })
        }
    }
}

pub fn squared_error_reward(theta: StudentAbility, estimate: f64) -> f64 {
    let err = theta.value() - estimate;
    -(err * err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub true_ability: StudentAbility,
    /// Items administered so far.
    pub step: usize,
    /// Unmasked history; masking is applied by [`EpisodeState::observation`].
    pub history: Vec<TrialRecord>,
    finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// The item administered this step (unmasked), absent on the final
    /// estimate-only step.
    pub trial: Option<TrialRecord>,
    pub corrupted: Option<CorruptedDesign>,
}

impl EpisodeState {
    /// Starts an episode with a fresh ability drawn from the prior.
    pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<(Self, Observation)> {
        config.validate()?;
        let theta = config.prior.sample_ability(rng);
        Ok(Self::with_ability(theta))
    }

    pub fn with_ability(theta: StudentAbility) -> (Self, Observation) {
        let state = Self {
            true_ability: theta,
            step: 0,
            history: Vec::new(),
            finished: false,
        };
        (state, Vec::new())
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Agent view of the current history. Outcomes stay masked under
    /// concealment until every item has been answered.
    pub fn observation(&self, config: &EnvConfig) -> Observation {
        if config.conceal_outcomes && self.step < config.horizon {
            self.history.iter().map(TrialRecord::masked).collect()
        } else {
            self.history.clone()
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, config: &EnvConfig, rng: &mut R) -> Result<StepResult> {
        self.step_with(action, config, rng, None)
    }

    /// Like [`EpisodeState::step`] but optionally overrides the sampled
    /// outcome. The rng is consumed identically either way, so paired
    /// episodes with forced outcomes share every other random draw.
    pub fn step_with<R: Rng + ?Sized>(
        &mut self,
        action: Action,
        config: &EnvConfig,
        rng: &mut R,
        forced_outcome: Option<u8>,
    ) -> Result<StepResult> {
        if self.finished {
            return Err(Error::State("episode already finished".into()));
        }
        action.check()?;
        let reward = squared_error_reward(self.true_ability, action.estimate);

        if self.step == config.horizon {
            self.finished = true;
            return Ok(StepResult {
                observation: self.observation(config),
                reward,
                done: true,
                trial: None,
                corrupted: None,
            });
        }

        let corrupted = corrupt_design(action.design, &config.corruption, config.design_clip, rng)?;
        let response_b = ItemDifficulty::new(corrupted.response)?;
        let sampled = irt::sample_response(self.true_ability, response_b, rng);
        let outcome = forced_outcome.unwrap_or(sampled);
        if outcome > 1 {
            return Err(Error::Validation(format!("forced outcome {outcome} is not 0 or 1")));
        }
        let trial = TrialRecord::revealed(corrupted.observed, outcome);
        self.history.push(trial);
        self.step += 1;
        Ok(StepResult {
            observation: self.observation(config),
            reward,
            done: false,
            trial: Some(trial),
            corrupted: Some(corrupted),
        })
    }
}

/// One row of an exported episode trace. Item fields are empty on the final
/// estimate-only row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub design: Option<f64>,
    pub corrupted_design: Option<f64>,
    pub outcome: Option<u8>,
    pub revealed: Option<u8>,
    pub estimate: f64,
    pub reward: f64,
    pub theta: f64,
}

/// Complete record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub theta: StudentAbility,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    /// Estimate issued on the full history.
    pub fn final_estimate(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.estimate)
    }

    pub fn final_squared_error(&self) -> f64 {
        let e = self.theta.value() - self.final_estimate();
        e * e
    }

    /// Administered designs in order.
    pub fn designs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.corrupted_design).collect()
    }

    pub fn requested_designs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.design).collect()
    }
}

pub const TRACE_HEADER: &str = "t,d,d_hat,y,revealed,theta_hat,reward,theta";

/// Renders traces as comma-separated text with a header row.
pub fn write_trace(rows: &[TraceRow]) -> String {
    fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            opt(r.design),
            opt(r.corrupted_design),
            opt(r.outcome),
            opt(r.revealed),
            r.estimate,
            r.reward,
            r.theta
        );
    }
    out
}

/// Runs one full episode, asking `policy` for an action on each observation.
///
/// `forced_outcomes`, when given, overrides the outcome of item `t` with
/// `forced_outcomes(t)`.
pub fn run_episode<R, P>(
    config: &EnvConfig,
    theta: StudentAbility,
    rng: &mut R,
    mut policy: P,
    forced_outcomes: Option<&dyn Fn(usize) -> u8>,
) -> Result<EpisodeTrace>
where
    R: Rng + ?Sized,
    P: FnMut(&Observation) -> Result<Action>,
{
    let (mut state, mut obs) = EpisodeState::with_ability(theta);
    let mut rows = Vec::with_capacity(config.steps_per_episode());
    loop {
        let action = policy(&obs)?;
        let t = state.step;
        let forced = if t < config.horizon {
            forced_outcomes.map(|f| f(t))
        } else {
            None
        };
        let res = state.step_with(action, config, rng, forced)?;
        rows.push(TraceRow {
            t: t + 1,
            design: res.trial.map(|_| action.design),
            corrupted_design: res.trial.map(|tr| tr.corrupted_design),
            outcome: res.trial.map(|tr| tr.outcome),
            revealed: res.trial.map(|_| res.observation[t].outcome_revealed),
            estimate: action.estimate,
            reward: res.reward,
            theta: theta.value(),
        });
        obs = res.observation;
        if res.done {
            break;
        }
    }
    Ok(EpisodeTrace { theta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn nearest(bank: Vec<f64>) -> Corruption {
        Corruption::NearestItem {
            bank,
            response_difficulties: None,
        }
    }

    fn clip() -> DesignClip {
        DesignClip { lo: -6.0, hi: 6.0 }
    }

    #[test]
    fn reset_is_deterministic_and_empty() {
        let cfg = EnvConfig::default();
        let (a, obs) = EpisodeState::reset(&cfg, &mut seeded(9)).unwrap();
        let (b, _) = EpisodeState::reset(&cfg, &mut seeded(9)).unwrap();
        assert_eq!(a.true_ability, b.true_ability);
        assert!(obs.is_empty());
        assert_eq!(a.step, 0);
    }

    #[test]
    fn reset_samples_prior_mean() {
        let cfg = EnvConfig::default();
        let mut rng = seeded(10);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| EpisodeState::reset(&cfg, &mut rng).unwrap().0.true_ability.value())
            .sum::<f64>()
            / n as f64;
        let se = cfg.prior.ability_std / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn reward_examples() {
        let theta = StudentAbility::new(1.0).unwrap();
        assert_eq!(squared_error_reward(theta, 1.0), 0.0);
        assert_eq!(squared_error_reward(theta, -1.0), -4.0);
    }

    #[test]
    fn corruption_examples() {
        let mut rng = seeded(0);
        let c = corrupt_design(1.2, &nearest(vec![-1.0, 0.0, 2.0]), clip(), &mut rng).unwrap();
        assert_eq!((c.observed, c.item), (2.0, Some(2)));
        let c = corrupt_design(0.0, &nearest(vec![-1.0, 1.0]), clip(), &mut rng).unwrap();
        assert_eq!((c.observed, c.item), (-1.0, Some(0)));
        let c = corrupt_design(0.0, &nearest(vec![1.0, -1.0]), clip(), &mut rng).unwrap();
        assert_eq!((c.observed, c.item), (-1.0, Some(1)));
        let c = corrupt_design(0.7, &Corruption::GaussianNoise { std: 0.0 }, clip(), &mut rng).unwrap();
        assert_eq!(c.observed, 0.7);
        let c = corrupt_design(50.0, &Corruption::GaussianNoise { std: 0.0 }, clip(), &mut rng).unwrap();
        assert_eq!(c.observed, 6.0);
        assert!(corrupt_design(f64::NAN, &nearest(vec![0.0]), clip(), &mut rng).is_err());
        assert!(matches!(
            corrupt_design(0.0, &nearest(vec![]), clip(), &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nearest_item_uses_response_difficulties() {
        let corruption = Corruption::NearestItem {
            bank: vec![-1.0, 0.5],
            response_difficulties: Some(vec![-1.2, 0.8]),
        };
        let c = corrupt_design(0.4, &corruption, clip(), &mut seeded(0)).unwrap();
        assert_eq!((c.observed, c.response, c.item), (0.5, 0.8, Some(1)));
    }

    #[test]
    fn gaussian_noise_is_centred() {
        let mut rng = seeded(12);
        let n = 100_000;
        let corruption = Corruption::GaussianNoise { std: 0.25 };
        let mean = (0..n)
            .map(|_| corrupt_design(0.0, &corruption, clip(), &mut rng).unwrap().observed)
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.003, "{mean}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EnvConfig {
            horizon: 0,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.horizon = 3;
        cfg.corruption = nearest(vec![]);
        assert!(cfg.validate().is_err());
        cfg.corruption = Corruption::GaussianNoise { std: 0.1 };
        cfg.design_clip = DesignClip { lo: 1.0, hi: 1.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn episode_lifecycle() {
        let cfg = EnvConfig::default();
        let mut rng = seeded(3);
        let (mut state, _) = EpisodeState::reset(&cfg, &mut rng).unwrap();
        let theta = state.true_ability;
        let action = Action::new(0.5, 0.1).unwrap();
        for t in 0..cfg.horizon {
            let res = state.step(action, &cfg, &mut rng).unwrap();
            assert!(!res.done);
            assert!(res.reward <= 0.0);
            assert_eq!(res.observation.len(), t + 1);
            assert_eq!(state.history.len(), state.step);
            assert_eq!(state.true_ability, theta);
        }
        let last = state.step(action, &cfg, &mut rng).unwrap();
        assert!(last.done);
        assert!(last.trial.is_none());
        assert_eq!(last.observation.len(), cfg.horizon);
        assert!(matches!(state.step(action, &cfg, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn non_finite_actions_rejected() {
        assert!(Action::new(f64::NAN, 0.0).is_err());
        let cfg = EnvConfig::default();
        let (mut state, _) = EpisodeState::reset(&cfg, &mut seeded(1)).unwrap();
        let bad = Action {
            design: 0.0,
            estimate: f64::INFINITY,
        };
        assert!(state.step(bad, &cfg, &mut seeded(1)).is_err());
    }

    fn forced_run(cfg: &EnvConfig, forced: u8, adaptive_probe: bool) -> Vec<Observation> {
        let theta = StudentAbility::new(0.3).unwrap();
        let mut rng = seeded(77);
        let mut seen = Vec::new();
        let mut design = 0.0;
        run_episode(
            cfg,
            theta,
            &mut rng,
            |obs| {
                seen.push(obs.clone());
                if adaptive_probe {
                    design = obs.iter().map(|r| r.corrupted_design).sum::<f64>() * 0.1;
                }
                Action::new(design, 0.0)
            },
            Some(&|_| forced),
        )
        .unwrap();
        seen
    }

    #[test]
    fn concealed_observations_ignore_outcomes() {
        let cfg = EnvConfig {
            conceal_outcomes: true,
            ..EnvConfig::default()
        };
        let ones = forced_run(&cfg, 1, true);
        let zeros = forced_run(&cfg, 0, true);
        assert_eq!(ones.len(), cfg.horizon + 1);
        for t in 1..cfg.horizon {
            assert_eq!(ones[t], zeros[t], "step {t}");
            assert!(ones[t].iter().all(|r| r.outcome_revealed == 0));
        }
        // final observation reveals everything
        assert_ne!(ones[cfg.horizon], zeros[cfg.horizon]);
        assert!(ones[cfg.horizon]
            .iter()
            .all(|r| r.outcome_revealed == 1 && r.outcome == 1));
    }

    #[test]
    fn revealed_outcomes_change_observations() {
        let cfg = EnvConfig::default();
        let ones = forced_run(&cfg, 1, false);
        let zeros = forced_run(&cfg, 0, false);
        for t in 1..=cfg.horizon {
            assert_ne!(ones[t], zeros[t]);
        }
    }

    #[test]
    fn trace_export_has_header_and_rows() {
        let cfg = EnvConfig::default();
        let trace = run_episode(
            &cfg,
            StudentAbility::new(0.0).unwrap(),
            &mut seeded(5),
            |_| Action::new(0.0, 0.0),
            None,
        )
        .unwrap();
        let text = write_trace(&trace.rows);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), cfg.horizon + 2);
        assert!(lines.last().unwrap().starts_with("11,,,,,0,"));
        assert_eq!(trace.designs().len(), cfg.horizon);
    }
}
