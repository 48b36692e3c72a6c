//! Item calibration by joint maximum likelihood, and the item bank that
//! deployment maps requested difficulties onto.
//!
//! The Rasch likelihood only identifies `theta - b`, so the objective adds a
//! small L2 penalty on the abilities to pin the common shift:
//!
//! `J(theta, b) = NLL(theta, b) + l2_anchor * sum_i theta_i^2`

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{nearest_index, Corruption};
use crate::error::{Error, Result};
use crate::irt::{logistic, Dataset, ItemDifficulty, ResponseMatrix};
use crate::nnet::{Adam, AdamConfig};

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub learning_rate: f64,
    /// Full passes over the matrix.
    pub epochs: usize,
    /// Cells per gradient step; `None` is full batch.
    pub batch: Option<usize>,
    pub l2_anchor: f64,
    /// Estimates are clipped to `[-bound, bound]` after every step.
    pub bound: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            batch: None,
            l2_anchor: 1e-3,
            bound: 8.0,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("calibration learning_rate must be finite and > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("calibration epochs must be >= 1".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::Config("calibration batch must be >= 1".into()));
        }
        if !(self.l2_anchor >= 0.0 && self.l2_anchor.is_finite()) {
            return Err(Error::Config("l2_anchor must be finite and >= 0".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Config("calibration bound must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Short content hash used in bank provenance.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::io::sha256_hex(json.as_bytes())[..16].to_string()
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_shapes(matrix: &ResponseMatrix, abilities: &[f64], difficulties: &[f64]) -> Result<()> {
    if abilities.len() != matrix.num_students() || difficulties.len() != matrix.num_items() {
        return Err(Error::Validation(format!(
            "{} abilities and {} difficulties for a {}x{} matrix",
            abilities.len(),
            difficulties.len(),
            matrix.num_students(),
            matrix.num_items()
        )));
    }
    Ok(())
}

/// Bernoulli negative log-likelihood of the whole matrix.
pub fn nll(matrix: &ResponseMatrix, abilities: &[f64], difficulties: &[f64]) -> Result<f64> {
    check_shapes(matrix, abilities, difficulties)?;
    let mut total = 0.0;
    for (i, &theta) in abilities.iter().enumerate() {
        for (&y, &b) in matrix.row(i).iter().zip(difficulties) {
            let z = theta - b;
            total += if y == 1 { softplus(-z) } else { softplus(z) };
        }
    }
    Ok(total)
}

/// Anchored objective `J`.
pub fn objective(matrix: &ResponseMatrix, abilities: &[f64], difficulties: &[f64], l2_anchor: f64) -> Result<f64> {
    let penalty: f64 = abilities.iter().map(|t| t * t).sum();
    Ok(nll(matrix, abilities, difficulties)? + l2_anchor * penalty)
}

/// Gradient of `J` with respect to `(abilities, difficulties)`.
pub fn gradient(
    matrix: &ResponseMatrix,
    abilities: &[f64],
    difficulties: &[f64],
    l2_anchor: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(matrix, abilities, difficulties)?;
    let mut g_theta: Vec<f64> = abilities.iter().map(|t| 2.0 * l2_anchor * t).collect();
    let mut g_b = vec![0.0; difficulties.len()];
    for (i, &theta) in abilities.iter().enumerate() {
        for (j, (&y, &b)) in matrix.row(i).iter().zip(difficulties).enumerate() {
            let r = logistic(theta - b) - f64::from(y);
            g_theta[i] += r;
            g_b[j] -= r;
        }
    }
    Ok((g_theta, g_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub abilities: Vec<f64>,
    pub difficulties: Vec<f64>,
    /// Unpenalized NLL at the returned estimates.
    pub nll: f64,
    /// NLL after each epoch.
    pub nll_trace: Vec<f64>,
}

/// Starting point and fixed mask. A zero or perfect score has no finite MLE,
/// so that student or item is set to the matching bound and left out of the
/// fit. Removing one can make another extreme, so this repeats until stable.
fn extreme_scores(matrix: &ResponseMatrix, bound: f64) -> (Vec<f64>, Vec<bool>) {
    let (ns, ni) = (matrix.num_students(), matrix.num_items());
    let mut x = vec![0.0; ns + ni];
    let mut fixed = vec![false; ns + ni];
    loop {
        // judge students and items against the same free set
        let mut marks = Vec::new();
        for i in (0..ns).filter(|&i| !fixed[i]) {
            let (score, n) = (0..ni)
                .filter(|&j| !fixed[ns + j])
                .fold((0, 0), |(s, n), j| (s + usize::from(matrix.get(i, j)), n + 1));
            if n > 0 && (score == 0 || score == n) {
                marks.push((i, if score == 0 { -bound } else { bound }));
            }
        }
        for j in (0..ni).filter(|&j| !fixed[ns + j]) {
            let (score, n) = (0..ns)
                .filter(|&i| !fixed[i])
                .fold((0, 0), |(s, n), i| (s + usize::from(matrix.get(i, j)), n + 1));
            if n > 0 && (score == 0 || score == n) {
                // nobody solved it: hard item
                marks.push((ns + j, if score == 0 { bound } else { -bound }));
            }
        }
        if marks.is_empty() {
            return (x, fixed);
        }
        for (k, v) in marks {
            x[k] = v;
            fixed[k] = true;
        }
    }
}

/// Among free parameters the fitted likelihood only sees differences, so the
/// anchored optimum has zero mean free ability. Adam crawls along that weakly
/// curved direction; this moves there exactly.
fn recenter(x: &mut [f64], ns: usize, fixed: &[bool]) {
    let free = (0..ns).filter(|&i| !fixed[i]).count();
    if free == 0 {
        return;
    }
    let mean = (0..ns).filter(|&i| !fixed[i]).map(|i| x[i]).sum::<f64>() / free as f64;
    for (v, &f) in x.iter_mut().zip(fixed) {
        if !f {
            *v -= mean;
        }
    }
}

/// Joint MLE of abilities and difficulties.
///
/// Adam on the anchored objective, starting from zero. Students and items
/// with extreme scores are reported at the bound and their cells excluded;
/// everything else is clipped to the bound after each step. Full batch by default;
/// with `batch = Some(k)` each step uses `k` cells sampled with replacement,
/// rescaled to the full-matrix gradient.
pub fn fit_mle(matrix: &ResponseMatrix, config: &CalibrationConfig) -> Result<Calibration> {
    config.validate()?;
    let (ns, ni) = (matrix.num_students(), matrix.num_items());
    let cells = ns * ni;
    let first = matrix.cells()[0];
    if matrix.cells().iter().all(|&y| y == first) {
        log::warn!(
            "every response is {first}; estimates will saturate at +/-{}",
            config.bound
        );
    }
    let (x0, fixed) = extreme_scores(matrix, config.bound);
    let mut x = x0;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        x.len(),
    );
    let mut rng = crate::rng::seeded(config.seed);
    let batch = config.batch.filter(|&k| k < cells);
    let steps_per_epoch = batch.map_or(1, |k| cells.div_ceil(k));
    let mut nll_trace = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; ns + ni];

    for _ in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            match batch {
                None => {
                    for (g, t) in grad[..ns].iter_mut().zip(&x[..ns]) {
                        *g = 2.0 * config.l2_anchor * t;
                    }
                    grad[ns..].fill(0.0);
                    for i in (0..ns).filter(|&i| !fixed[i]) {
                        for (j, &y) in matrix.row(i).iter().enumerate() {
                            if !fixed[ns + j] {
                                let r = logistic(x[i] - x[ns + j]) - f64::from(y);
                                grad[i] += r;
                                grad[ns + j] -= r;
                            }
                        }
                    }
                }
                Some(k) => {
                    let scale = cells as f64 / k as f64;
                    for (g, t) in grad[..ns].iter_mut().zip(&x[..ns]) {
                        *g = 2.0 * config.l2_anchor * t;
                    }
                    grad[ns..].fill(0.0);
                    for _ in 0..k {
                        let c = rng.random_range(0..cells);
                        let (i, j) = (c / ni, c % ni);
                        if fixed[i] || fixed[ns + j] {
                            continue;
                        }
                        let r = scale * (logistic(x[i] - x[ns + j]) - f64::from(matrix.get(i, j)));
                        grad[i] += r;
                        grad[ns + j] -= r;
                    }
                }
            }
            for (g, &f) in grad.iter_mut().zip(&fixed) {
                if f {
                    *g = 0.0;
                }
            }
            adam.step(&mut x, &grad);
            if config.l2_anchor > 0.0 {
                recenter(&mut x, ns, &fixed);
            }
            for v in &mut x {
                *v = v.clamp(-config.bound, config.bound);
            }
        }
        nll_trace.push(nll(matrix, &x[..ns], &x[ns..])?);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            index: i,
            name: "calibration estimate",
        });
    }
    let difficulties = x.split_off(ns);
    Ok(Calibration {
        nll: *nll_trace.last().expect("epochs >= 1"),
        abilities: x,
        difficulties,
        nll_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankSource {
    True,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Identifies the response data, e.g. a dataset file hash.
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// The finite set of administrable items, identified by difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBank {
    pub schema_version: u32,
    pub source: BankSource,
    pub provenance: Provenance,
    pub difficulties: Vec<ItemDifficulty>,
}

impl ItemBank {
    pub fn new(difficulties: Vec<ItemDifficulty>, source: BankSource, provenance: Provenance) -> Result<Self> {
        if difficulties.is_empty() {
            return Err(Error::Validation("item bank is empty".into()));
        }
        Ok(Self {
            schema_version: BANK_SCHEMA_VERSION,
            source,
            provenance,
            difficulties,
        })
    }

    pub fn from_values(values: &[f64], source: BankSource, provenance: Provenance) -> Result<Self> {
        let difficulties = values.iter().map(|&v| ItemDifficulty::new(v)).collect::<Result<_>>()?;
        Self::new(difficulties, source, provenance)
    }

    /// Bank of the dataset's true difficulties.
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Self::new(
            dataset.difficulties.clone(),
            BankSource::True,
            Provenance {
                dataset: format!("synthetic-seed-{}", dataset.seed),
                config_hash: None,
            },
        )
    }

    /// Calibrates `matrix` and wraps the estimated difficulties.
    pub fn calibrate(matrix: &ResponseMatrix, config: &CalibrationConfig, dataset_id: &str) -> Result<Self> {
        let fit = fit_mle(matrix, config)?;
        Self::from_values(
            &fit.difficulties,
            BankSource::Estimated,
            Provenance {
                dataset: dataset_id.to_string(),
                config_hash: Some(config.hash()),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.difficulties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.difficulties.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.difficulties.iter().map(|b| b.value()).collect()
    }

    /// NearestItem corruption over this bank. `response_difficulties` are the
    /// true difficulties behind an estimated bank, aligned by index.
    pub fn corruption(&self, response_difficulties: Option<Vec<f64>>) -> Result<Corruption> {
        if let Some(r) = &response_difficulties {
            if r.len() != self.len() {
                return Err(Error::Validation(format!(
                    "{} response difficulties for a bank of {}",
                    r.len(),
                    self.len()
                )));
            }
        }
        Ok(Corruption::NearestItem {
            bank: self.values(),
            response_difficulties,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: Self = serde_json::from_str(text).map_err(|e| Error::parse("item bank", e))?;
        if bank.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported item bank schema_version {}",
                bank.schema_version
            )));
        }
        Self::new(bank.difficulties, bank.source, bank.provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("item bank not found: {}", path.display())));
        }
        Self::from_json(&crate::io::read_text(path)?)
    }
}

/// Closest bank item to `requested`; ties go to the smaller difficulty.
pub fn nearest_item(requested: f64, bank: &ItemBank) -> Result<(usize, ItemDifficulty)> {
    if !requested.is_finite() {
        return Err(Error::Domain(format!("requested difficulty {requested} is not finite")));
    }
    let values = bank.values();
    let i = nearest_index(&values, requested).ok_or_else(|| Error::Validation("item bank is empty".into()))?;
    Ok((i, bank.difficulties[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(values: &[f64]) -> ItemBank {
        ItemBank::from_values(
            values,
            BankSource::True,
            Provenance {
                dataset: "test".into(),
                config_hash: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn nearest_item_examples() {
        let b = bank(&[-2.0, 0.0, 2.0]);
        assert_eq!(nearest_item(0.9, &b).unwrap().0, 1);
        let b = bank(&[1.0, -1.0]);
        let (i, d) = nearest_item(0.0, &b).unwrap();
        assert_eq!((i, d.value()), (1, -1.0));
        let b = bank(&[-5.5, 3.0, 0.1]);
        assert_eq!(nearest_item(-100.0, &b).unwrap().0, 0);
        assert!(matches!(nearest_item(f64::NAN, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn easier_item_gets_lower_difficulty() {
        let m = ResponseMatrix::from_rows(&[vec![1, 0], vec![1, 0]]).unwrap();
        let fit = fit_mle(&m, &CalibrationConfig::default()).unwrap();
        assert!(fit.difficulties[0] < fit.difficulties[1]);
    }

    #[test]
    fn large_anchor_pins_abilities_at_zero() {
        // narrow prior so no student has a perfect or zero score
        let prior = crate::irt::PriorConfig {
            ability_std: 0.3,
            difficulty_std: 0.3,
            ..Default::default()
        };
        let d = Dataset::generate(prior, 40, 10, 3).unwrap();
        let cfg = CalibrationConfig {
            l2_anchor: 1e6,
            ..CalibrationConfig::default()
        };
        let fit = fit_mle(&d.responses, &cfg).unwrap();
        assert!(
            fit.abilities.iter().all(|t| t.abs() < 1e-3),
            "{:?}",
            &fit.abilities[..5]
        );
    }

    #[test]
    fn constant_matrix_saturates_at_bound() {
        let m = ResponseMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        let cfg = CalibrationConfig {
            l2_anchor: 0.0,
            ..CalibrationConfig::default()
        };
        let fit = fit_mle(&m, &cfg).unwrap();
        assert!(fit.abilities.iter().all(|&t| t == 8.0));
        assert!(fit.difficulties.iter().all(|&b| b == -8.0));
    }

    #[test]
    fn minibatch_fit_tracks_full_batch() {
        let d = Dataset::generate(Default::default(), 100, 20, 5).unwrap();
        let full = fit_mle(&d.responses, &CalibrationConfig::default()).unwrap();
        let mb = fit_mle(
            &d.responses,
            &CalibrationConfig {
                batch: Some(500),
                learning_rate: 0.05,
                epochs: 100,
                ..CalibrationConfig::default()
            },
        )
        .unwrap();
        let rmse = (full
            .difficulties
            .iter()
            .zip(&mb.difficulties)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 20.0)
            .sqrt();
        assert!(rmse < 0.25, "rmse {rmse}");
    }

    #[test]
    fn bank_round_trip_and_validation() {
        let b = bank(&[-1.25, 0.1, 1.0 / 3.0]);
        let back = ItemBank::from_json(&b.to_json()).unwrap();
        assert_eq!(back, b);
        assert!(ItemBank::from_values(&[], BankSource::True, b.provenance.clone()).is_err());
        assert!(ItemBank::load("/nonexistent/bank.json")
            .unwrap_err()
            .to_string()
            .contains("/nonexistent/bank.json"));
    }
}
