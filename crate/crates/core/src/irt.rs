//! One-parameter logistic (Rasch) response model, priors and synthetic data.
//!
//! Abilities and difficulties live on the same logit scale. A student with
//! ability `theta` answers an item of difficulty `b` correctly with
//! probability `1 / (1 + exp(-(theta - b)))`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Latent student ability on the logit scale. Always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StudentAbility(f64);

/// Item difficulty on the logit scale. Always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ItemDifficulty(f64);

macro_rules! finite_newtype {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(value: f64) -> Result<Self> {
                if value.is_finite() {
                    Ok(Self(value))
                } else {
                    Err(Error::Domain(format!("{} must be finite, got {value}", $what)))
                }
            }

            pub fn value(self) -> f64 {
                self.0
            }
        }

        impl TryFrom<f64> for $ty {
            type Error = Error;

            fn try_from(value: f64) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$ty> for f64 {
            fn from(v: $ty) -> f64 {
                v.0
            }
        }
    };
}

finite_newtype!(StudentAbility, "ability");
finite_newtype!(ItemDifficulty, "difficulty");

/// Logistic function in branch form; never evaluates `exp` of a positive
/// argument, so it cannot overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability of a correct response under the Rasch model.
pub fn success_probability(theta: StudentAbility, b: ItemDifficulty) -> f64 {
    logistic(theta.0 - b.0)
}

/// Draws a Bernoulli response: 1 with probability `success_probability(theta, b)`.
///
/// Consumes exactly one uniform draw from `rng`.
pub fn sample_response<R: Rng + ?Sized>(theta: StudentAbility, b: ItemDifficulty, rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    u8::from(u < success_probability(theta, b))
}

/// Fisher information `p (1 - p)` of one response about `theta`.
///
/// Peaks at 0.25 when `b == theta` (the sigmoid midpoint).
pub fn item_information(theta: StudentAbility, b: ItemDifficulty) -> f64 {
    let p = success_probability(theta, b);
    p * (1.0 - p)
}

/// Independent normal priors for abilities and difficulties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub ability_mean: f64,
    pub ability_std: f64,
    pub difficulty_mean: f64,
    pub difficulty_std: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            ability_mean: 0.0,
            ability_std: 2.0,
            difficulty_mean: 0.0,
            difficulty_std: 2.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.ability_mean) && ok(self.difficulty_mean)) {
            return Err(Error::Config("prior means must be finite".into()));
        }
        if !(ok(self.ability_std) && self.ability_std > 0.0) {
            return Err(Error::Config(format!(
                "ability_std must be > 0, got {}",
                self.ability_std
            )));
        }
        if !(ok(self.difficulty_std) && self.difficulty_std > 0.0) {
            return Err(Error::Config(format!(
                "difficulty_std must be > 0, got {}",
                self.difficulty_std
            )));
        }
        Ok(())
    }

    pub fn sample_ability<R: Rng + ?Sized>(&self, rng: &mut R) -> StudentAbility {
        StudentAbility(draw_normal(self.ability_mean, self.ability_std, rng))
    }

    pub fn sample_difficulty<R: Rng + ?Sized>(&self, rng: &mut R) -> ItemDifficulty {
        ItemDifficulty(draw_normal(self.difficulty_mean, self.difficulty_std, rng))
    }
}

fn draw_normal<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    // validated configs only; std > 0 and finite
    Normal::new(mean, std).expect("validated prior").sample(rng)
}

/// Dense students x items matrix of binary outcomes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    num_students: usize,
    num_items: usize,
    outcomes: Vec<u8>,
}

impl ResponseMatrix {
    pub fn new(num_students: usize, num_items: usize, outcomes: Vec<u8>) -> Result<Self> {
        if outcomes.len() != num_students * num_items {
            return Err(Error::Validation(format!(
                "response matrix has {} cells, expected {num_students}x{num_items}",
                outcomes.len()
            )));
        }
        if let Some(bad) = outcomes.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("response outcome {bad} is not 0 or 1")));
        }
        Ok(Self {
            num_students,
            num_items,
            outcomes,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let num_students = rows.len();
        let num_items = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_items) {
            return Err(Error::Validation("ragged response matrix".into()));
        }
        Self::new(num_students, num_items, rows.concat())
    }

    pub fn num_students(&self) -> usize {
        self.num_students
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn get(&self, student: usize, item: usize) -> u8 {
        self.outcomes[student * self.num_items + item]
    }

    pub fn row(&self, student: usize) -> &[u8] {
        &self.outcomes[student * self.num_items..(student + 1) * self.num_items]
    }

    pub fn cells(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.num_students).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mean(&self) -> f64 {
        let total: usize = self.outcomes.iter().map(|&y| y as usize).sum();
        total as f64 / self.outcomes.len().max(1) as f64
    }
}

/// Draws abilities and difficulties from `prior` and simulates every cell.
///
/// Abilities are drawn first, then difficulties, then cells in row-major
/// order, all from the same `rng`.
pub fn generate_dataset<R: Rng + ?Sized>(
    prior: &PriorConfig,
    num_students: usize,
    num_items: usize,
    rng: &mut R,
) -> Result<(Vec<StudentAbility>, Vec<ItemDifficulty>, ResponseMatrix)> {
    if num_students == 0 || num_items == 0 {
        return Err(Error::Domain(format!(
            "dataset needs at least one student and one item, got {num_students}x{num_items}"
        )));
    }
    prior.validate()?;
    let abilities: Vec<_> = (0..num_students).map(|_| prior.sample_ability(rng)).collect();
    let difficulties: Vec<_> = (0..num_items).map(|_| prior.sample_difficulty(rng)).collect();
    let matrix = simulate_responses(&abilities, &difficulties, rng)?;
    Ok((abilities, difficulties, matrix))
}

/// Simulates a response matrix for fixed parameters.
pub fn simulate_responses<R: Rng + ?Sized>(
    abilities: &[StudentAbility],
    difficulties: &[ItemDifficulty],
    rng: &mut R,
) -> Result<ResponseMatrix> {
    let mut outcomes = Vec::with_capacity(abilities.len() * difficulties.len());
    for &theta in abilities {
        for &b in difficulties {
            outcomes.push(sample_response(theta, b, rng));
        }
    }
    ResponseMatrix::new(abilities.len(), difficulties.len(), outcomes)
}

/// Self-describing synthetic dataset: generating prior and seed, true
/// parameters, and the simulated response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub prior: PriorConfig,
    pub abilities: Vec<StudentAbility>,
    pub difficulties: Vec<ItemDifficulty>,
    pub responses: ResponseMatrix,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    seed: u64,
    prior: PriorConfig,
    abilities: Vec<StudentAbility>,
    difficulties: Vec<ItemDifficulty>,
    outcomes: Vec<Vec<u8>>,
}

impl Dataset {
    pub fn generate(prior: PriorConfig, num_students: usize, num_items: usize, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        let (abilities, difficulties, responses) = generate_dataset(&prior, num_students, num_items, &mut rng)?;
        Ok(Self {
            seed,
            prior,
            abilities,
            difficulties,
            responses,
        })
    }

    pub fn difficulty_values(&self) -> Vec<f64> {
        self.difficulties.iter().map(|b| b.value()).collect()
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            schema_version: DATASET_SCHEMA_VERSION,
            seed: self.seed,
            prior: self.prior,
            abilities: self.abilities.clone(),
            difficulties: self.difficulties.clone(),
            outcomes: self.responses.rows(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::parse("dataset", e))?;
        if file.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset schema_version {}",
                file.schema_version
            )));
        }
        let responses = ResponseMatrix::from_rows(&file.outcomes)?;
        if responses.num_students() != file.abilities.len() || responses.num_items() != file.difficulties.len() {
            return Err(Error::Validation(
                "outcome matrix shape does not match parameter counts".into(),
            ));
        }
        file.prior.validate()?;
        Ok(Self {
            seed: file.seed,
            prior: file.prior,
            abilities: file.abilities,
            difficulties: file.difficulties,
            responses,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn ability(v: f64) -> StudentAbility {
        StudentAbility::new(v).unwrap()
    }

    fn difficulty(v: f64) -> ItemDifficulty {
        ItemDifficulty::new(v).unwrap()
    }

    #[test]
    fn probability_examples() {
        assert_eq!(success_probability(ability(0.0), difficulty(0.0)), 0.5);
        let p = success_probability(ability(2.0), difficulty(0.0));
        assert!((p - 0.880_797_077_977_882_3).abs() < 1e-12);
        for v in [-3.7, 0.0, 1.25, 40.0] {
            assert_eq!(success_probability(ability(v), difficulty(v)), 0.5);
        }
    }

    #[test]
    fn logistic_is_stable_for_large_arguments() {
        assert_eq!(logistic(800.0), 1.0);
        assert_eq!(logistic(-800.0), 0.0);
        assert!(logistic(-35.0) > 0.0);
        assert!(logistic(35.0) < 1.0);
    }

    #[test]
    fn non_finite_parameters_are_domain_errors() {
        assert!(matches!(StudentAbility::new(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(ItemDifficulty::new(f64::INFINITY), Err(Error::Domain(_))));
        assert!(serde_json::from_str::<StudentAbility>("1e999").is_err());
    }

    #[test]
    fn saturated_responses_are_always_correct() {
        let mut rng = seeded(1);
        assert!((0..10_000).all(|_| sample_response(ability(10.0), difficulty(-10.0), &mut rng) == 1));
    }

    #[test]
    fn response_frequencies_match_model() {
        let mut rng = seeded(2);
        for (theta, expected) in [(0.0, 0.5), (1.0, 0.731_058_578_630_004_9)] {
            let n = 100_000;
            let hits: u32 = (0..n)
                .map(|_| sample_response(ability(theta), difficulty(0.0), &mut rng) as u32)
                .sum();
            let mean = hits as f64 / n as f64;
            assert!((mean - expected).abs() < 0.005, "theta {theta}: {mean}");
        }
    }

    #[test]
    fn information_examples() {
        assert_eq!(item_information(ability(0.0), difficulty(0.0)), 0.25);
        // p = 1/(1+e^4) = 0.017986..., p(1-p) = 0.017662...
        let p = 1.0 / (1.0 + 4f64.exp());
        let expected = p * (1.0 - p);
        assert!((expected - 0.017_662_706).abs() < 1e-8);
        for b in [-4.0, 4.0] {
            assert!((item_information(ability(0.0), difficulty(b)) - expected).abs() < 1e-15);
        }
        let best = (-3000..=3000)
            .map(|k| k as f64 * 1e-3)
            .max_by(|&a, &c| {
                let ia = item_information(ability(1.3), difficulty(a));
                let ic = item_information(ability(1.3), difficulty(c));
                ia.partial_cmp(&ic).unwrap()
            })
            .unwrap();
        assert!((best - 1.3).abs() < 1e-9);
    }

    #[test]
    fn generate_dataset_shapes_and_errors() {
        let mut rng = seeded(3);
        let (a, b, m) = generate_dataset(&PriorConfig::default(), 200, 50, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (200, 50));
        assert_eq!((m.num_students(), m.num_items()), (200, 50));
        assert!(matches!(
            generate_dataset(&PriorConfig::default(), 0, 5, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            generate_dataset(&PriorConfig::default(), 5, 0, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn forced_midpoint_cell_is_fair_coin() {
        let mut rng = seeded(4);
        let n = 20_000;
        let ones: u32 = (0..n)
            .map(|_| {
                simulate_responses(&[ability(0.0)], &[difficulty(0.0)], &mut rng)
                    .unwrap()
                    .get(0, 0) as u32
            })
            .sum();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.015);
    }

    #[test]
    fn degenerate_prior_gives_half_correct() {
        let prior = PriorConfig {
            ability_std: 1e-12,
            difficulty_std: 1e-12,
            ..PriorConfig::default()
        };
        let mut rng = seeded(5);
        let (_, _, m) = generate_dataset(&prior, 200, 50, &mut rng).unwrap();
        assert!((m.mean() - 0.5).abs() < 0.01, "{}", m.mean());
    }

    #[test]
    fn dataset_is_reproducible_and_round_trips() {
        let a = Dataset::generate(PriorConfig::default(), 30, 7, 11).unwrap();
        let b = Dataset::generate(PriorConfig::default(), 30, 7, 11).unwrap();
        assert_eq!(a, b);
        let text = a.to_json();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn malformed_matrices_rejected() {
        assert!(ResponseMatrix::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(ResponseMatrix::new(2, 2, vec![0, 1, 1]).is_err());
        assert!(ResponseMatrix::from_rows(&[vec![0, 1], vec![1]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reflection_symmetry(theta in -20.0f64..20.0, b in -20.0f64..20.0) {
            let p = success_probability(ability(theta), difficulty(b));
            let q = success_probability(ability(-theta), difficulty(-b));
            prop_assert!((p - (1.0 - q)).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_ability(t1 in -15.0f64..15.0, gap in 1e-3f64..5.0, b in -15.0f64..15.0) {
            let lo = success_probability(ability(t1), difficulty(b));
            let hi = success_probability(ability(t1 + gap), difficulty(b));
            prop_assert!(lo < hi);
            let easier = success_probability(ability(t1), difficulty(b - gap));
            prop_assert!(easier > lo);
        }

        #[test]
        fn information_bounded_by_quarter(theta in -10.0f64..10.0, b in -10.0f64..10.0) {
            let info = item_information(ability(theta), difficulty(b));
            prop_assert!(info <= 0.25 + 1e-12);
            if (theta - b).abs() > 1e-5 {
                prop_assert!(info < 0.25 - 1e-12);
            }
        }
    }
}
