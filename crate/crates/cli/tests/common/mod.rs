#![allow(dead_code)]

use std::path::PathBuf;

use adoirt::calibration::{BankSource, ItemBank, Provenance};
use adoirt::env::EnvConfig;
use adoirt::nnet::{Checkpoint, NetworkConfig, PolicyParams};
use adoirt::rng;
use adoirt_cli::session::{Deployment, EventStore, SessionManager};

pub const HORIZON: usize = 10;

/// Small untrained policy. Output layers start at zero, so every weight
/// gets a fixed deterministic nudge to make actions depend on history.
pub fn fixture_checkpoint(conceal: bool) -> Checkpoint {
    let net = NetworkConfig {
        encoder_widths: vec![8, 8],
        pool_width: 8,
        head_width: 8,
        init_log_std: -0.5,
    };
    let mut p = PolicyParams::init(net, &mut rng::seeded(5)).unwrap();
    for (i, v) in p.flat_mut().iter_mut().enumerate() {
        *v += 0.3 * (0.7 * i as f64).sin();
    }
    let env = EnvConfig {
        horizon: HORIZON,
        conceal_outcomes: conceal,
        ..EnvConfig::default()
    };
    Checkpoint::new(&p, env, serde_json::json!({}), 5, 0)
}

pub fn fixture_bank() -> ItemBank {
    let values: Vec<f64> = (0..25).map(|i| -3.0 + 0.25 * i as f64).collect();
    ItemBank::from_values(
        &values,
        BankSource::True,
        Provenance {
            dataset: "fixture".into(),
            config_hash: None,
        },
    )
    .unwrap()
}

pub fn fixture_deployment() -> Deployment {
    Deployment::new(&fixture_checkpoint(false), fixture_bank(), None).unwrap()
}

pub fn fixture_manager(store: Option<EventStore>) -> SessionManager {
    SessionManager::new(fixture_deployment(), store).unwrap()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}
